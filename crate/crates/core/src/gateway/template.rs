use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// A system/user prompt pair with `{placeholder}` slots.
///
/// Placeholders are `{` + `[A-Za-z_][A-Za-z0-9_]*` + `}`. `{{` and `}}` render as
/// literal braces; any other brace is copied through unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub system_text: String,
    pub user_text: String,
    /// Sorted and deduplicated; exactly the slots found in the two texts.
    pub required_placeholders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut b = s.bytes();
    matches!(b.next(), Some(c) if c == b'_' || c.is_ascii_alphabetic())
        && b.all(|c| c == b'_' || c.is_ascii_alphanumeric())
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push(Piece::Text(&text[start..i]));
                out.push(Piece::Brace('{'));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push(Piece::Text(&text[start..i]));
                out.push(Piece::Brace('}'));
                i += 2;
                start = i;
            }
            b'{' => {
                let close = text[i + 1..].find('}').map(|j| i + 1 + j);
                match close {
                    Some(end) if is_ident(&text[i + 1..end]) => {
                        out.push(Piece::Text(&text[start..i]));
                        out.push(Piece::Slot(&text[i + 1..end]));
                        i = end + 1;
                        start = i;
                    }
                    _ => i += 1,
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&text[start..]));
    out
}

/// Placeholder names occurring in `text`, in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in pieces(text) {
        if let Piece::Slot(name) = p {
            if seen.insert(name) {
                out.push(name.to_string());
            }
        }
    }
    out
}

fn substitute(text: &str, bindings: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(text.len());
    for p in pieces(text) {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Brace(c) => out.push(c),
            Piece::Slot(name) => out.push_str(&bindings[name]),
        }
    }
    out
}

impl PromptTemplate {
    /// Builds a template, deriving `required_placeholders` from both texts.
    pub fn new(
        template_id: impl Into<String>,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Self {
        let system_text = system_text.into();
        let user_text = user_text.into();
        let mut names: BTreeSet<String> = placeholders(&system_text).into_iter().collect();
        names.extend(placeholders(&user_text));
        Self {
            template_id: template_id.into(),
            system_text,
            user_text,
            required_placeholders: names.into_iter().collect(),
        }
    }

    /// Substitutes every slot. Bindings must cover the placeholders exactly.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<RenderedPrompt, GatewayError> {
        for name in &self.required_placeholders {
            if !bindings.contains_key(name) {
                return Err(GatewayError::MissingBinding(name.clone()));
            }
        }
        for key in bindings.keys() {
            if self.required_placeholders.binary_search(key).is_err() {
                return Err(GatewayError::UnknownPlaceholder(key.clone()));
            }
        }
        Ok(RenderedPrompt {
            system_text: substitute(&self.system_text, bindings),
            user_text: substitute(&self.user_text, bindings),
        })
    }
}

pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<RenderedPrompt, GatewayError> {
    template.render(bindings)
}

/// The prompt templates shipped with the crate.
pub mod builtin {
    use super::PromptTemplate;

    pub const RECOMMENDATION_SYSTEM: &str = include_str!("../../prompts/recommendation.system.md");
    pub const RECOMMENDATION_USER: &str = include_str!("../../prompts/recommendation.user.md");
    pub const ATTRIBUTION_USER: &str = include_str!("../../prompts/attribution.user.md");
    /// Bound into the attribution prompt's `ground_truth_context` slot in oracle mode.
    pub const ATTRIBUTION_GROUND_TRUTH: &str = include_str!("../../prompts/attribution.ground_truth.md");
    pub const EVOLUTION_EDIT_SYSTEM: &str = include_str!("../../prompts/evolution_edit.system.md");
    pub const EVOLUTION_EDIT_USER: &str = include_str!("../../prompts/evolution_edit.user.md");
    pub const EVOLUTION_CREATE_SYSTEM: &str = include_str!("../../prompts/evolution_create.system.md");
    pub const EVOLUTION_CREATE_USER: &str = include_str!("../../prompts/evolution_create.user.md");

    pub fn recommendation() -> PromptTemplate {
        PromptTemplate::new("recommendation", RECOMMENDATION_SYSTEM, RECOMMENDATION_USER)
    }

    /// Resume-mode prompt: appended to the solver session, so there is no system text.
    pub fn attribution() -> PromptTemplate {
        PromptTemplate::new("attribution", "", ATTRIBUTION_USER)
    }

    pub fn ground_truth_context() -> PromptTemplate {
        PromptTemplate::new("attribution-ground-truth", "", ATTRIBUTION_GROUND_TRUTH)
    }

    pub fn evolution_edit() -> PromptTemplate {
        PromptTemplate::new("evolution-edit", EVOLUTION_EDIT_SYSTEM, EVOLUTION_EDIT_USER)
    }

    pub fn evolution_create() -> PromptTemplate {
        PromptTemplate::new("evolution-create", EVOLUTION_CREATE_SYSTEM, EVOLUTION_CREATE_USER)
    }
}
