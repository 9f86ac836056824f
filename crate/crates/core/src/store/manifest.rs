use serde::{Deserialize, Serialize};

/// Metadata and body extracted from a package's `SKILL.md`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillManifest {
    pub name: String,
    pub description: String,
    /// Everything after the closing front-matter fence.
    pub raw_body: String,
    pub body_line_count: usize,
}

/// True for lowercase-hyphenated slugs: `[a-z0-9]+(-[a-z0-9]+)*`.
pub fn is_slug(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('-')
        && !s.ends_with('-')
        && !s.contains("--")
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

/// Splits a manifest into its YAML front matter and body.
///
/// The document must open with a `---` line; the block ends at the next line
/// consisting of `---` (or `...`). Returns `(yaml, body)`.
pub(crate) fn split_front_matter(text: &str) -> Result<(&str, &str), String> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().ok_or("manifest is empty")?;
    if first.trim_end() != "---" {
        return Err("manifest does not start with a `---` front-matter fence".into());
    }
    let yaml_start = first.len();
    let mut offset = yaml_start;
    for line in lines {
        let trimmed = line.trim_end();
        if trimmed == "---" || trimmed == "..." {
            let yaml = &text[yaml_start..offset];
            let body = &text[offset + line.len()..];
            return Ok((yaml, body));
        }
        offset += line.len();
    }
    Err("front-matter block is not closed".into())
}

#[derive(Deserialize)]
struct FrontMatter {
    name: Option<serde_yaml::Value>,
    description: Option<serde_yaml::Value>,
}

/// Parses `SKILL.md` text. Errors carry a human-readable reason.
pub(crate) fn parse_manifest(text: &str) -> Result<SkillManifest, String> {
    let (yaml, body) = split_front_matter(text)?;
    let fm: FrontMatter = if yaml.trim().is_empty() {
        FrontMatter {
            name: None,
            description: None,
        }
    } else {
        serde_yaml::from_str(yaml).map_err(|e| format!("front matter is not valid YAML: {e}"))?
    };
    let name = match fm.name {
        Some(serde_yaml::Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(serde_yaml::Value::String(_)) | None | Some(serde_yaml::Value::Null) => {
            return Err("front matter has no `name`".into())
        }
        Some(_) => return Err("`name` must be a string".into()),
    };
    let description = match fm.description {
        None | Some(serde_yaml::Value::Null) => String::new(),
        Some(serde_yaml::Value::String(s)) => s.trim().to_string(),
        Some(_) => return Err("`description` must be a string".into()),
    };
    if body.trim().is_empty() {
        return Err("manifest body is empty".into());
    }
    Ok(SkillManifest {
        name,
        description,
        raw_body: body.to_string(),
        body_line_count: body.lines().count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        for ok in ["a", "demo-skill", "git-web-publish", "x1-2y"] {
            assert!(is_slug(ok), "{ok}");
        }
        for bad in ["", "-a", "a-", "a--b", "Demo", "a_b", "a/b", "a b", "é"] {
            assert!(!is_slug(bad), "{bad}");
        }
    }

    #[test]
    fn parses_name_description_body() {
        let m = parse_manifest(
            "---\nname: demo-skill\ndescription: Does a thing.\nlicense: MIT\n---\n# Demo\n\nStep one.\n",
        )
        .unwrap();
        assert_eq!(m.name, "demo-skill");
        assert_eq!(m.description, "Does a thing.");
        assert_eq!(m.raw_body, "# Demo\n\nStep one.\n");
        assert_eq!(m.body_line_count, 3);
    }

    #[test]
    fn description_is_optional() {
        let m = parse_manifest("---\nname: a\n---\nbody\n").unwrap();
        assert_eq!(m.description, "");
    }

    #[test]
    fn crlf_and_bom() {
        let m = parse_manifest("\u{feff}---\r\nname: a\r\n---\r\nbody\r\n").unwrap();
        assert_eq!(m.name, "a");
        assert_eq!(m.raw_body, "body\r\n");
    }

    #[test]
    fn failures() {
        assert!(parse_manifest("").is_err());
        assert!(parse_manifest("# no front matter\n").is_err());
        assert!(parse_manifest("---\nname: a\nbody never closes\n").is_err());
        assert!(parse_manifest("---\ndescription: x\n---\nbody\n").is_err());
        assert!(parse_manifest("---\nname: [1, 2]\n---\nbody\n").is_err());
        assert!(parse_manifest("---\nname: a\n---\n   \n").is_err());
        assert!(parse_manifest("---\nname: : :\n---\nbody\n").is_err());
    }
}
