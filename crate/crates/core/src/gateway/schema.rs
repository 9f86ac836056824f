use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use super::GatewayError;

pub const RECOMMENDATION_SCHEMA: &str = "recommendation";
pub const ATTRIBUTION_SCHEMA: &str = "attribution";
pub const EVOLUTION_SCHEMA: &str = "evolution";

/// Raw bytes of the shipped schema documents, for external harnesses.
pub mod documents {
    pub const RECOMMENDATION: &str = include_str!("../../schemas/recommendation.schema.json");
    pub const ATTRIBUTION: &str = include_str!("../../schemas/attribution.schema.json");
    pub const EVOLUTION: &str = include_str!("../../schemas/evolution.schema.json");
}

struct Entry {
    document: Value,
    validator: jsonschema::Validator,
}

/// Output schemas by id, compiled once.
#[derive(Clone)]
pub struct SchemaRegistry {
    entries: Arc<BTreeMap<String, Arc<Entry>>>,
}

impl std::fmt::Debug for SchemaRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.entries.keys()).finish()
    }
}

impl Default for SchemaRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SchemaRegistry {
    pub fn empty() -> Self {
        Self {
            entries: Arc::new(BTreeMap::new()),
        }
    }

    /// The recommendation, attribution, and evolution schemas. Compiled once per process.
    pub fn builtin() -> Self {
        static BUILTIN: std::sync::OnceLock<SchemaRegistry> = std::sync::OnceLock::new();
        BUILTIN.get_or_init(Self::compile_builtin).clone()
    }

    fn compile_builtin() -> Self {
        let mut reg = Self::empty();
        for (id, text) in [
            (RECOMMENDATION_SCHEMA, documents::RECOMMENDATION),
            (ATTRIBUTION_SCHEMA, documents::ATTRIBUTION),
            (EVOLUTION_SCHEMA, documents::EVOLUTION),
        ] {
            let doc: Value = serde_json::from_str(text).expect("shipped schema is valid JSON");
            reg.register(id, doc).expect("shipped schema compiles");
        }
        reg
    }

    pub fn register(&mut self, id: impl Into<String>, document: Value) -> Result<(), GatewayError> {
        let id = id.into();
        let validator = jsonschema::validator_for(&document)
            .map_err(|e| GatewayError::InvalidSchema(format!("{id}: {e}")))?;
        Arc::make_mut(&mut self.entries).insert(id, Arc::new(Entry { document, validator }));
        Ok(())
    }

    pub fn document(&self, id: &str) -> Result<&Value, GatewayError> {
        self.entries
            .get(id)
            .map(|e| &e.document)
            .ok_or_else(|| GatewayError::UnknownSchema(id.to_string()))
    }

    /// Every violation as `<instance path>: <message>`. Empty means valid.
    pub fn violations(&self, id: &str, instance: &Value) -> Result<Vec<String>, GatewayError> {
        let entry = self
            .entries
            .get(id)
            .ok_or_else(|| GatewayError::UnknownSchema(id.to_string()))?;
        Ok(entry
            .validator
            .iter_errors(instance)
            .map(|e| {
                let path = e.instance_path().to_string();
                format!("{}: {e}", if path.is_empty() { "/" } else { &path })
            })
            .collect())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn action(t: &str, summary: Value, path: Value) -> Value {
        json!({"action_type": t, "rationale": "r", "summary": summary, "skill_dir_path": path})
    }

    #[test]
    fn recommendation_rules() {
        let reg = SchemaRegistry::builtin();
        let ok = json!({"skill_names": [], "optimized_context": "no relevant skill found after search"});
        assert!(reg.violations(RECOMMENDATION_SCHEMA, &ok).unwrap().is_empty());
        for bad in [
            json!({"skill_names": []}),
            json!({"skill_names": [], "optimized_context": ""}),
            json!({"skill_names": [""], "optimized_context": "x"}),
            json!({"skill_names": [], "optimized_context": "x", "extra": 1}),
            json!({"skill_names": "a", "optimized_context": "x"}),
        ] {
            assert!(!reg.violations(RECOMMENDATION_SCHEMA, &bad).unwrap().is_empty(), "{bad}");
        }
    }

    #[test]
    fn evolution_action_rules() {
        let reg = SchemaRegistry::builtin();
        let wrap = |a: Vec<Value>| json!({ "actions": a });
        let valid = [
            vec![action("knowledge_addition", json!("added fallback"), Value::Null)],
            vec![action("create_skill", Value::Null, json!("/w/create/x"))],
            vec![action("skip", Value::Null, Value::Null)],
        ];
        for v in valid {
            let doc = wrap(v);
            assert!(reg.violations(EVOLUTION_SCHEMA, &doc).unwrap().is_empty(), "{doc}");
        }
        let invalid = [
            vec![action("error_fix", Value::Null, Value::Null)],
            vec![action("error_fix", json!(""), Value::Null)],
            vec![action("error_fix", json!("s"), json!("/p"))],
            vec![action("create_skill", json!("s"), json!("/p"))],
            vec![action("create_skill", Value::Null, Value::Null)],
            vec![action("skip", json!("s"), Value::Null)],
            vec![
                action("skip", Value::Null, Value::Null),
                action("create_skill", Value::Null, json!("/p")),
            ],
            vec![],
        ];
        for v in invalid {
            let doc = wrap(v);
            assert!(!reg.violations(EVOLUTION_SCHEMA, &doc).unwrap().is_empty(), "{doc}");
        }
    }

    #[test]
    fn unknown_schema() {
        assert!(matches!(
            SchemaRegistry::builtin().violations("nope", &Value::Null),
            Err(GatewayError::UnknownSchema(_))
        ));
    }
}
