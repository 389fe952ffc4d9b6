//! Prompt templates with `{name}` placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const CLARIFY: &str = "clarify";
pub const FINALIZE: &str = "finalize";
pub const LOCALIZE: &str = "localize";
pub const ANSWER_PLAIN: &str = "answer_plain";
pub const ANSWER_WITH_REFERENCE: &str = "answer_with_reference";
pub const FEEDBACK_CLASSIFY: &str = "feedback_classify";
pub const DISTILL: &str = "distill";

pub const ALL: [&str; 7] = [
    CLARIFY,
    FINALIZE,
    LOCALIZE,
    ANSWER_PLAIN,
    ANSWER_WITH_REFERENCE,
    FEEDBACK_CLASSIFY,
    DISTILL,
];

const BUILTIN: [(&str, &str); 7] = [
    (CLARIFY, include_str!("../../templates/clarify")),
    (FINALIZE, include_str!("../../templates/finalize")),
    (LOCALIZE, include_str!("../../templates/localize")),
    (ANSWER_PLAIN, include_str!("../../templates/answer_plain")),
    (ANSWER_WITH_REFERENCE, include_str!("../../templates/answer_with_reference")),
    (FEEDBACK_CLASSIFY, include_str!("../../templates/feedback_classify")),
    (DISTILL, include_str!("../../templates/distill")),
];

#[derive(Debug, Clone)]
pub struct Templates {
    texts: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            texts: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Templates {
    /// Built-in templates, overridden by any same-named file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for id in ALL {
            let path = dir.join(id);
            if path.is_file() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::ConfigInvalid {
                    field: "dialogue.templates_dir".into(),
                    reason: format!("{}: {e}", path.display()),
                })?;
                t.texts.insert(id.to_string(), text);
            }
        }
        Ok(t)
    }

    pub fn set(&mut self, id: &str, text: impl Into<String>) {
        self.texts.insert(id.to_string(), text.into());
    }

    pub fn get(&self, id: &str) -> Result<&str> {
        self.texts
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::NotFound(format!("template {id}")))
    }

    /// Substitute every `{name}` whose name is bound; unknown placeholders
    /// are left as written.
    pub fn render(&self, id: &str, bindings: &BTreeMap<String, String>) -> Result<String> {
        let text = self.get(id)?;
        let mut out = String::with_capacity(text.len() + 256);
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if bindings.contains_key(&after[..close]) => {
                    out.push_str(&bindings[&after[..close]]);
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}
