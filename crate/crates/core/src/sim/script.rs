use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::RetrievalConfig;

/// One of the three things participants ask about an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Name,
    Color,
    Use,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Name, Attribute::Color, Attribute::Use];

    /// The concise question the clarification loop converges on.
    pub fn canonical_question(self) -> &'static str {
        match self {
            Attribute::Name => "What is the name of this object?",
            Attribute::Color => "What color is this object?",
            Attribute::Use => "What is this object used for?",
        }
    }

    /// How a participant phrases the question when being specific.
    pub fn specific_request(self) -> &'static str {
        match self {
            Attribute::Name => "What is the name of the thing in my hand?",
            Attribute::Color => "What color is the thing in my hand?",
            Attribute::Use => "What is the thing in my hand used for?",
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Attribute::Name => "name",
            Attribute::Color => "color",
            Attribute::Use => "used for",
        }
    }

    /// Which attribute a piece of user or model text is about, if any.
    pub fn detect(text: &str) -> Option<Attribute> {
        let lower = text.to_lowercase();
        Attribute::ALL.into_iter().find(|a| lower.contains(a.keyword()))
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Name => "name",
            Attribute::Color => "color",
            Attribute::Use => "use",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogObject {
    pub id: String,
    pub name: String,
    pub color: String,
    #[serde(rename = "use")]
    pub use_: String,
    /// Tile color of the synthetic image.
    pub rgb: [u8; 3],
}

impl CatalogObject {
    pub fn value(&self, a: Attribute) -> &str {
        match a {
            Attribute::Name => &self.name,
            Attribute::Color => &self.color,
            Attribute::Use => &self.use_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundPolicy {
    /// Probability the base model answers an object question wrongly.
    pub round1_error_rate: f64,
    /// Whether round 2 consults the event store.
    #[serde(default = "yes")]
    pub round2_retrieval: bool,
    /// Probability the updated model answers wrongly.
    pub round3_error_rate: f64,
}

fn yes() -> bool {
    true
}

fn default_attributes() -> Vec<Attribute> {
    Attribute::ALL.to_vec()
}

fn default_fidelity() -> f64 {
    1.0
}

fn default_dim() -> usize {
    64
}

fn default_max_rounds() -> u32 {
    crate::dialogue::DEFAULT_MAX_CLARIFICATION_ROUNDS
}

fn default_base() -> String {
    "base".into()
}

fn default_updated() -> String {
    "v2".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScript {
    pub seed: u64,
    pub participants: u32,
    pub catalog: Vec<CatalogObject>,
    #[serde(default = "default_attributes")]
    pub attributes: Vec<Attribute>,
    pub rounds: RoundPolicy,
    /// Probability the model follows an injected reference instead of its
    /// own belief.
    #[serde(default = "default_fidelity")]
    pub reference_fidelity: f64,
    /// Probability a participant opens with "What is that?" and needs a
    /// clarification question.
    #[serde(default)]
    pub vague_opening_rate: f64,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default = "default_max_rounds")]
    pub max_clarification_rounds: u32,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_base")]
    pub base_model: String,
    #[serde(default = "default_updated")]
    pub updated_model: String,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ScriptInvalid(msg.into())
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be in [0, 1], got {p}")))
    }
}

impl SimScript {
    pub fn from_yaml(text: &str) -> Result<Self> {
        let s: SimScript = serde_yaml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.catalog.is_empty() {
            return Err(invalid("catalog is empty"));
        }
        let mut ids = BTreeSet::new();
        for o in &self.catalog {
            if o.id.trim().is_empty() || o.name.trim().is_empty() || o.color.trim().is_empty() || o.use_.trim().is_empty() {
                return Err(invalid(format!("catalog entry `{}` has an empty field", o.id)));
            }
            if Attribute::ALL.iter().any(|&a| o.value(a).ends_with('.')) {
                return Err(invalid(format!("catalog entry `{}`: values must not end with a period", o.id)));
            }
            if !ids.insert(o.id.as_str()) {
                return Err(invalid(format!("duplicate catalog id `{}`", o.id)));
            }
        }
        if self.catalog.len() > 255 {
            return Err(invalid("at most 255 catalog objects"));
        }
        if self.participants == 0 {
            return Err(invalid("participants must be at least 1"));
        }
        if self.attributes.is_empty() {
            return Err(invalid("attributes is empty"));
        }
        probability("rounds.round1_error_rate", self.rounds.round1_error_rate)?;
        probability("rounds.round3_error_rate", self.rounds.round3_error_rate)?;
        probability("reference_fidelity", self.reference_fidelity)?;
        probability("vague_opening_rate", self.vague_opening_rate)?;
        self.retrieval.validate().map_err(|e| invalid(e.to_string()))?;
        if self.embedding_dim == 0 {
            return Err(invalid("embedding_dim must be at least 1"));
        }
        if self.base_model == self.updated_model {
            return Err(invalid("base_model and updated_model must differ"));
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&CatalogObject> {
        self.catalog.iter().find(|o| o.id == id)
    }

    /// Dialogues per round.
    pub fn dialogues_per_round(&self) -> usize {
        self.participants as usize * self.catalog.len() * self.attributes.len()
    }
}
