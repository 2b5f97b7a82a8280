//! The closed i2b2-2010/VA relation label set.
//!
//! Eight canonical labels exist, listed here in the order the relation
//! types are introduced for the three concept pairings (treatment/problem,
//! test/problem, problem/problem). That order is also the row/column order
//! of every confusion matrix. [`RelationLabel::Invalid`] is a sentinel for
//! unparseable model outputs and never appears as a gold label.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::ConceptType;
use crate::error::LabelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationLabel {
    TrIP,
    TrWP,
    TrCP,
    TrAP,
    TrNAP,
    TeRP,
    TeCP,
    PIP,
    Invalid,
}

impl RelationLabel {
    /// The eight gold labels in canonical order.
    pub const GOLD: [RelationLabel; 8] = [
        RelationLabel::TrIP,
        RelationLabel::TrWP,
        RelationLabel::TrCP,
        RelationLabel::TrAP,
        RelationLabel::TrNAP,
        RelationLabel::TeRP,
        RelationLabel::TeCP,
        RelationLabel::PIP,
    ];

    /// Gold labels followed by the `INVALID` prediction column.
    pub const PREDICTABLE: [RelationLabel; 9] = [
        RelationLabel::TrIP,
        RelationLabel::TrWP,
        RelationLabel::TrCP,
        RelationLabel::TrAP,
        RelationLabel::TrNAP,
        RelationLabel::TeRP,
        RelationLabel::TeCP,
        RelationLabel::PIP,
        RelationLabel::Invalid,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RelationLabel::TrIP => "TrIP",
            RelationLabel::TrWP => "TrWP",
            RelationLabel::TrCP => "TrCP",
            RelationLabel::TrAP => "TrAP",
            RelationLabel::TrNAP => "TrNAP",
            RelationLabel::TeRP => "TeRP",
            RelationLabel::TeCP => "TeCP",
            RelationLabel::PIP => "PIP",
            RelationLabel::Invalid => "INVALID",
        }
    }

    /// Upper-case verbalization used in demonstration responses.
    pub fn verbalization(self) -> &'static str {
        match self {
            RelationLabel::TrIP => "TREATMENT IMPROVES MEDICAL PROBLEM",
            RelationLabel::TrWP => "TREATMENT WORSENS MEDICAL PROBLEM",
            RelationLabel::TrCP => "TREATMENT CAUSES MEDICAL PROBLEM",
            RelationLabel::TrAP => "TREATMENT IS ADMINISTERED FOR MEDICAL PROBLEM",
            RelationLabel::TrNAP => "TREATMENT IS NOT ADMINISTERED BECAUSE OF MEDICAL PROBLEM",
            RelationLabel::TeRP => "TEST REVEALS MEDICAL PROBLEM",
            RelationLabel::TeCP => "TEST CONDUCTED TO INVESTIGATE MEDICAL PROBLEM",
            RelationLabel::PIP => "MEDICAL PROBLEM INDICATES MEDICAL PROBLEM",
            RelationLabel::Invalid => "INVALID",
        }
    }

    /// The verb phrase between the two bracketed entities of an
    /// output-format explanation, e.g. `IS ADMINISTERED FOR` for TrAP.
    pub fn relation_phrase(self) -> &'static str {
        match self {
            RelationLabel::TrIP => "IMPROVES",
            RelationLabel::TrWP => "WORSENS",
            RelationLabel::TrCP => "CAUSES",
            RelationLabel::TrAP => "IS ADMINISTERED FOR",
            RelationLabel::TrNAP => "IS NOT ADMINISTERED BECAUSE OF",
            RelationLabel::TeRP => "REVEALS",
            RelationLabel::TeCP => "CONDUCTED TO INVESTIGATE",
            RelationLabel::PIP => "INDICATES",
            RelationLabel::Invalid => "",
        }
    }

    /// The concept type paired with the medical problem, or `None` for the
    /// sentinel.
    pub fn agent_type(self) -> Option<ConceptType> {
        match self {
            RelationLabel::TrIP
            | RelationLabel::TrWP
            | RelationLabel::TrCP
            | RelationLabel::TrAP
            | RelationLabel::TrNAP => Some(ConceptType::Treatment),
            RelationLabel::TeRP | RelationLabel::TeCP => Some(ConceptType::Test),
            RelationLabel::PIP => Some(ConceptType::Problem),
            RelationLabel::Invalid => None,
        }
    }

    /// Whether an entity pair of these concept types (in either order) can
    /// carry this label.
    pub fn admits(self, a: ConceptType, b: ConceptType) -> bool {
        match self.agent_type() {
            None => false,
            Some(agent) => (a == agent && b == ConceptType::Problem) || (b == agent && a == ConceptType::Problem),
        }
    }

    pub fn is_gold(self) -> bool {
        self != RelationLabel::Invalid
    }

    /// Position in [`RelationLabel::PREDICTABLE`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Case-insensitive lookup of a canonical gold code. `INVALID` is not
    /// accepted here.
    pub fn from_code(code: &str) -> Result<Self, LabelError> {
        let trimmed = code.trim();
        Self::GOLD.iter().copied().find(|l| l.code().eq_ignore_ascii_case(trimmed)).ok_or_else(|| {
            LabelError::UnknownCode {
                code: code.to_string(),
                valid: Self::GOLD.iter().map(|l| l.code()).collect::<Vec<_>>().join(", "),
            }
        })
    }
}

/// Case-insensitive match against canonical codes.
pub fn label_from_code(code: &str) -> Result<RelationLabel, LabelError> {
    RelationLabel::from_code(code)
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for RelationLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == RelationLabel::Invalid.code() {
            return Ok(RelationLabel::Invalid);
        }
        RelationLabel::from_code(s)
    }
}

impl Serialize for RelationLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for RelationLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Presentation aliases for one label in one language.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelAlias {
    /// Short display code, e.g. `TstOÇP`.
    #[serde(default)]
    pub display: Option<String>,
    /// Full verbalization in the alias language.
    #[serde(default)]
    pub verbalization: Option<String>,
    /// Relation phrase used in structured explanations.
    #[serde(default)]
    pub phrase: Option<String>,
}

/// Per-language display names, loaded from a TOML or JSON file shaped as
/// `{ lang = "tr", labels = { TeRP = { display = "...", verbalization = "..." } } }`.
///
/// Canonical codes are always the English eight; aliases are presentation
/// and response-parsing conveniences only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelAliases {
    pub lang: Option<String>,
    pub labels: BTreeMap<RelationLabel, LabelAlias>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AliasFile {
    #[serde(default)]
    lang: Option<String>,
    #[serde(default)]
    labels: BTreeMap<String, LabelAlias>,
}

impl LabelAliases {
    pub fn from_json_str(text: &str) -> Result<Self, LabelError> {
        let file: AliasFile = serde_json::from_str(text).map_err(|e| LabelError::AliasFile(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| LabelError::AliasFile(format!("{}: {e}", path.display())))?;
        let file: AliasFile = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| LabelError::AliasFile(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| LabelError::AliasFile(e.to_string()))?
        };
        Self::from_file(file)
    }

    fn from_file(file: AliasFile) -> Result<Self, LabelError> {
        let mut labels = BTreeMap::new();
        for (code, alias) in file.labels {
            labels.insert(RelationLabel::from_code(&code)?, alias);
        }
        Ok(LabelAliases { lang: file.lang, labels })
    }

    pub fn display(&self, label: RelationLabel) -> &str {
        self.labels.get(&label).and_then(|a| a.display.as_deref()).unwrap_or(label.code())
    }

    pub fn verbalization(&self, label: RelationLabel) -> &str {
        self.labels.get(&label).and_then(|a| a.verbalization.as_deref()).unwrap_or(label.verbalization())
    }

    pub fn phrase(&self, label: RelationLabel) -> &str {
        self.labels.get(&label).and_then(|a| a.phrase.as_deref()).unwrap_or(label.relation_phrase())
    }
}
