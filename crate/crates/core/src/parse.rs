//! Maps free-text completions to a relation label.
//!
//! Text is upper-cased, every non-alphanumeric character becomes a space,
//! and the result is tokenized on whitespace. Verbalizations are matched as
//! token sequences first (earliest start, longest at a tie); only when none
//! occurs are bare codes matched as whole tokens. No match gives INVALID.

use serde::{Deserialize, Serialize};

use crate::label::{LabelAliases, RelationLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    CodeMatch,
    VerbalizationMatch,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub label: RelationLabel,
    /// Normalized tokens that triggered the match; empty when nothing did.
    pub matched_span: String,
    pub rule: MatchRule,
}

impl ParseOutcome {
    fn invalid() -> Self {
        ParseOutcome { label: RelationLabel::Invalid, matched_span: String::new(), rule: MatchRule::None }
    }
}

/// Upper-case, punctuation-free, single-spaced form of `text`. Dotted and
/// dotless capital I are folded together so Turkish casing never blocks a
/// match.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .flat_map(char::to_uppercase)
        .map(|c| match c {
            'İ' => 'I',
            c if c.is_alphanumeric() => c,
            _ => ' ',
        })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tokens(text: &str) -> Vec<String> {
    normalize(text).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

#[derive(Debug, Clone)]
pub struct ResponseParser {
    verbalizations: Vec<(Vec<String>, RelationLabel)>,
    codes: Vec<(String, RelationLabel)>,
}

impl Default for ResponseParser {
    fn default() -> Self {
        Self::new(&LabelAliases::default())
    }
}

impl ResponseParser {
    /// English verbalizations and codes, plus any aliases.
    pub fn new(aliases: &LabelAliases) -> Self {
        let mut verbalizations = Vec::new();
        let mut codes = Vec::new();
        for label in RelationLabel::GOLD {
            verbalizations.push((tokens(label.verbalization()), label));
            codes.push((normalize(label.code()), label));
            if let Some(alias) = aliases.labels.get(&label) {
                if let Some(v) = alias.verbalization.as_deref() {
                    verbalizations.push((tokens(v), label));
                }
                if let Some(d) = alias.display.as_deref() {
                    // Multi-token display names behave like verbalizations.
                    let t = tokens(d);
                    if t.len() == 1 {
                        codes.push((t[0].clone(), label));
                    } else if !t.is_empty() {
                        verbalizations.push((t, label));
                    }
                }
            }
        }
        verbalizations.retain(|(t, _)| !t.is_empty());
        ResponseParser { verbalizations, codes }
    }

    pub fn parse(&self, response: &str) -> ParseOutcome {
        let toks = tokens(response);
        for start in 0..toks.len() {
            let best = self
                .verbalizations
                .iter()
                .filter(|(pat, _)| toks[start..].starts_with(pat))
                .max_by_key(|(pat, _)| pat.len());
            if let Some((pat, label)) = best {
                return ParseOutcome {
                    label: *label,
                    matched_span: pat.join(" "),
                    rule: MatchRule::VerbalizationMatch,
                };
            }
        }
        for tok in &toks {
            if let Some((code, label)) = self.codes.iter().find(|(c, _)| c == tok) {
                return ParseOutcome { label: *label, matched_span: code.clone(), rule: MatchRule::CodeMatch };
            }
        }
        ParseOutcome::invalid()
    }
}

/// Parses with the English tables only.
pub fn parse_relation(response: &str) -> ParseOutcome {
    ResponseParser::default().parse(response)
}
