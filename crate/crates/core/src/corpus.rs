//! Relation-extraction data model and the JSONL corpus format.
//!
//! One line per instance:
//!
//! ```text
//! {"id":"tr-001","lang":"en","sentence":"...","e1":{"text":"...","start":0,"end":10,"type":"test"},"e2":{...},"relation":"TeRP"}
//! ```
//!
//! Offsets count Unicode scalar values, not bytes, and are half-open.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CorpusError;
use crate::label::RelationLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    En,
    Tr,
}

impl Lang {
    pub fn as_str(self) -> &'static str {
        match self {
            Lang::En => "en",
            Lang::Tr => "tr",
        }
    }

    /// Lower-cases text with the language's casing rules (Turkish dotted
    /// and dotless i).
    pub fn lowercase(self, text: &str) -> String {
        match self {
            Lang::En => text.to_lowercase(),
            Lang::Tr => {
                let mut out = String::with_capacity(text.len());
                for c in text.chars() {
                    match c {
                        'I' => out.push('ı'),
                        'İ' => out.push('i'),
                        _ => out.extend(c.to_lowercase()),
                    }
                }
                out
            }
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "en" => Ok(Lang::En),
            "tr" => Ok(Lang::Tr),
            other => Err(format!("unsupported language `{other}` (expected en or tr)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptType {
    Problem,
    Treatment,
    Test,
}

impl ConceptType {
    pub fn as_str(self) -> &'static str {
        match self {
            ConceptType::Problem => "problem",
            ConceptType::Treatment => "treatment",
            ConceptType::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityMention {
    #[serde(rename = "text")]
    pub surface: String,
    #[serde(rename = "start")]
    pub char_start: usize,
    #[serde(rename = "end")]
    pub char_end: usize,
    #[serde(rename = "type")]
    pub concept_type: ConceptType,
}

impl EntityMention {
    pub fn new(surface: impl Into<String>, start: usize, end: usize, concept_type: ConceptType) -> Self {
        EntityMention { surface: surface.into(), char_start: start, char_end: end, concept_type }
    }

    /// Builds a mention by locating the first occurrence of `surface` in
    /// `sentence`.
    pub fn locate(sentence: &str, surface: &str, concept_type: ConceptType) -> Option<Self> {
        let byte = sentence.find(surface)?;
        let start = sentence[..byte].chars().count();
        Some(EntityMention::new(surface, start, start + surface.chars().count(), concept_type))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct REInstance {
    pub id: String,
    pub lang: Lang,
    pub sentence: String,
    pub e1: EntityMention,
    pub e2: EntityMention,
    #[serde(rename = "relation")]
    pub gold: RelationLabel,
}

impl REInstance {
    /// Checks span offsets, surface agreement and label/concept pairing.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if !self.gold.is_gold() {
            return Err("INVALID is not a gold label".into());
        }
        let chars: Vec<char> = self.sentence.chars().collect();
        for (name, m) in [("e1", &self.e1), ("e2", &self.e2)] {
            if m.char_start >= m.char_end || m.char_end > chars.len() {
                return Err(format!(
                    "{name} span {}..{} is out of range for a sentence of {} characters",
                    m.char_start,
                    m.char_end,
                    chars.len()
                ));
            }
            let slice: String = chars[m.char_start..m.char_end].iter().collect();
            if slice != m.surface {
                return Err(format!("{name} text {:?} does not match sentence slice {:?}", m.surface, slice));
            }
        }
        if !self.gold.admits(self.e1.concept_type, self.e2.concept_type) {
            return Err(format!(
                "relation {} cannot hold between a {} and a {}",
                self.gold,
                self.e1.concept_type.as_str(),
                self.e2.concept_type.as_str()
            ));
        }
        Ok(())
    }

    /// Canonical single-line JSON form.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("instance serialization is infallible")
    }
}

/// An immutable, validated collection of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    split: Split,
    lang: Option<Lang>,
    instances: Vec<REInstance>,
    label_histogram: BTreeMap<RelationLabel, usize>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Validates every instance, id uniqueness and language uniformity.
    pub fn from_instances(split: Split, instances: Vec<REInstance>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(instances.len());
        let mut histogram = BTreeMap::new();
        let lang = instances.first().map(|i| i.lang);
        for (pos, inst) in instances.iter().enumerate() {
            let line = pos + 1;
            inst.validate().map_err(|message| CorpusError::Validation { line, id: inst.id.clone(), message })?;
            if Some(inst.lang) != lang {
                return Err(CorpusError::Validation {
                    line,
                    id: inst.id.clone(),
                    message: format!("language {} differs from corpus language", inst.lang),
                });
            }
            if index.insert(inst.id.clone(), pos).is_some() {
                return Err(CorpusError::Validation { line, id: inst.id.clone(), message: "duplicate id".into() });
            }
            *histogram.entry(inst.gold).or_insert(0) += 1;
        }
        Ok(Corpus { split, lang, instances, label_histogram: histogram, index })
    }

    pub fn empty(split: Split) -> Self {
        Corpus { split, lang: None, instances: Vec::new(), label_histogram: BTreeMap::new(), index: HashMap::new() }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `None` for an empty corpus.
    pub fn lang(&self) -> Option<Lang> {
        self.lang
    }

    pub fn instances(&self) -> &[REInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn label_histogram(&self) -> &BTreeMap<RelationLabel, usize> {
        &self.label_histogram
    }

    pub fn get(&self, id: &str) -> Option<&REInstance> {
        self.index.get(id).map(|&i| &self.instances[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, REInstance> {
        self.instances.iter()
    }

    /// Canonical JSONL rendering, one instance per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for inst in &self.instances {
            out.push_str(&inst.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io { path: path.to_path_buf(), source };
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a REInstance;
    type IntoIter = std::slice::Iter<'a, REInstance>;

    fn into_iter(self) -> Self::IntoIter {
        self.instances.iter()
    }
}

/// Parses a JSONL corpus. Blank lines are skipped; line numbers in errors
/// are 1-based physical lines.
pub fn parse_corpus_reader<R: BufRead>(reader: R, expected_lang: Lang, split: Split) -> Result<Corpus, CorpusError> {
    let mut instances = Vec::new();
    let mut lines = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: REInstance =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        if inst.lang != expected_lang {
            return Err(CorpusError::Validation {
                line: line_no,
                id: inst.id,
                message: format!("language {} but corpus expected {}", inst.lang, expected_lang),
            });
        }
        instances.push(inst);
        lines.push(line_no);
    }
    // Re-map positional errors back to physical line numbers.
    Corpus::from_instances(split, instances).map_err(|e| match e {
        CorpusError::Validation { line, id, message } => CorpusError::Validation { line: lines[line - 1], id, message },
        other => other,
    })
}

pub fn parse_corpus(path: &Path, expected_lang: Lang, split: Split) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    parse_corpus_reader(BufReader::new(file), expected_lang, split)
}

/// Largest-remainder (Hamilton) allocation of `n` slots proportional to
/// `counts`. Ties in the remainder go to the earlier entry.
pub fn proportional_quotas(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas = Vec::with_capacity(counts.len());
    let mut remainders = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        let scaled = (n as u128) * (c as u128);
        quotas.push((scaled / total as u128) as usize);
        remainders.push((scaled % total as u128, i));
    }
    let assigned: usize = quotas.iter().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(n - assigned) {
        quotas[i] += 1;
    }
    quotas
}

/// Draws `n` instances keeping label proportions. Within each label the
/// draw is a seeded uniform sample; output keeps the original order.
pub fn stratified_sample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if n > corpus.len() {
        return Err(CorpusError::SampleTooLarge { requested: n, available: corpus.len() });
    }
    let labels: Vec<RelationLabel> = corpus.label_histogram.keys().copied().collect();
    let counts: Vec<usize> = labels.iter().map(|l| corpus.label_histogram[l]).collect();
    let quotas = proportional_quotas(&counts, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; corpus.len()];
    for (label, quota) in labels.iter().zip(quotas) {
        let members: Vec<usize> =
            corpus.instances.iter().enumerate().filter(|(_, inst)| inst.gold == *label).map(|(i, _)| i).collect();
        for pick in index::sample(&mut rng, members.len(), quota) {
            keep[members[pick]] = true;
        }
    }
    let sampled = corpus.instances.iter().zip(keep).filter(|(_, k)| *k).map(|(inst, _)| inst.clone()).collect();
    Corpus::from_instances(corpus.split, sampled)
}

#[cfg(test)]
mod tests {
    use super::*;

    const URINALYSIS: &str = r#"{"id":"tr-001","lang":"en","sentence":"Urinalysis was positive for protein.","e1":{"text":"Urinalysis","start":0,"end":10,"type":"test"},"e2":{"text":"positive for protein","start":15,"end":35,"type":"problem"},"relation":"TeRP"}"#;

    fn parse(text: &str) -> Result<Corpus, CorpusError> {
        parse_corpus_reader(text.as_bytes(), Lang::En, Split::Train)
    }

    fn synthetic(counts: &[(RelationLabel, usize)]) -> Corpus {
        let mut instances = Vec::new();
        for (label, count) in counts {
            let agent = label.agent_type().unwrap();
            for i in 0..*count {
                let sentence = format!("agent {i} acts on problem {i}");
                instances.push(REInstance {
                    id: format!("{}-{i:03}", label.code()),
                    lang: Lang::En,
                    e1: EntityMention::locate(&sentence, &format!("agent {i}"), agent).unwrap(),
                    e2: EntityMention::locate(&sentence, &format!("problem {i}"), ConceptType::Problem).unwrap(),
                    sentence,
                    gold: *label,
                });
            }
        }
        Corpus::from_instances(Split::Train, instances).unwrap()
    }

    #[test]
    fn parses_single_instance() {
        let corpus = parse(URINALYSIS).unwrap();
        assert_eq!(corpus.len(), 1);
        let inst = &corpus.instances()[0];
        assert_eq!(inst.gold, RelationLabel::TeRP);
        assert_eq!(inst.e2.surface, "positive for protein");
        assert_eq!(corpus.label_histogram()[&RelationLabel::TeRP], 1);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let corpus = parse("").unwrap();
        assert!(corpus.is_empty());
        assert!(corpus.label_histogram().is_empty());
    }

    #[test]
    fn perturbed_offset_names_the_instance() {
        let bad = URINALYSIS.replace(r#""start":0,"end":10"#, r#""start":1,"end":10"#);
        match parse(&bad) {
            Err(CorpusError::Validation { id, line, .. }) => {
                assert_eq!(id, "tr-001");
                assert_eq!(line, 1);
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{URINALYSIS}\n\n{{not json\n");
        match parse(&text) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_and_unknown_keys_are_rejected() {
        assert!(parse(&URINALYSIS.replace("TeRP", "XYZ")).is_err());
        assert!(parse(&URINALYSIS.replace(r#""relation""#, r#""extra":1,"relation""#)).is_err());
        // INVALID is not a gold label.
        assert!(parse(&URINALYSIS.replace("TeRP", "INVALID")).is_err());
    }

    #[test]
    fn incompatible_concept_types_are_rejected() {
        let bad = URINALYSIS.replace("TeRP", "TrAP");
        assert!(matches!(parse(&bad), Err(CorpusError::Validation { .. })));
    }

    #[test]
    fn wrong_language_and_duplicate_ids_are_rejected() {
        assert!(parse_corpus_reader(URINALYSIS.as_bytes(), Lang::Tr, Split::Test).is_err());
        let dup = format!("{URINALYSIS}\n{URINALYSIS}\n");
        match parse(&dup) {
            Err(CorpusError::Validation { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("duplicate"));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn offsets_count_characters_not_bytes() {
        let sentence = "Üriner sistem ultrasonu böbrek taşı gösterdi.";
        let e1 = EntityMention::locate(sentence, "Üriner sistem ultrasonu", ConceptType::Test).unwrap();
        let e2 = EntityMention::locate(sentence, "böbrek taşı", ConceptType::Problem).unwrap();
        assert_eq!((e1.char_start, e1.char_end), (0, 23));
        assert_eq!((e2.char_start, e2.char_end), (24, 35));
        let inst = REInstance {
            id: "t1".into(),
            lang: Lang::Tr,
            sentence: sentence.into(),
            e1,
            e2,
            gold: RelationLabel::TeRP,
        };
        inst.validate().unwrap();
    }

    #[test]
    fn turkish_lowercasing_handles_dotted_i() {
        assert_eq!(Lang::Tr.lowercase("IŞIK İLAÇ"), "ışık ilaç");
        assert_eq!(Lang::En.lowercase("Urinalysis"), "urinalysis");
    }

    #[test]
    fn round_trip_is_identity_on_canonical_form() {
        let corpus = parse(URINALYSIS).unwrap();
        assert_eq!(corpus.to_jsonl(), format!("{URINALYSIS}\n"));
    }

    #[test]
    fn largest_remainder_quotas() {
        assert_eq!(proportional_quotas(&[60, 40], 10), vec![6, 4]);
        assert_eq!(proportional_quotas(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(proportional_quotas(&[5, 3, 2], 0), vec![0, 0, 0]);
    }

    #[test]
    fn stratified_sample_keeps_proportions() {
        let corpus = synthetic(&[(RelationLabel::TrAP, 60), (RelationLabel::TeRP, 40)]);
        for seed in 0..5 {
            let sample = stratified_sample(&corpus, 10, seed).unwrap();
            assert_eq!(sample.label_histogram()[&RelationLabel::TrAP], 6);
            assert_eq!(sample.label_histogram()[&RelationLabel::TeRP], 4);
        }
    }

    #[test]
    fn stratified_sample_edge_sizes() {
        let corpus = synthetic(&[(RelationLabel::TrAP, 7), (RelationLabel::PIP, 3)]);
        assert_eq!(stratified_sample(&corpus, 10, 99).unwrap(), corpus);
        assert!(stratified_sample(&corpus, 0, 1).unwrap().is_empty());
        assert!(matches!(stratified_sample(&corpus, 11, 1), Err(CorpusError::SampleTooLarge { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sample_is_deterministic_and_proportional(
                a in 1usize..40, b in 0usize..40, c in 0usize..40,
                frac in 0.0f64..=1.0, seed in any::<u64>(),
            ) {
                let corpus = synthetic(&[
                    (RelationLabel::TrIP, a),
                    (RelationLabel::TeCP, b),
                    (RelationLabel::PIP, c),
                ]);
                let n = ((corpus.len() as f64) * frac).floor() as usize;
                let first = stratified_sample(&corpus, n, seed).unwrap();
                let second = stratified_sample(&corpus, n, seed).unwrap();
                prop_assert_eq!(&first, &second);
                prop_assert_eq!(first.len(), n);
                for (label, &count) in corpus.label_histogram() {
                    let share = count as f64 / corpus.len() as f64;
                    let got = first.label_histogram().get(label).copied().unwrap_or(0) as f64;
                    prop_assert!((got - n as f64 * share).abs() < 1.0);
                }
                // Output order is stable by original index.
                let positions: Vec<usize> = first
                    .iter()
                    .map(|i| corpus.instances().iter().position(|x| x.id == i.id).unwrap())
                    .collect();
                prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
