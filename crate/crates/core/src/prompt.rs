//! Prompt rendering: task instruction, demonstrations with optional
//! reasoning, and the test query.
//!
//! Templates are plain text with `[slot]` placeholders, one file per block
//! per language. English ships built in; other languages are read from a
//! template directory laid out as `<dir>/<lang>/<block>.txt`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ConceptType, Lang, REInstance};
use crate::error::PromptError;
use crate::label::{LabelAliases, RelationLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoTStyle {
    None,
    StaticZeroShot,
    StaticFewShot,
    Sqp,
    GoldLabel,
    OutputFormat,
}

impl CoTStyle {
    pub const ALL: [CoTStyle; 6] = [
        CoTStyle::None,
        CoTStyle::StaticZeroShot,
        CoTStyle::StaticFewShot,
        CoTStyle::Sqp,
        CoTStyle::GoldLabel,
        CoTStyle::OutputFormat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CoTStyle::None => "none",
            CoTStyle::StaticZeroShot => "static_zero_shot",
            CoTStyle::StaticFewShot => "static_few_shot",
            CoTStyle::Sqp => "sqp",
            CoTStyle::GoldLabel => "gold_label",
            CoTStyle::OutputFormat => "output_format",
        }
    }

    /// Styles whose demonstrations need generated reasoning text.
    pub fn needs_reasoning(self) -> bool {
        matches!(self, CoTStyle::Sqp | CoTStyle::GoldLabel)
    }
}

impl fmt::Display for CoTStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoTStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CoTStyle::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = CoTStyle::ALL.iter().map(|c| c.as_str()).collect();
            format!("unknown CoT style `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// Demonstration placement relative to the test query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoOrder {
    /// Least similar first, most similar right before the query.
    #[default]
    AscendingSimilarity,
    /// Retrieval rank order, most similar first.
    DescendingSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Block {
    Instruction,
    StaticCot,
    DemoNone,
    DemoStatic,
    StaticReasoning,
    DemoReasoned,
    DemoOutputFormat,
    QueryQuoted,
    QueryPlain,
    QueryOutputFormat,
    RequestSqp,
    RequestGoldLabel,
}

impl Block {
    pub const ALL: [Block; 12] = [
        Block::Instruction,
        Block::StaticCot,
        Block::DemoNone,
        Block::DemoStatic,
        Block::StaticReasoning,
        Block::DemoReasoned,
        Block::DemoOutputFormat,
        Block::QueryQuoted,
        Block::QueryPlain,
        Block::QueryOutputFormat,
        Block::RequestSqp,
        Block::RequestGoldLabel,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Block::Instruction => "instruction.txt",
            Block::StaticCot => "static_cot.txt",
            Block::DemoNone => "demo_none.txt",
            Block::DemoStatic => "demo_static.txt",
            Block::StaticReasoning => "static_reasoning.txt",
            Block::DemoReasoned => "demo_reasoned.txt",
            Block::DemoOutputFormat => "demo_output_format.txt",
            Block::QueryQuoted => "query_quoted.txt",
            Block::QueryPlain => "query_plain.txt",
            Block::QueryOutputFormat => "query_output_format.txt",
            Block::RequestSqp => "request_sqp.txt",
            Block::RequestGoldLabel => "request_gold_label.txt",
        }
    }

    fn builtin_en(self) -> &'static str {
        match self {
            Block::Instruction => include_str!("../templates/en/instruction.txt"),
            Block::StaticCot => include_str!("../templates/en/static_cot.txt"),
            Block::DemoNone => include_str!("../templates/en/demo_none.txt"),
            Block::DemoStatic => include_str!("../templates/en/demo_static.txt"),
            Block::StaticReasoning => include_str!("../templates/en/static_reasoning.txt"),
            Block::DemoReasoned => include_str!("../templates/en/demo_reasoned.txt"),
            Block::DemoOutputFormat => include_str!("../templates/en/demo_output_format.txt"),
            Block::QueryQuoted => include_str!("../templates/en/query_quoted.txt"),
            Block::QueryPlain => include_str!("../templates/en/query_plain.txt"),
            Block::QueryOutputFormat => include_str!("../templates/en/query_output_format.txt"),
            Block::RequestSqp => include_str!("../templates/en/request_sqp.txt"),
            Block::RequestGoldLabel => include_str!("../templates/en/request_gold_label.txt"),
        }
    }
}

const BUILTIN_EN_VOCAB: &str = include_str!("../templates/en/vocab.toml");
const VOCAB_FILE: &str = "vocab.toml";
const LABELS_FILE: &str = "labels.toml";

/// Concept-type words used inside explanations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub treatment: String,
    pub test: String,
    pub problem: String,
    pub medical_problem: String,
}

impl Vocab {
    /// Short word: `treatment`, `test`, `problem`.
    fn short(&self, t: ConceptType) -> &str {
        match t {
            ConceptType::Treatment => &self.treatment,
            ConceptType::Test => &self.test,
            ConceptType::Problem => &self.problem,
        }
    }

    /// Long form used in step-by-step reasoning: problems are "medical problem".
    fn long(&self, t: ConceptType) -> &str {
        match t {
            ConceptType::Problem => &self.medical_problem,
            other => self.short(other),
        }
    }
}

/// Template set for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    lang: Lang,
    blocks: BTreeMap<Block, String>,
    vocab: Vocab,
    aliases: LabelAliases,
}

impl Templates {
    pub fn builtin_en() -> Self {
        Templates {
            lang: Lang::En,
            blocks: Block::ALL.iter().map(|b| (*b, b.builtin_en().to_string())).collect(),
            vocab: toml::from_str(BUILTIN_EN_VOCAB).expect("built-in vocabulary parses"),
            aliases: LabelAliases::default(),
        }
    }

    /// Loads templates for `lang`. Files under `<dir>/<lang>/` override the
    /// built-in English blocks; any other language must supply every block.
    pub fn load(lang: Lang, dir: Option<&Path>) -> Result<Self, PromptError> {
        let lang_dir: Option<PathBuf> = dir.map(|d| d.join(lang.as_str()));
        let missing = |name: &str| PromptError::MissingTemplate {
            lang: lang.as_str().to_string(),
            block: name.trim_end_matches(".txt").trim_end_matches(".toml").to_string(),
            path: lang_dir
                .as_ref()
                .map(|d| d.join(name))
                .unwrap_or_else(|| PathBuf::from(format!("<template-dir>/{}/{name}", lang.as_str()))),
        };
        let read = |path: &Path| {
            std::fs::read_to_string(path).map_err(|source| PromptError::Io { path: path.to_path_buf(), source })
        };

        let mut blocks = BTreeMap::new();
        for block in Block::ALL {
            let file = lang_dir.as_ref().map(|d| d.join(block.file_name())).filter(|p| p.is_file());
            let text = match (file, lang) {
                (Some(path), _) => read(&path)?,
                (None, Lang::En) => block.builtin_en().to_string(),
                (None, _) => return Err(missing(block.file_name())),
            };
            blocks.insert(block, text);
        }

        let vocab_path = lang_dir.as_ref().map(|d| d.join(VOCAB_FILE)).filter(|p| p.is_file());
        let (vocab_text, vocab_source) = match (vocab_path, lang) {
            (Some(path), _) => (read(&path)?, path),
            (None, Lang::En) => (BUILTIN_EN_VOCAB.to_string(), PathBuf::from("<built-in>")),
            (None, _) => return Err(missing(VOCAB_FILE)),
        };
        let vocab: Vocab = toml::from_str(&vocab_text)
            .map_err(|e| PromptError::Vocab { path: vocab_source, message: e.to_string() })?;

        let aliases = match lang_dir.as_ref().map(|d| d.join(LABELS_FILE)).filter(|p| p.is_file()) {
            Some(path) => LabelAliases::load(&path)
                .map_err(|e| PromptError::Vocab { path: path.clone(), message: e.to_string() })?,
            None => LabelAliases::default(),
        };
        Ok(Templates { lang, blocks, vocab, aliases })
    }

    pub fn lang(&self) -> Lang {
        self.lang
    }

    pub fn aliases(&self) -> &LabelAliases {
        &self.aliases
    }

    pub fn block(&self, block: Block) -> &str {
        &self.blocks[&block]
    }

    fn verbalization(&self, label: RelationLabel) -> &str {
        self.aliases.verbalization(label)
    }
}

/// Single-pass `[slot]` substitution. Substituted values are never
/// rescanned, and unknown bracketed text is copied through.
pub fn fill_slots(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(pos) = rest.find('[') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in slots {
            let key_len = name.len() + 2;
            if tail.len() >= key_len && tail.as_bytes()[key_len - 1] == b']' && &tail[1..key_len - 1] == *name {
                out.push_str(value);
                rest = &tail[key_len..];
                continue 'outer;
            }
        }
        out.push('[');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Agent and problem mentions for structured explanations. For
/// problem-problem relations the first entity is the agent.
fn agent_and_problem(d: &REInstance) -> (&crate::corpus::EntityMention, &crate::corpus::EntityMention) {
    if d.e1.concept_type == ConceptType::Problem && d.e2.concept_type != ConceptType::Problem {
        (&d.e2, &d.e1)
    } else {
        (&d.e1, &d.e2)
    }
}

/// A rendered in-context example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub gold: RelationLabel,
    pub style: CoTStyle,
    pub cot_text: Option<String>,
    pub rendered: String,
}

fn check_renderable(d: &REInstance) -> Result<(), PromptError> {
    if !d.gold.is_gold() {
        return Err(PromptError::InvalidGold { id: d.id.clone() });
    }
    Ok(())
}

fn templated_reasoning(d: &REInstance, t: &Templates) -> String {
    let lower = |s: &str| d.lang.lowercase(s);
    let (agent, problem) = agent_and_problem(d);
    let phrase_lower = lower(t.aliases.phrase(d.gold));
    fill_slots(
        t.block(Block::StaticReasoning),
        &[
            ("entity1", &d.e1.surface),
            ("entity2", &d.e2.surface),
            ("type1", t.vocab.long(d.e1.concept_type)),
            ("type2", t.vocab.long(d.e2.concept_type)),
            ("agent_type", t.vocab.long(agent.concept_type)),
            ("agent", &lower(&agent.surface)),
            ("phrase_lower", &phrase_lower),
            ("problem_type", t.vocab.long(problem.concept_type)),
            ("problem", &lower(&problem.surface)),
        ],
    )
}

/// Renders one demonstration. `cot_text` is required for `sqp` and
/// `gold_label`; for `static_few_shot` it replaces the templated
/// step-by-step reasoning.
pub fn render_demonstration(
    d: &REInstance,
    style: CoTStyle,
    cot_text: Option<&str>,
    t: &Templates,
) -> Result<Demonstration, PromptError> {
    check_renderable(d)?;
    let e1 = d.lang.lowercase(&d.e1.surface);
    let e2 = d.lang.lowercase(&d.e2.surface);
    let relation = t.verbalization(d.gold);
    let base =
        [("context", d.sentence.as_str()), ("entity1", e1.as_str()), ("entity2", e2.as_str()), ("relation", relation)];
    let (rendered, kept) = match style {
        CoTStyle::StaticZeroShot => return Err(PromptError::NoDemonstrations { style: style.to_string() }),
        CoTStyle::None => (fill_slots(t.block(Block::DemoNone), &base), None),
        CoTStyle::StaticFewShot => {
            let reasoning = cot_text.map(str::to_string).unwrap_or_else(|| templated_reasoning(d, t));
            let mut slots = base.to_vec();
            slots.push(("reasoning", &reasoning));
            (fill_slots(t.block(Block::DemoStatic), &slots), Some(reasoning.clone()))
        }
        CoTStyle::Sqp | CoTStyle::GoldLabel => {
            let reasoning =
                cot_text.ok_or_else(|| PromptError::MissingReasoning { style: style.to_string(), id: d.id.clone() })?;
            let mut slots = base.to_vec();
            slots.push(("reasoning", reasoning.trim_end()));
            (fill_slots(t.block(Block::DemoReasoned), &slots), Some(reasoning.to_string()))
        }
        CoTStyle::OutputFormat => {
            let (agent, problem) = agent_and_problem(d);
            let agent_lower = d.lang.lowercase(&agent.surface);
            let problem_lower = d.lang.lowercase(&problem.surface);
            let mut slots = base.to_vec();
            slots.extend([
                ("agent_word", t.vocab.short(agent.concept_type)),
                ("agent", agent_lower.as_str()),
                ("phrase", t.aliases.phrase(d.gold)),
                ("problem", problem_lower.as_str()),
            ]);
            (fill_slots(t.block(Block::DemoOutputFormat), &slots), None)
        }
    };
    Ok(Demonstration { id: d.id.clone(), gold: d.gold, style, cot_text: kept, rendered })
}

/// The prompt sent to a model to generate reasoning for one
/// demonstration. Entities keep their surface form.
pub fn build_cot_request(d: &REInstance, style: CoTStyle, t: &Templates) -> Result<String, PromptError> {
    let block = match style {
        CoTStyle::Sqp => Block::RequestSqp,
        CoTStyle::GoldLabel => Block::RequestGoldLabel,
        other => return Err(PromptError::NotAReasoningStyle { style: other.to_string() }),
    };
    check_renderable(d)?;
    Ok(fill_slots(
        t.block(block),
        &[
            ("context", &d.sentence),
            ("entity1", &d.e1.surface),
            ("entity2", &d.e2.surface),
            ("relation", t.verbalization(d.gold)),
        ],
    ))
}

/// The test query block for `style`.
pub fn render_query(test: &REInstance, style: CoTStyle, t: &Templates) -> String {
    let block = match style {
        CoTStyle::None | CoTStyle::StaticZeroShot | CoTStyle::StaticFewShot => Block::QueryQuoted,
        CoTStyle::Sqp | CoTStyle::GoldLabel => Block::QueryPlain,
        CoTStyle::OutputFormat => Block::QueryOutputFormat,
    };
    let e1 = test.lang.lowercase(&test.e1.surface);
    let e2 = test.lang.lowercase(&test.e2.surface);
    fill_slots(t.block(block), &[("context", &test.sentence), ("entity1", &e1), ("entity2", &e2)])
}

pub fn render_task_instruction(t: &Templates) -> &str {
    t.block(Block::Instruction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub full_text: String,
    pub demo_ids: Vec<String>,
    pub style: CoTStyle,
    pub lang: Lang,
    pub content_hash: String,
}

pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

const BLOCK_SEPARATOR: &str = "\n\n";

/// Assembles instruction, optional static reasoning block, demonstrations
/// and the test query. `demos` are given in retrieval rank order (most
/// similar first); `order` decides how they are laid out.
pub fn assemble_prompt(
    test: &REInstance,
    demos: &[Demonstration],
    style: CoTStyle,
    order: DemoOrder,
    t: &Templates,
) -> Result<RenderedPrompt, PromptError> {
    match style {
        CoTStyle::StaticZeroShot if !demos.is_empty() => {
            return Err(PromptError::DemoCount { style: style.to_string(), expected: "0".into(), found: demos.len() })
        }
        CoTStyle::StaticFewShot | CoTStyle::Sqp | CoTStyle::GoldLabel | CoTStyle::OutputFormat if demos.is_empty() => {
            return Err(PromptError::DemoCount { style: style.to_string(), expected: "at least 1".into(), found: 0 })
        }
        _ => {}
    }
    if let Some(d) = demos.iter().find(|d| d.style != style) {
        return Err(PromptError::StyleMismatch {
            id: d.id.clone(),
            expected: style.to_string(),
            found: d.style.to_string(),
        });
    }

    let mut parts: Vec<&str> = vec![render_task_instruction(t)];
    if matches!(style, CoTStyle::StaticZeroShot | CoTStyle::StaticFewShot) {
        parts.push(t.block(Block::StaticCot));
    }
    let laid_out: Vec<&Demonstration> = match order {
        DemoOrder::AscendingSimilarity => demos.iter().rev().collect(),
        DemoOrder::DescendingSimilarity => demos.iter().collect(),
    };
    parts.extend(laid_out.iter().map(|d| d.rendered.as_str()));
    let query = render_query(test, style, t);
    parts.push(&query);
    let full_text = parts.join(BLOCK_SEPARATOR);
    Ok(RenderedPrompt {
        content_hash: content_hash(&full_text),
        demo_ids: laid_out.iter().map(|d| d.id.clone()).collect(),
        full_text,
        style,
        lang: t.lang(),
    })
}

/// Generated reasoning text for one (instance, style, model).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotEntry {
    pub instance_id: String,
    pub style: CoTStyle,
    pub model: String,
    pub text: String,
}

/// Content-addressed reasoning cache: one JSON file per key, written
/// atomically.
#[derive(Debug, Clone)]
pub struct CotCache {
    dir: PathBuf,
}

impl CotCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CotCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(instance_id: &str, style: CoTStyle, model: &str) -> String {
        let mut h = Sha256::new();
        for part in [instance_id, style.as_str(), model] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn path_for(&self, instance_id: &str, style: CoTStyle, model: &str) -> PathBuf {
        self.dir.join(format!("{}.json", Self::key(instance_id, style, model)))
    }

    pub fn get(&self, instance_id: &str, style: CoTStyle, model: &str) -> Result<Option<CotEntry>, PromptError> {
        let path = self.path_for(instance_id, style, model);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(PromptError::Cache { path, message: e.to_string() }),
        };
        let entry: CotEntry = serde_json::from_str(&text)
            .map_err(|e| PromptError::Cache { path: path.clone(), message: e.to_string() })?;
        if entry.instance_id != instance_id || entry.style != style || entry.model != model {
            return Err(PromptError::Cache { path, message: "entry does not match its key".into() });
        }
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CotEntry) -> Result<PathBuf, PromptError> {
        let path = self.path_for(&entry.instance_id, entry.style, &entry.model);
        let err = |m: String| PromptError::Cache { path: path.clone(), message: m };
        std::fs::create_dir_all(&self.dir).map_err(|e| err(e.to_string()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| err(e.to_string()))?;
        let body = serde_json::to_string_pretty(entry).map_err(|e| err(e.to_string()))?;
        tmp.write_all(body.as_bytes()).map_err(|e| err(e.to_string()))?;
        tmp.persist(&path).map_err(|e| err(e.to_string()))?;
        Ok(path)
    }
}
