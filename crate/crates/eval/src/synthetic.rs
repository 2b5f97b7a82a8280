//! Deterministic synthetic corpus and embeddings.
//!
//! Sentences are clinical-sounding and unique; vectors carry a per-label
//! signal plus noise, and every tenth instance copies its predecessor's
//! vectors exactly so rankings contain genuine ties.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rarex_core::corpus::{ConceptType, Corpus, EntityMention, Lang, REInstance, Split};
use rarex_core::embedding::{relation_key, Channel, EmbeddingStore, EmbeddingVector};
use rarex_core::label::RelationLabel;
use sha2::{Digest, Sha256};

pub const DEFAULT_SEED: u64 = 20240;
pub const DEFAULT_TRAIN: usize = 150;
pub const DEFAULT_TEST: usize = 50;
pub const DEFAULT_DIM: usize = 16;

const TREATMENTS: &[&str] = &[
    "lisinopril",
    "metoprolol",
    "insulin",
    "heparin",
    "warfarin",
    "aspirin",
    "vancomycin",
    "furosemide",
    "prednisone",
    "morphine",
    "levofloxacin",
    "beta blocker",
    "dulcolax",
    "albuterol",
    "radiation therapy",
];
const TESTS: &[&str] = &[
    "urinalysis",
    "chest x-ray",
    "echocardiogram",
    "blood culture",
    "MRI",
    "EKG",
    "CBC",
    "serum potassium",
    "liver function tests",
    "head CT",
    "abdominal ultrasound",
];
const PROBLEMS: &[&str] = &[
    "hypertension",
    "pneumonia",
    "chest pain",
    "anemia",
    "atrial fibrillation",
    "constipation",
    "renal failure",
    "cellulitis",
    "hypokalemia",
    "nausea",
    "fever",
    "pleural effusion",
    "a small infarct",
    "edema",
    "hyperglycemia",
    "rash",
    "bradycardia",
    "shortness of breath",
];

/// Rough label proportions of a discharge-summary corpus.
const LABEL_WEIGHTS: [u32; 8] = [2, 1, 4, 20, 2, 30, 5, 14];

/// `{a}` is the agent (treatment, test or first problem), `{p}` the problem.
fn patterns(label: RelationLabel) -> [&'static str; 2] {
    match label {
        RelationLabel::TrIP => ["{a} improved the patient's {p}", "{p} resolved after starting {a}"],
        RelationLabel::TrWP => ["{p} worsened despite {a}", "{a} aggravated her {p}"],
        RelationLabel::TrCP => ["{a} caused {p}", "{p} developed secondary to {a}"],
        RelationLabel::TrAP => ["{a} was given for {p}", "{p} was treated with {a}"],
        RelationLabel::TrNAP => ["{a} was held because of {p}", "{a} was discontinued given {p}"],
        RelationLabel::TeRP => ["{a} revealed {p}", "{a} was notable for {p}"],
        RelationLabel::TeCP => ["{a} was obtained to evaluate {p}", "{a} was ordered to rule out {p}"],
        RelationLabel::PIP => ["{p} with associated {a}", "{a} consistent with {p}"],
        RelationLabel::Invalid => unreachable!("INVALID is never generated"),
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn make_instance(id: String, day: usize, label: RelationLabel, rng: &mut ChaCha8Rng) -> REInstance {
    let problem = pick(rng, PROBLEMS);
    let (agent, agent_type) = match label.agent_type().expect("gold label") {
        ConceptType::Treatment => (pick(rng, TREATMENTS), ConceptType::Treatment),
        ConceptType::Test => (pick(rng, TESTS), ConceptType::Test),
        ConceptType::Problem => loop {
            let other = pick(rng, PROBLEMS);
            if other != problem {
                break (other, ConceptType::Problem);
            }
        },
    };
    let pattern = patterns(label)[rng.random_range(0..2)];
    let prefix = format!("On hospital day {day}, ");
    let mut sentence = prefix.clone();
    let mut spans = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        sentence.push_str(&rest[..open]);
        let (text, ty) =
            if &rest[open..open + 3] == "{a}" { (agent, agent_type) } else { (problem, ConceptType::Problem) };
        let start = sentence.chars().count();
        sentence.push_str(text);
        spans.push(EntityMention::new(text, start, start + text.chars().count(), ty));
        rest = &rest[open + 3..];
    }
    sentence.push_str(rest);
    sentence.push('.');
    let mut spans = spans.into_iter();
    let (e1, e2) = (spans.next().expect("two slots"), spans.next().expect("two slots"));
    REInstance { id, lang: Lang::En, sentence, e1, e2, gold: label }
}

/// Train and test corpora with ids `syn-0001…`; the first eight instances
/// cycle through every label so each occurs at least once.
pub fn synthetic_corpora(n_train: usize, n_test: usize, seed: u64) -> (Corpus, Corpus) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = WeightedIndex::new(LABEL_WEIGHTS).expect("positive weights");
    let all: Vec<REInstance> = (0..n_train + n_test)
        .map(|i| {
            let label = if i < 8 { RelationLabel::GOLD[i] } else { RelationLabel::GOLD[dist.sample(&mut rng)] };
            make_instance(format!("syn-{:04}", i + 1), i + 1, label, &mut rng)
        })
        .collect();
    let (train, test) = all.split_at(n_train);
    (
        Corpus::from_instances(Split::Train, train.to_vec()).expect("synthetic train corpus is valid"),
        Corpus::from_instances(Split::Test, test.to_vec()).expect("synthetic test corpus is valid"),
    )
}

fn uniform(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn text_vector(text: &str, seed: u64, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(text.as_bytes());
    let s = u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest")) ^ seed;
    uniform(&mut ChaCha8Rng::seed_from_u64(s), dim)
}

fn mix(parts: &[(f64, &[f64])]) -> EmbeddingVector {
    let dim = parts[0].1.len();
    let v: Vec<f32> = (0..dim).map(|j| parts.iter().map(|(w, p)| w * p[j]).sum::<f64>() as f32).collect();
    EmbeddingVector::new(v)
}

/// Base channels for every instance (sentence, e1, e2 and a
/// double-width pure_relation) plus one relation vector per label.
pub fn synthetic_store<'a>(
    instances: impl IntoIterator<Item = &'a REInstance>,
    dim: usize,
    seed: u64,
) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let centroids: Vec<Vec<f64>> = RelationLabel::GOLD.iter().map(|_| uniform(&mut rng, dim)).collect();
    let mut store = EmbeddingStore::new();
    for (label, c) in RelationLabel::GOLD.iter().zip(&centroids) {
        store.insert(relation_key(*label), Channel::Relation, mix(&[(1.0, c)])).expect("fresh key");
    }
    let mut previous: Option<[EmbeddingVector; 4]> = None;
    for (i, inst) in instances.into_iter().enumerate() {
        let c = &centroids[inst.gold.index()];
        let noise = uniform(&mut rng, dim);
        let rel_noise = uniform(&mut rng, dim);
        let e1 = text_vector(&inst.e1.surface, seed, dim);
        let e2 = text_vector(&inst.e2.surface, seed, dim);
        let fresh = [mix(&[(1.0, c), (0.8, &noise)]), mix(&[(1.0, &e1), (0.3, c)]), mix(&[(1.0, &e2), (0.3, c)]), {
            let left = mix(&[(0.9, c), (0.6, &rel_noise)]).into_inner();
            let right = mix(&[(0.5, &e1), (0.5, &e2)]).into_inner();
            EmbeddingVector::new(left.into_iter().chain(right).collect())
        }];
        let vectors = match (&previous, i % 10 == 9) {
            (Some(prev), true) => prev.clone(),
            _ => fresh,
        };
        for (channel, v) in
            [Channel::Sentence, Channel::E1, Channel::E2, Channel::PureRelation].into_iter().zip(vectors.iter())
        {
            store.insert(inst.id.clone(), channel, v.clone()).expect("unique synthetic ids");
        }
        previous = Some(vectors);
    }
    store
}

/// Everything an offline end-to-end run needs.
#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    pub train: Corpus,
    pub test: Corpus,
    pub store: EmbeddingStore,
}

impl SyntheticBundle {
    pub fn generate(n_train: usize, n_test: usize, dim: usize, seed: u64) -> Self {
        let (train, test) = synthetic_corpora(n_train, n_test, seed);
        let store = synthetic_store(train.iter().chain(test.iter()), dim, seed);
        SyntheticBundle { train, test, store }
    }

    pub fn default_bundle() -> Self {
        Self::generate(DEFAULT_TRAIN, DEFAULT_TEST, DEFAULT_DIM, DEFAULT_SEED)
    }

    /// Train and test together as one pool.
    pub fn combined(&self) -> Corpus {
        let all = self.train.iter().chain(self.test.iter()).cloned().collect();
        Corpus::from_instances(Split::Train, all).expect("ids are disjoint")
    }

    /// Writes `train.jsonl`, `test.jsonl` and `embeddings.bin` into `dir`.
    pub fn write(&self, dir: &std::path::Path) -> Result<(), crate::EvalError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| crate::EvalError::Report { path: dir.to_path_buf(), message: e.to_string() })?;
        self.train.write_jsonl(&dir.join("train.jsonl"))?;
        self.test.write_jsonl(&dir.join("test.jsonl"))?;
        self.store.save(&dir.join("embeddings.bin"))?;
        Ok(())
    }
}
