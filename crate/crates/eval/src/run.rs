//! Runs one experiment: retrieve, fetch reasoning, assemble, complete,
//! parse, record.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rarex_core::corpus::{Corpus, REInstance};
use rarex_core::embedding::{Channel, EmbeddingStore};
use rarex_core::error::RetrievalError;
use rarex_core::label::RelationLabel;
use rarex_core::parse::{MatchRule, ResponseParser};
use rarex_core::projection::{apply_head, ProjectionHead};
use rarex_core::prompt::{
    assemble_prompt, build_cot_request, render_demonstration, CoTStyle, CotCache, CotEntry, Demonstration,
    RenderedPrompt, Templates,
};
use rarex_core::retrieval::{retrieve_batch, RetrievalContext, RetrievalResult, Strategy};
use rarex_gateway::{GatewayError, LlmClient};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::EvalError;
use crate::report::{append_records, read_report, EvalReport, InstanceRecord, RunStats};
use crate::spec::ExperimentSpec;

/// Data an experiment reads. `head` is applied on the fly when the
/// strategy is rar and the store has no fine-tuned channels yet.
#[derive(Clone, Copy)]
pub struct ExperimentInputs<'a> {
    pub train: &'a Corpus,
    pub test: &'a Corpus,
    pub store: &'a EmbeddingStore,
    pub head: Option<&'a ProjectionHead>,
    pub templates: &'a Templates,
    pub cot_cache: Option<&'a CotCache>,
    /// Client generating demonstration reasoning; defaults to the
    /// answering client.
    pub cot_client: Option<&'a LlmClient>,
}

const RAR_HINT: &str = "strategy rar needs fine-tuned vectors (ft_sentence, ft_e1, ft_e2): \
train a head with `rarex head train`, then run `rarex head apply` or set `paths.head` in the config";

fn require_channels(store: &EmbeddingStore, channels: &[Channel], message: &str) -> Result<(), EvalError> {
    if channels.iter().all(|c| store.has_channel(*c)) {
        Ok(())
    } else {
        Err(EvalError::MissingPrerequisite(message.to_string()))
    }
}

fn prepare_store<'a>(
    spec: &ExperimentSpec,
    inputs: &ExperimentInputs<'a>,
) -> Result<Cow<'a, EmbeddingStore>, EvalError> {
    let store = inputs.store;
    match spec.strategy {
        Some(Strategy::Rar) => {
            let ft = [Channel::FtSentence, Channel::FtE1, Channel::FtE2];
            if ft.iter().all(|c| store.has_channel(*c)) {
                Ok(Cow::Borrowed(store))
            } else if let Some(head) = inputs.head {
                Ok(Cow::Owned(apply_head(head, store)?))
            } else {
                Err(EvalError::MissingPrerequisite(RAR_HINT.into()))
            }
        }
        Some(Strategy::Kate) => {
            require_channels(
                store,
                &[Channel::Sentence],
                "strategy kate needs sentence vectors in the embedding file",
            )?;
            Ok(Cow::Borrowed(store))
        }
        Some(Strategy::Ftrr) => {
            require_channels(
                store,
                &[Channel::PureRelation],
                "strategy ftrr needs pure_relation vectors; export them with the embedding exporter",
            )?;
            Ok(Cow::Borrowed(store))
        }
        Some(Strategy::Random) | None => Ok(Cow::Borrowed(store)),
    }
}

fn check_inputs(spec: &ExperimentSpec, inputs: &ExperimentInputs<'_>) -> Result<(), EvalError> {
    spec.validate()?;
    if inputs.test.is_empty() {
        return Err(EvalError::Spec("test corpus is empty".into()));
    }
    for (what, corpus) in [("train", inputs.train), ("test", inputs.test)] {
        if let Some(lang) = corpus.lang() {
            if lang != spec.lang {
                return Err(EvalError::Spec(format!(
                    "{what} corpus is `{lang}` but the experiment language is `{}`",
                    spec.lang
                )));
            }
        }
    }
    if inputs.templates.lang() != spec.lang {
        return Err(EvalError::Spec(format!(
            "templates are for `{}` but the experiment language is `{}`",
            inputs.templates.lang(),
            spec.lang
        )));
    }
    if spec.strategy.is_some() && spec.shots > inputs.train.len() {
        return Err(EvalError::Spec(format!(
            "{} shots requested but the train pool has {} instances",
            spec.shots,
            inputs.train.len()
        )));
    }
    if spec.style.needs_reasoning() && inputs.cot_cache.is_none() {
        return Err(EvalError::Spec(format!("style {} needs a CoT cache directory", spec.style)));
    }
    Ok(())
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    spec: &'a ExperimentSpec,
    model: &'a str,
    temperature: f64,
    max_output_tokens: u32,
    cot_model: Option<&'a str>,
    train: String,
    test: String,
    store: String,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of everything that determines a run's predictions. File paths,
/// concurrency and retry settings are deliberately absent.
pub fn config_hash(
    spec: &ExperimentSpec,
    client: &LlmClient,
    inputs: &ExperimentInputs<'_>,
    store: &EmbeddingStore,
) -> String {
    let cfg = client.config();
    let identity = RunIdentity {
        spec,
        model: &cfg.model_name,
        temperature: cfg.temperature,
        max_output_tokens: cfg.max_output_tokens,
        cot_model: spec
            .style
            .needs_reasoning()
            .then(|| inputs.cot_client.unwrap_or(client).config().model_name.as_str()),
        train: digest(inputs.train.to_jsonl().as_bytes()),
        test: digest(inputs.test.to_jsonl().as_bytes()),
        store: digest(&store.to_binary()),
    };
    digest(serde_json::to_string(&identity).expect("identity serializes").as_bytes())[..16].to_string()
}

fn is_fatal(e: &GatewayError) -> bool {
    matches!(e, GatewayError::Config(_) | GatewayError::MissingApiKey(_) | GatewayError::Auth { .. })
}

fn failed(run: &str, inst: &REInstance, demo_ids: Vec<String>, prompt_hash: String, error: String) -> InstanceRecord {
    InstanceRecord {
        run: run.to_string(),
        id: inst.id.clone(),
        gold: inst.gold,
        predicted: RelationLabel::Invalid,
        rule: MatchRule::None,
        matched_span: String::new(),
        prompt_hash,
        demo_ids,
        response: String::new(),
        error: Some(error),
    }
}

struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    inputs: ExperimentInputs<'a>,
    store: &'a EmbeddingStore,
    client: &'a LlmClient,
    parser: ResponseParser,
    run: String,
}

/// Outcome of [`fill_cot_cache`]: reasoning text or error message per id.
pub struct CotFill {
    pub texts: HashMap<String, Result<String, String>>,
    pub generated: usize,
}

/// Reasoning texts for the given pool ids, generating and caching what is
/// missing. Fatal gateway errors abort; others are kept per id.
pub fn fill_cot_cache(
    pool: &Corpus,
    ids: &BTreeSet<&str>,
    style: CoTStyle,
    templates: &Templates,
    client: &LlmClient,
    cache: &CotCache,
) -> Result<CotFill, EvalError> {
    if !style.needs_reasoning() {
        return Err(EvalError::Spec(format!("style {style} uses no generated reasoning")));
    }
    let model = client.config().model_name.clone();
    let mut texts = HashMap::new();
    let mut missing: Vec<(&str, String)> = Vec::new();
    for id in ids {
        let Some(inst) = pool.get(id) else {
            return Err(EvalError::Spec(format!("`{id}` is not in the train pool")));
        };
        match cache.get(id, style, &model) {
            Ok(Some(entry)) => {
                texts.insert(id.to_string(), Ok(entry.text));
            }
            Ok(None) => match build_cot_request(inst, style, templates) {
                Ok(req) => missing.push((id, req)),
                Err(e) => {
                    texts.insert(id.to_string(), Err(format!("cot: {e}")));
                }
            },
            Err(e) => {
                texts.insert(id.to_string(), Err(format!("cot: {e}")));
            }
        }
    }
    let requests: Vec<String> = missing.iter().map(|(_, r)| r.clone()).collect();
    let mut generated = 0;
    for ((id, _), result) in missing.iter().zip(client.complete_batch(&requests)) {
        let text = match result {
            Ok(rec) => rec.response_text,
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                texts.insert(id.to_string(), Err(format!("cot/{}: {e}", e.kind())));
                continue;
            }
        };
        let entry = CotEntry { instance_id: id.to_string(), style, model: model.clone(), text };
        cache.put(&entry)?;
        generated += 1;
        texts.insert(id.to_string(), Ok(entry.text));
    }
    Ok(CotFill { texts, generated })
}

fn ensure_cot(
    ctx: &Ctx<'_>,
    ids: &BTreeSet<&str>,
    stats: &mut RunStats,
) -> Result<HashMap<String, Result<String, String>>, EvalError> {
    let cache = ctx.inputs.cot_cache.expect("checked before the run");
    let client = ctx.inputs.cot_client.unwrap_or(ctx.client);
    let fill = fill_cot_cache(ctx.inputs.train, ids, ctx.spec.style, ctx.inputs.templates, client, cache)?;
    stats.cot_generated += fill.generated;
    Ok(fill.texts)
}

fn render_prompt(
    ctx: &Ctx<'_>,
    test: &REInstance,
    demo_ids: &[String],
    cot: &HashMap<String, Result<String, String>>,
) -> Result<RenderedPrompt, String> {
    let style = ctx.spec.style;
    let demos = demo_ids
        .iter()
        .map(|id| {
            let inst = ctx.inputs.train.get(id).expect("retrieved ids come from the pool");
            let text = if style.needs_reasoning() {
                Some(cot.get(id).cloned().unwrap_or_else(|| Err(format!("cot: no reasoning for {id}")))?)
            } else {
                None
            };
            render_demonstration(inst, style, text.as_deref(), ctx.inputs.templates).map_err(|e| format!("prompt: {e}"))
        })
        .collect::<Result<Vec<Demonstration>, String>>()?;
    assemble_prompt(test, &demos, style, ctx.spec.demo_order, ctx.inputs.templates).map_err(|e| format!("prompt: {e}"))
}

fn evaluate_chunk(
    ctx: &Ctx<'_>,
    chunk: &[&REInstance],
    stats: &mut RunStats,
) -> Result<Vec<InstanceRecord>, EvalError> {
    let ids: Vec<&str> = chunk.iter().map(|i| i.id.as_str()).collect();
    let retrieved: Vec<Result<Vec<String>, String>> = match ctx.spec.strategy {
        None => chunk.iter().map(|_| Ok(Vec::new())).collect(),
        Some(strategy) => demo_retrieval(ctx.spec, strategy, ctx.inputs.train, ctx.store, &ids)
            .into_iter()
            .map(|r| r.map(|res| res.demos.into_iter().map(|d| d.id).collect()).map_err(|e| format!("retrieval: {e}")))
            .collect(),
    };

    let cot = if ctx.spec.style.needs_reasoning() {
        let wanted: BTreeSet<&str> = retrieved.iter().flatten().flatten().map(String::as_str).collect();
        ensure_cot(ctx, &wanted, stats)?
    } else {
        HashMap::new()
    };

    let prompts: Vec<Result<RenderedPrompt, String>> = chunk
        .iter()
        .zip(&retrieved)
        .map(|(test, r)| r.clone().and_then(|ids| render_prompt(ctx, test, &ids, &cot)))
        .collect();
    let texts: Vec<String> = prompts.iter().filter_map(|p| p.as_ref().ok()).map(|p| p.full_text.clone()).collect();
    let mut answers = ctx.client.complete_batch(&texts).into_iter();

    let mut records = Vec::with_capacity(chunk.len());
    for ((test, r), prompt) in chunk.iter().zip(retrieved).zip(prompts) {
        let demo_ids = r.unwrap_or_default();
        let prompt = match prompt {
            Ok(p) => p,
            Err(e) => {
                records.push(failed(&ctx.run, test, demo_ids, String::new(), e));
                continue;
            }
        };
        match answers.next().expect("one answer per prompt") {
            Ok(rec) => {
                let parsed = ctx.parser.parse(&rec.response_text);
                records.push(InstanceRecord {
                    run: ctx.run.clone(),
                    id: test.id.clone(),
                    gold: test.gold,
                    predicted: parsed.label,
                    rule: parsed.rule,
                    matched_span: parsed.matched_span,
                    prompt_hash: prompt.content_hash,
                    demo_ids: prompt.demo_ids,
                    response: rec.response_text,
                    error: None,
                });
            }
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                let msg = format!("gateway/{}: {e}", e.kind());
                records.push(failed(&ctx.run, test, prompt.demo_ids, prompt.content_hash, msg));
            }
        }
    }
    stats.evaluated += records.len();
    Ok(records)
}

fn demo_retrieval(
    spec: &ExperimentSpec,
    strategy: Strategy,
    pool: &Corpus,
    store: &EmbeddingStore,
    query_ids: &[&str],
) -> Vec<Result<RetrievalResult, RetrievalError>> {
    let rctx = RetrievalContext { pool, store, weights: spec.weights, k: spec.shots, strategy, seed: spec.seed };
    retrieve_batch(query_ids, &rctx, spec.per_query_seed())
}

/// The demonstrations a run of `spec` shows each query, in query order.
pub fn retrieve_demos(
    spec: &ExperimentSpec,
    inputs: &ExperimentInputs<'_>,
    query_ids: &[&str],
) -> Result<Vec<Result<RetrievalResult, RetrievalError>>, EvalError> {
    spec.validate()?;
    let strategy =
        spec.strategy.ok_or_else(|| EvalError::Spec(format!("style {} retrieves no demonstrations", spec.style)))?;
    let store = prepare_store(spec, inputs)?;
    Ok(demo_retrieval(spec, strategy, inputs.train, &store, query_ids))
}

/// Checks the spec against the inputs and resolves strategy prerequisites
/// without retrieving or calling any endpoint.
pub fn preflight(spec: &ExperimentSpec, inputs: &ExperimentInputs<'_>) -> Result<(), EvalError> {
    check_inputs(spec, inputs)?;
    prepare_store(spec, inputs).map(|_| ())
}

/// Evaluates every test instance. With `report_path`, records already in
/// the file are reused, new ones are appended chunk by chunk, and the
/// completed report replaces the file.
pub fn run_experiment(
    spec: &ExperimentSpec,
    inputs: ExperimentInputs<'_>,
    client: &LlmClient,
    report_path: Option<&Path>,
) -> Result<EvalReport, EvalError> {
    check_inputs(spec, &inputs)?;
    let store = prepare_store(spec, &inputs)?;
    let run = config_hash(spec, client, &inputs, &store);

    let mut records: Vec<InstanceRecord> = Vec::new();
    if let Some(path) = report_path {
        let (existing, _) = read_report(path)?;
        for r in existing {
            if r.run != run {
                return Err(EvalError::Report {
                    path: path.to_path_buf(),
                    message: format!(
                        "holds records of run {} but this configuration is run {run}; delete the file or choose another report path",
                        r.run
                    ),
                });
            }
            if inputs.test.get(&r.id).is_none() {
                return Err(EvalError::Report {
                    path: path.to_path_buf(),
                    message: format!("record `{}` is not in the test corpus", r.id),
                });
            }
            if !records.iter().any(|x: &InstanceRecord| x.id == r.id) {
                records.push(r);
            }
        }
    }
    let mut stats = RunStats { resumed: records.len(), ..RunStats::default() };
    let done: BTreeSet<String> = records.iter().map(|r| r.id.clone()).collect();
    let mut pending: Vec<&REInstance> = inputs.test.iter().filter(|i| !done.contains(&i.id)).collect();
    pending.sort_by(|a, b| a.id.cmp(&b.id));

    let ctx = Ctx {
        spec,
        inputs,
        store: &store,
        client,
        parser: ResponseParser::new(inputs.templates.aliases()),
        run: run.clone(),
    };
    let chunk_size = (client.config().max_concurrency * 4).max(16);
    for chunk in pending.chunks(chunk_size) {
        let fresh = evaluate_chunk(&ctx, chunk, &mut stats)?;
        if let Some(path) = report_path {
            append_records(path, &fresh)?;
        }
        records.extend(fresh);
    }
    stats.llm_cache = client.cache_stats();
    let report = EvalReport::build(records, run, spec.clone(), client.config().model_name.clone(), stats)?;
    if let Some(path) = report_path {
        report.write(path)?;
    }
    Ok(report)
}
