//! Subcommand implementations. Each one loads and checks its inputs
//! first, so `--dry-run` can stop before anything is written or sent.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use rarex_core::corpus::{stratified_sample, Corpus, Split};
use rarex_core::embedding::{Channel, EmbeddingStore};
use rarex_core::error::{MiningError, RetrievalError, TrainError};
use rarex_core::mining::{mine_pairs, read_pairs, write_pairs, Polarity};
use rarex_core::projection::{apply_head, ProjectionHead};
use rarex_core::prompt::{assemble_prompt, render_demonstration, CoTStyle, CotCache};
use rarex_core::retrieval::{retrieve_batch, write_dump, RetrievalContext, Strategy};
use rarex_core::training::train;
use rarex_eval::emit::{ablation_csv, ablation_markdown, per_class_csv, summary_csv, summary_markdown, SummaryRow};
use rarex_eval::{
    ablate_shots, fill_cot_cache, preflight, read_report, reaggregate, retrieve_demos, run_experiment,
    ExperimentInputs, ExperimentSpec,
};
use rarex_gateway::LlmClient;
use serde_json::json;

use crate::config::Config;
use crate::failure::{Classify, CmdResult, Failure};
use crate::load;
use crate::manifest::RunManifest;

pub struct Ctx {
    pub config_path: PathBuf,
    pub seed: Option<u64>,
    pub dry_run: bool,
}

impl Ctx {
    pub fn config(&self) -> CmdResult<Config> {
        Config::load(&self.config_path, self.seed).invalid()
    }

    /// Prints the plan; true when the command should stop here.
    fn plan(&self, lines: &[String]) -> bool {
        if self.dry_run {
            for l in lines {
                println!("dry-run: {l}");
            }
        }
        self.dry_run
    }
}

fn invalid(msg: impl std::fmt::Display) -> Failure {
    Failure::Invalid(anyhow!("{msg}"))
}

fn ensure_parent(path: &Path) -> CmdResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| anyhow!("cannot create {}: {e}", parent.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CmdResult<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| anyhow!("cannot write {}: {e}", path.display()))?;
    Ok(())
}

fn mining_failure(e: MiningError) -> Failure {
    Failure::by(!matches!(e, MiningError::PairFile { .. }), e)
}

fn train_failure(e: TrainError) -> Failure {
    let runtime = matches!(e, TrainError::Diverged { .. } | TrainError::NonFinite | TrainError::HeadFile { .. });
    Failure::by(!runtime, e)
}

fn retrieval_failure(e: RetrievalError) -> Failure {
    Failure::by(!matches!(e, RetrievalError::Dump { .. }), e)
}

fn channel_dims(store: &EmbeddingStore) -> serde_json::Map<String, serde_json::Value> {
    store.channel_dims().iter().map(|(c, d)| (c.to_string(), json!(d))).collect()
}

fn print_histogram(corpus: &Corpus) {
    for (label, n) in corpus.label_histogram() {
        println!("  {:<6} {n}", label.code());
    }
}

pub fn corpus_validate(ctx: &Ctx, input: Option<PathBuf>, split: Split) -> CmdResult {
    let cfg = ctx.config()?;
    let targets: Vec<(Split, PathBuf)> = match input {
        Some(path) => vec![(split, path)],
        None => [(Split::Train, &cfg.paths.train), (Split::Test, &cfg.paths.test)]
            .into_iter()
            .filter_map(|(s, p)| p.clone().map(|p| (s, p)))
            .collect(),
    };
    if targets.is_empty() {
        return Err(invalid("config sets neither paths.train nor paths.test"));
    }
    for (split, path) in targets {
        let corpus = load::corpus_at(&path, &cfg, split)?;
        println!("{} {}: {} instances", split_name(split), path.display(), corpus.len());
        print_histogram(&corpus);
    }
    Ok(())
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

pub fn corpus_sample(ctx: &Ctx, n: usize, split: Split, output: Option<PathBuf>) -> CmdResult {
    let cfg = ctx.config()?;
    let (input, corpus) = load::corpus(&cfg, split)?;
    let out = output.unwrap_or_else(|| cfg.out_dir().join(format!("{}-sample-{n}.jsonl", split_name(split))));
    let sample = stratified_sample(&corpus, n, cfg.seed)?;
    if ctx.plan(&[format!("would write {n} of {} {} instances to {}", corpus.len(), split_name(split), out.display())])
    {
        return Ok(());
    }
    let mut manifest = RunManifest::start("corpus sample", Some(&cfg));
    manifest.input(&input)?;
    ensure_parent(&out)?;
    sample.write_jsonl(&out)?;
    manifest.details = json!({ "n": n, "split": split, "histogram": sample.label_histogram() });
    manifest.finish(&out, &[&out])?;
    println!("sampled {n} instances -> {}", out.display());
    print_histogram(&sample);
    Ok(())
}

pub fn embed_import(ctx: &Ctx, input: &Path, output: Option<PathBuf>) -> CmdResult {
    let cfg = ctx.config()?;
    let store = load::store_at(input)?;
    let out = match output {
        Some(p) => p,
        None => cfg.require(&cfg.paths.embeddings, "embeddings").invalid()?,
    };
    for split in [Split::Train, Split::Test] {
        let configured = match split {
            Split::Train => cfg.paths.train.is_some(),
            Split::Test => cfg.paths.test.is_some(),
        };
        if !configured {
            continue;
        }
        let (_, corpus) = load::corpus(&cfg, split)?;
        let missing: Vec<&str> = corpus
            .iter()
            .map(|i| i.id.as_str())
            .filter(|id| [Channel::Sentence, Channel::E1, Channel::E2].iter().any(|c| store.get(id, *c).is_none()))
            .collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(5).copied().collect();
            return Err(invalid(format!(
                "{} of {} {} instances lack sentence/e1/e2 vectors in {} (first: {})",
                missing.len(),
                corpus.len(),
                split_name(split),
                input.display(),
                shown.join(", ")
            )));
        }
    }
    let dims: Vec<String> = store.channel_dims().iter().map(|(c, d)| format!("{c}={d}")).collect();
    if ctx.plan(&[format!("would write {} ids ({}) to {}", store.len(), dims.join(", "), out.display())]) {
        return Ok(());
    }
    let mut manifest = RunManifest::start("embed import", Some(&cfg));
    manifest.input(input)?;
    ensure_parent(&out)?;
    store.save(&out)?;
    manifest.details = json!({ "ids": store.len(), "channels": channel_dims(&store) });
    manifest.finish(&out, &[&out])?;
    println!("imported {} ids ({}) -> {}", store.len(), dims.join(", "), out.display());
    Ok(())
}

pub fn pairs_mine(ctx: &Ctx) -> CmdResult {
    let cfg = ctx.config()?;
    let (train_path, corpus) = load::corpus(&cfg, Split::Train)?;
    let (store_path, store) = load::base_store(&cfg)?;
    let k = cfg.mining.pairs_per_anchor;
    let out = cfg.pairs_path();
    if ctx.plan(&[format!("would mine {k}+{k} pairs for each of {} anchors into {}", corpus.len(), out.display())]) {
        return Ok(());
    }
    let pairs = mine_pairs(&corpus, &store, &cfg.mining.weights, k).map_err(mining_failure)?;
    let mut manifest = RunManifest::start("pairs mine", Some(&cfg));
    manifest.input(&train_path)?;
    manifest.input(&store_path)?;
    ensure_parent(&out)?;
    write_pairs(&pairs, &out).map_err(mining_failure)?;
    let positives = pairs.iter().filter(|p| p.polarity == Polarity::Positive).count();
    manifest.details = json!({ "pairs": pairs.len(), "positives": positives, "pairs_per_anchor": k });
    manifest.finish(&out, &[&out])?;
    println!("mined {} pairs ({positives} positive) -> {}", pairs.len(), out.display());
    Ok(())
}

pub fn head_train(ctx: &Ctx) -> CmdResult {
    let cfg = ctx.config()?;
    let pairs_path = cfg.pairs_path();
    if !pairs_path.exists() {
        return Err(invalid(format!("no pair file at {}; run `rarex pairs mine` first", pairs_path.display())));
    }
    let pairs = read_pairs(&pairs_path).invalid()?;
    let (store_path, store) = load::base_store(&cfg)?;
    let out = cfg.head_path();
    let t = &cfg.training;
    if ctx.plan(&[format!(
        "would train on {} pairs for {} epochs (batch {}, lr {}, tau {}) and write {}",
        pairs.len(),
        t.epochs,
        t.batch_size,
        t.learning_rate,
        t.temperature,
        out.display()
    )]) {
        return Ok(());
    }
    let outcome = train(cfg.seed, &pairs, &store, t).map_err(train_failure)?;
    let mut manifest = RunManifest::start("head train", Some(&cfg));
    manifest.input(&pairs_path)?;
    manifest.input(&store_path)?;
    ensure_parent(&out)?;
    let config = serde_json::to_value(t).expect("training config serializes");
    outcome.head.save(&out, cfg.seed, config, &outcome.epoch_losses).map_err(train_failure)?;
    manifest.details = json!({
        "dims": outcome.head.dims(),
        "initial_loss": outcome.initial_loss,
        "epoch_losses": outcome.epoch_losses,
    });
    manifest.finish(&out, &[&out])?;
    println!("initial loss {:.6}", outcome.initial_loss);
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {} loss {loss:.6}", i + 1);
    }
    println!("head -> {}", out.display());
    Ok(())
}

fn require_head(cfg: &Config) -> CmdResult<(PathBuf, ProjectionHead)> {
    load::head(cfg)?.ok_or_else(|| {
        invalid(format!("no trained head at {}; run `rarex head train` first", cfg.head_path().display()))
    })
}

pub fn head_apply(ctx: &Ctx) -> CmdResult {
    let cfg = ctx.config()?;
    let (head_path, head) = require_head(&cfg)?;
    let (store_path, store) = load::base_store(&cfg)?;
    let out = cfg.finetuned_path();
    if ctx.plan(&[format!("would project {} ids through the head into {}", store.len(), out.display())]) {
        return Ok(());
    }
    let projected = apply_head(&head, &store).map_err(train_failure)?;
    let mut manifest = RunManifest::start("head apply", Some(&cfg));
    manifest.input(&head_path)?;
    manifest.input(&store_path)?;
    ensure_parent(&out)?;
    projected.save(&out)?;
    manifest.details = json!({ "ids": projected.len(), "channels": channel_dims(&projected) });
    manifest.finish(&out, &[&out])?;
    println!("fine-tuned vectors for {} ids -> {}", projected.len(), out.display());
    Ok(())
}

/// Store with the channels `strategy` scores on, projecting through the
/// head when rar has no fine-tuned file yet.
fn retrieval_store(cfg: &Config, strategy: Strategy) -> CmdResult<(Vec<PathBuf>, EmbeddingStore)> {
    let (path, store) = load::store_for(cfg, Some(strategy))?;
    let mut inputs = vec![path];
    let needed: &[Channel] = match strategy {
        Strategy::Random => &[],
        Strategy::Kate => &[Channel::Sentence],
        Strategy::Ftrr => &[Channel::PureRelation],
        Strategy::Rar => {
            if load::has_ft_channels(&store) {
                return Ok((inputs, store));
            }
            let Some((head_path, head)) = load::head(cfg)? else {
                return Err(invalid(
                    "strategy rar needs fine-tuned vectors: run `rarex head train` and `rarex head apply` first",
                ));
            };
            inputs.push(head_path);
            let store = apply_head(&head, &store).map_err(train_failure)?;
            return Ok((inputs, store));
        }
    };
    if let Some(c) = needed.iter().find(|c| !store.has_channel(**c)) {
        return Err(invalid(format!("strategy {strategy} needs `{c}` vectors in the embedding file")));
    }
    Ok((inputs, store))
}

pub fn retrieve(ctx: &Ctx, strategy: Option<Strategy>, k: Option<usize>, output: Option<PathBuf>) -> CmdResult {
    let cfg = ctx.config()?;
    let strategy = strategy.unwrap_or(cfg.retrieval.strategy);
    let k = k.unwrap_or(cfg.retrieval.k);
    let (train_path, pool) = load::corpus(&cfg, Split::Train)?;
    let (test_path, test) = load::corpus(&cfg, Split::Test)?;
    let (store_inputs, store) = retrieval_store(&cfg, strategy)?;
    let out = output.unwrap_or_else(|| cfg.out_dir().join(format!("retrieval-{strategy}.jsonl")));
    if k == 0 || k > pool.len() {
        return Err(invalid(format!("k = {k} must be between 1 and the pool size {}", pool.len())));
    }
    if ctx.plan(&[format!(
        "would retrieve {k} {strategy} demonstrations for {} queries into {}",
        test.len(),
        out.display()
    )]) {
        return Ok(());
    }
    let rctx =
        RetrievalContext { pool: &pool, store: &store, weights: cfg.retrieval.weights, k, strategy, seed: cfg.seed };
    let ids: Vec<&str> = test.iter().map(|i| i.id.as_str()).collect();
    let results =
        retrieve_batch(&ids, &rctx, true).into_iter().collect::<Result<Vec<_>, _>>().map_err(retrieval_failure)?;
    let mut manifest = RunManifest::start("retrieve", Some(&cfg));
    for p in [&train_path, &test_path].into_iter().chain(&store_inputs) {
        manifest.input(p)?;
    }
    ensure_parent(&out)?;
    write_dump(&results, &out).map_err(retrieval_failure)?;
    manifest.details = json!({ "strategy": strategy, "k": k, "queries": results.len() });
    manifest.finish(&out, &[&out])?;
    println!("{} queries x {k} {strategy} demonstrations -> {}", results.len(), out.display());
    Ok(())
}

/// Overrides of the `[experiment]` section from the command line.
#[derive(Debug, Default, Clone)]
pub struct ExperimentOverrides {
    pub name: Option<String>,
    pub strategy: Option<Strategy>,
    pub style: Option<CoTStyle>,
    pub shots: Option<usize>,
    pub endpoint: Option<String>,
}

impl ExperimentOverrides {
    fn apply(&self, cfg: &mut Config) {
        let e = &mut cfg.experiment;
        if let Some(n) = &self.name {
            e.name = n.clone();
        }
        if self.strategy.is_some() {
            e.strategy = self.strategy;
        }
        if let Some(s) = self.style {
            e.style = s;
        }
        if let Some(k) = self.shots {
            e.shots = k;
        }
        if self.endpoint.is_some() {
            e.endpoint = self.endpoint.clone();
        }
    }
}

/// Everything an experiment reads, owned.
struct Loaded {
    spec: ExperimentSpec,
    train: Corpus,
    test: Corpus,
    store: EmbeddingStore,
    head: Option<ProjectionHead>,
    templates: rarex_core::prompt::Templates,
    cot_cache: Option<CotCache>,
    input_paths: Vec<PathBuf>,
}

impl Loaded {
    fn new(cfg: &Config) -> CmdResult<Self> {
        let spec = load::spec(cfg)?;
        let (train_path, train) = load::corpus(cfg, Split::Train)?;
        let (test_path, test) = load::corpus(cfg, Split::Test)?;
        let (store_path, store) = load::store_for(cfg, spec.strategy)?;
        let mut input_paths = vec![train_path, test_path, store_path];
        let head = match spec.strategy {
            Some(Strategy::Rar) if !load::has_ft_channels(&store) => load::head(cfg)?.map(|(p, h)| {
                input_paths.push(p);
                h
            }),
            _ => None,
        };
        let templates = load::templates(cfg)?;
        let cot_cache = spec.style.needs_reasoning().then(|| CotCache::new(cfg.cot_cache_path()));
        Ok(Loaded { spec, train, test, store, head, templates, cot_cache, input_paths })
    }

    fn inputs<'a>(&'a self, cot_client: Option<&'a LlmClient>) -> ExperimentInputs<'a> {
        ExperimentInputs {
            train: &self.train,
            test: &self.test,
            store: &self.store,
            head: self.head.as_ref(),
            templates: &self.templates,
            cot_cache: self.cot_cache.as_ref(),
            cot_client,
        }
    }
}

/// Answering client plus a separate reasoning client when one is
/// configured.
fn clients(cfg: &Config, needs_reasoning: bool) -> CmdResult<(String, LlmClient, Option<LlmClient>)> {
    let (name, client) = load::client(cfg, cfg.experiment.endpoint.as_deref())?;
    let cot = match (&cfg.experiment.cot_endpoint, needs_reasoning) {
        (Some(c), true) if *c != name => Some(load::client(cfg, Some(c))?.1),
        _ => None,
    };
    Ok((name, client, cot))
}

pub fn prompt_render(ctx: &Ctx, id: &str, overrides: &ExperimentOverrides, output: Option<PathBuf>) -> CmdResult {
    let mut cfg = ctx.config()?;
    overrides.apply(&mut cfg);
    let loaded = Loaded::new(&cfg)?;
    let spec = &loaded.spec;
    let test = loaded.test.get(id).ok_or_else(|| invalid(format!("`{id}` is not in the test corpus")))?;
    let demo_ids: Vec<String> = match spec.strategy {
        None => Vec::new(),
        Some(_) => {
            let mut r = retrieve_demos(spec, &loaded.inputs(None), &[id])?;
            r.pop().expect("one result per query").map_err(retrieval_failure)?.demos.into_iter().map(|d| d.id).collect()
        }
    };
    let cot_model = if spec.style.needs_reasoning() {
        let name = cfg.experiment.cot_endpoint.as_deref().or(cfg.experiment.endpoint.as_deref());
        Some(cfg.endpoint(name).invalid()?.1.model_name)
    } else {
        None
    };
    let mut demos = Vec::with_capacity(demo_ids.len());
    for did in &demo_ids {
        let inst = loaded.train.get(did).expect("retrieved from the pool");
        let cot = match (&loaded.cot_cache, &cot_model) {
            (Some(cache), Some(model)) => {
                let entry = cache.get(did, spec.style, model).runtime()?.ok_or_else(|| {
                    invalid(format!("no cached {} reasoning for `{did}`; run `rarex cot generate` first", spec.style))
                })?;
                Some(entry.text)
            }
            _ => None,
        };
        demos.push(render_demonstration(inst, spec.style, cot.as_deref(), &loaded.templates).invalid()?);
    }
    let prompt = assemble_prompt(test, &demos, spec.style, spec.demo_order, &loaded.templates).invalid()?;
    match output {
        Some(out) if !ctx.dry_run => {
            let mut manifest = RunManifest::start("prompt render", Some(&cfg));
            for p in &loaded.input_paths {
                manifest.input(p)?;
            }
            write_file(&out, &prompt.full_text)?;
            manifest.details = json!({ "id": id, "demo_ids": prompt.demo_ids, "content_hash": prompt.content_hash });
            manifest.finish(&out, &[&out])?;
            println!("prompt for {id} ({} demonstrations) -> {}", prompt.demo_ids.len(), out.display());
        }
        Some(out) => {
            ctx.plan(&[format!("would write the prompt for {id} to {}", out.display())]);
        }
        None => println!("{}", prompt.full_text),
    }
    Ok(())
}

pub fn cot_generate(ctx: &Ctx, overrides: &ExperimentOverrides, all: bool) -> CmdResult {
    let mut cfg = ctx.config()?;
    overrides.apply(&mut cfg);
    if !cfg.experiment.style.needs_reasoning() {
        return Err(invalid(format!(
            "style {} uses no generated reasoning; pick sqp or gold_label",
            cfg.experiment.style
        )));
    }
    let loaded = Loaded::new(&cfg)?;
    let cot_name = cfg.experiment.cot_endpoint.clone().or(cfg.experiment.endpoint.clone());
    let (_, client) = load::client(&cfg, cot_name.as_deref())?;
    let model = client.config().model_name.clone();
    let cache = loaded.cot_cache.as_ref().expect("reasoning style has a cache");

    let wanted: BTreeSet<String> = if all {
        loaded.train.iter().map(|i| i.id.clone()).collect()
    } else {
        let query_ids: Vec<&str> = loaded.test.iter().map(|i| i.id.as_str()).collect();
        let mut ids = BTreeSet::new();
        for r in retrieve_demos(&loaded.spec, &loaded.inputs(None), &query_ids)? {
            ids.extend(r.map_err(retrieval_failure)?.demos.into_iter().map(|d| d.id));
        }
        ids
    };
    let style = loaded.spec.style;
    let cached = wanted.iter().filter(|id| matches!(cache.get(id, style, &model), Ok(Some(_)))).count();
    if ctx.plan(&[format!(
        "would ensure {style} reasoning for {} demonstrations with {model} ({cached} cached, {} to generate) in {}",
        wanted.len(),
        wanted.len() - cached,
        cache.dir().display()
    )]) {
        return Ok(());
    }
    let ids: BTreeSet<&str> = wanted.iter().map(String::as_str).collect();
    let mut manifest = RunManifest::start("cot generate", Some(&cfg));
    for p in &loaded.input_paths {
        manifest.input(p)?;
    }
    let fill = fill_cot_cache(&loaded.train, &ids, style, &loaded.templates, &client, cache)?;
    let failures: Vec<String> =
        fill.texts.iter().filter_map(|(id, r)| r.as_ref().err().map(|e| format!("{id}: {e}"))).collect();
    manifest.details = json!({
        "style": style,
        "model": model,
        "requested": ids.len(),
        "generated": fill.generated,
        "failed": failures.len(),
        "llm_cache": client.cache_stats(),
    });
    std::fs::create_dir_all(cache.dir()).map_err(|e| anyhow!("cannot create {}: {e}", cache.dir().display()))?;
    manifest.finish(cache.dir(), &[])?;
    println!(
        "{style} reasoning for {} demonstrations: {} generated, {} cached, {} failed -> {}",
        ids.len(),
        fill.generated,
        ids.len() - fill.generated - failures.len(),
        failures.len(),
        cache.dir().display()
    );
    if let Some(first) = failures.iter().min() {
        return Err(Failure::Runtime(anyhow!("{} reasoning requests failed (first: {first})", failures.len())));
    }
    Ok(())
}

fn report_path(cfg: &Config, name: &str) -> PathBuf {
    cfg.reports_dir().join(format!("{name}.jsonl"))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn eval_run(ctx: &Ctx, overrides: &ExperimentOverrides) -> CmdResult {
    let mut cfg = ctx.config()?;
    overrides.apply(&mut cfg);
    let loaded = Loaded::new(&cfg)?;
    let (endpoint, client, cot_client) = clients(&cfg, loaded.spec.style.needs_reasoning())?;
    let inputs = loaded.inputs(cot_client.as_ref());
    preflight(&loaded.spec, &inputs)?;
    let path = report_path(&cfg, &loaded.spec.name);
    if ctx.dry_run {
        let (existing, _) = read_report(&path)?;
        ctx.plan(&[
            format!(
                "would evaluate {} test instances with {} ({endpoint}), {} existing records in {}",
                loaded.test.len(),
                client.config().model_name,
                existing.len(),
                path.display()
            ),
            format!(
                "strategy {}, style {}, shots {}",
                loaded.spec.strategy.map_or("none".to_string(), |s| s.to_string()),
                loaded.spec.style,
                loaded.spec.shots
            ),
        ]);
        return Ok(());
    }
    let mut manifest = RunManifest::start("eval run", Some(&cfg));
    for p in &loaded.input_paths {
        manifest.input(p)?;
    }
    let report = run_experiment(&loaded.spec, inputs, &client, Some(&path))?;
    let confusion = sibling(&path, "confusion.csv");
    let per_class = sibling(&path, "per_class.csv");
    write_file(&confusion, &report.summary.metrics.confusion.to_csv())?;
    write_file(&per_class, &per_class_csv(&report.summary.metrics))?;
    manifest.details = json!({
        "config_hash": report.summary.config_hash,
        "endpoint": endpoint,
        "model": report.summary.model,
        "stats": report.stats,
    });
    manifest.finish(&path, &[&path, &confusion, &per_class])?;
    let m = &report.summary.metrics;
    println!(
        "micro-F1 {:.4} (correct {}/{}, invalid {}) -> {}",
        m.micro_f1,
        m.correct,
        m.total,
        m.invalid,
        path.display()
    );
    print!("{}", summary_markdown(&[SummaryRow::from_report(&report)]));
    Ok(())
}

pub fn eval_ablate(ctx: &Ctx, shots: &[usize], overrides: &ExperimentOverrides) -> CmdResult {
    let mut cfg = ctx.config()?;
    overrides.apply(&mut cfg);
    let loaded = Loaded::new(&cfg)?;
    if loaded.spec.strategy.is_none() {
        return Err(invalid("the shot ablation needs a few-shot style and strategy"));
    }
    let (endpoint, client, cot_client) = clients(&cfg, loaded.spec.style.needs_reasoning())?;
    let inputs = loaded.inputs(cot_client.as_ref());
    for &k in shots {
        preflight(&ExperimentSpec { shots: k, ..loaded.spec.clone() }, &inputs)?;
    }
    let dir = cfg.reports_dir();
    let table = dir.join(format!("{}.ablation.csv", loaded.spec.name));
    let shot_list: Vec<String> = shots.iter().map(usize::to_string).collect();
    if ctx.plan(&[format!(
        "would run {} with shots {} on {} ({endpoint}); reports in {}, table {}",
        loaded.spec.name,
        shot_list.join(","),
        client.config().model_name,
        dir.display(),
        table.display()
    )]) {
        return Ok(());
    }
    let mut manifest = RunManifest::start("eval ablate", Some(&cfg));
    for p in &loaded.input_paths {
        manifest.input(p)?;
    }
    let rows = ablate_shots(&loaded.spec, shots, inputs, &client, Some(&dir))?;
    write_file(&table, &ablation_csv(&rows))?;
    let reports: Vec<PathBuf> =
        shots.iter().map(|k| report_path(&cfg, &format!("{}-{k}shot", loaded.spec.name))).collect();
    let mut outputs: Vec<&Path> = vec![&table];
    outputs.extend(reports.iter().map(PathBuf::as_path));
    manifest.details = json!({ "shots": shots, "endpoint": endpoint, "llm_cache": client.cache_stats() });
    manifest.finish(&table, &outputs)?;
    print!("{}", ablation_markdown(&rows));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Markdown,
    Csv,
}

pub fn report(ctx: &Ctx, files: &[PathBuf], format: Format, confusion_dir: Option<PathBuf>) -> CmdResult {
    let mut rows = Vec::new();
    let mut matrices = Vec::new();
    for path in files {
        load::existing(path, "report")?;
        let (records, summary) = read_report(path)?;
        let summary = summary.ok_or_else(|| {
            invalid(format!("{} has no aggregate line; finish it with `rarex eval run`", path.display()))
        })?;
        let recomputed = reaggregate(&records)?;
        if recomputed != summary.metrics {
            return Err(invalid(format!("{}: stored aggregate disagrees with its records", path.display())));
        }
        rows.push(SummaryRow::from_summary(&summary));
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        matrices.push((stem, summary.metrics.confusion.to_csv()));
    }
    match format {
        Format::Markdown => print!("{}", summary_markdown(&rows)),
        Format::Csv => print!("{}", summary_csv(&rows)),
    }
    if let Some(dir) = confusion_dir {
        if ctx.plan(&[format!("would write {} confusion matrices to {}", matrices.len(), dir.display())]) {
            return Ok(());
        }
        let mut manifest = RunManifest::start("report", None);
        for p in files {
            manifest.input(p)?;
        }
        let outs: Vec<PathBuf> = matrices.iter().map(|(stem, _)| dir.join(format!("{stem}.confusion.csv"))).collect();
        for (out, (_, csv)) in outs.iter().zip(&matrices) {
            write_file(out, csv)?;
        }
        let refs: Vec<&Path> = outs.iter().map(PathBuf::as_path).collect();
        manifest.finish(&dir, &refs)?;
    }
    Ok(())
}
