//! Drives the `rarex` binary against the synthetic fixtures.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rarex_core::corpus::{parse_corpus, Lang, Split};
use rarex_core::embedding::{Channel, EmbeddingStore, EmbeddingVector};
use rarex_core::label::RelationLabel;
use serde_json::Value;
use sha2::{Digest, Sha256};

const TERP_REPLY: &str = "TEST REVEALS MEDICAL PROBLEM";

fn fixture(name: &str) -> PathBuf {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../eval/fixtures/synthetic")).join(name)
}

fn terp_share() -> f64 {
    let test = parse_corpus(&fixture("test.jsonl"), Lang::En, Split::Test).unwrap();
    let n = test.label_histogram().get(&RelationLabel::TeRP).copied().unwrap_or(0);
    n as f64 / test.len() as f64
}

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    /// Config over the fixtures with a mock endpoint, plus `extra` TOML.
    fn new(extra: &str) -> Self {
        let sb = Sandbox { dir: tempfile::tempdir().unwrap() };
        sb.write_config(&mock_config(extra));
        sb
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn write_config(&self, text: &str) {
        std::fs::write(self.path().join("rarex.toml"), text).unwrap();
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_rarex"))
            .args(args)
            .current_dir(self.path())
            .env_remove("RAREX_TEST_KEY")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.path().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    fn manifest(&self, artifact: &str) -> Value {
        serde_json::from_slice(&self.read(&format!("{artifact}.manifest.json"))).unwrap()
    }

    /// Every file under the sandbox with its contents.
    fn snapshot(&self) -> BTreeMap<PathBuf, Vec<u8>> {
        fn walk(dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
            for entry in std::fs::read_dir(dir).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    out.insert(p.clone(), Vec::new());
                    walk(&p, out);
                } else {
                    out.insert(p.clone(), std::fs::read(&p).unwrap());
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(self.path(), &mut out);
        out
    }
}

fn mock_config(extra: &str) -> String {
    format!(
        r#"seed = 7
[paths]
train = "{train}"
test = "{test}"
embeddings = "{emb}"

[experiment]
name = "rar-none"
strategy = "rar"
style = "none"
shots = 5
{extra}
[endpoints.mock]
provider = "mock"
model_name = "mock-model"
mock_reply = "{TERP_REPLY}"
"#,
        train = fixture("train.jsonl").display(),
        test = fixture("test.jsonl").display(),
        emb = fixture("embeddings.bin").display(),
    )
}

fn code(out: &Output) -> Option<i32> {
    out.status.code()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn train_head(sb: &Sandbox) {
    sb.ok(&["pairs", "mine"]);
    sb.ok(&["head", "train"]);
}

fn report_micro_f1(bytes: &[u8]) -> f64 {
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let last: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    last["aggregate"]["metrics"]["micro_f1"].as_f64().unwrap()
}

#[test]
fn corpus_validate_prints_counts() {
    let sb = Sandbox::new("");
    let out = sb.ok(&["corpus", "validate"]);
    assert!(out.contains("train.jsonl: 150 instances"), "{out}");
    assert!(out.contains("test.jsonl: 50 instances"), "{out}");
    assert!(out.contains("TeRP"));
}

#[test]
fn invalid_corpus_exits_1() {
    let sb = Sandbox::new("");
    let bad = sb.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"x\", \"sentence\": \"no entities\"}\n").unwrap();
    let out = sb.run(&["corpus", "validate", "--input", bad.to_str().unwrap()]);
    assert_eq!(code(&out), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("bad.jsonl"));
}

#[test]
fn usage_errors_exit_1_with_usage_text() {
    let sb = Sandbox::new("");
    for args in [&["frobnicate"][..], &["corpus", "validate", "--no-such-flag"], &[]] {
        let out = sb.run(args);
        assert_eq!(code(&out), Some(1), "{args:?}");
        assert!(stderr(&out).contains("Usage"), "{args:?}: {}", stderr(&out));
    }
    let out = sb.run(&["--help"]);
    assert_eq!(code(&out), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("eval"));
}

#[test]
fn missing_or_malformed_config_exits_1() {
    let sb = Sandbox::new("");
    let out = sb.run(&["--config", "nope.toml", "corpus", "validate"]);
    assert_eq!(code(&out), Some(1));
    assert!(stderr(&out).contains("nope.toml"));
    sb.write_config("seed = 1\n[paths]\ntrian = \"x\"\n");
    assert_eq!(code(&sb.run(&["corpus", "validate"])), Some(1));
    sb.write_config(&mock_config("").replace(
        "[experiment]",
        "[mining]\nweights = { alpha1 = 0.9, alpha2 = 0.9, alpha3 = 0.9, beta1 = 0.5, beta2 = 0.5 }\n[experiment]",
    ));
    let out = sb.run(&["pairs", "mine"]);
    assert_eq!(code(&out), Some(1), "{}", stderr(&out));
}

#[test]
fn rar_without_head_exits_1_with_hint() {
    let sb = Sandbox::new("");
    let out = sb.run(&["eval", "run"]);
    assert_eq!(code(&out), Some(1));
    assert!(stderr(&out).contains("rarex head train"), "{}", stderr(&out));
    assert!(!sb.path().join("runs").exists());
}

#[test]
fn pipeline_writes_manifests_and_reruns_identically() {
    let sb = Sandbox::new("");
    let steps: [(&[&str], &str); 5] = [
        (&["pairs", "mine"], "runs/pairs.jsonl"),
        (&["head", "train"], "runs/head.jsonl"),
        (&["head", "apply"], "runs/embeddings.ft.bin"),
        (&["retrieve"], "runs/retrieval-rar.jsonl"),
        (&["eval", "run"], "runs/reports/rar-none.jsonl"),
    ];
    let mut first = Vec::new();
    for (args, artifact) in steps {
        sb.ok(args);
        let bytes = sb.read(artifact);
        let m = sb.manifest(artifact);
        assert_eq!(m["seed"], 7, "{artifact}");
        assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
        assert_eq!(m["config"]["experiment"]["name"], "rar-none");
        let key = sb.path().join(artifact).display().to_string();
        let key = key.replace(&format!("{}/", sb.path().display()), "./");
        assert_eq!(m["outputs"][&key], sha(&bytes), "{artifact}: {m}");
        assert!(!m["inputs"].as_object().unwrap().is_empty());
        first.push(bytes);
    }
    let head = sb.manifest("runs/head.jsonl");
    let losses = head["details"]["epoch_losses"].as_array().unwrap();
    assert_eq!(losses.len(), 3);
    assert!(losses.last().unwrap().as_f64().unwrap() < head["details"]["initial_loss"].as_f64().unwrap());

    let report = sb.manifest("runs/reports/rar-none.jsonl");
    assert!(report["details"]["stats"]["llm_cache"]["writes"].as_u64().unwrap() > 0);
    assert!((report_micro_f1(&first[4]) - terp_share()).abs() < 1e-12);
    assert!(sb.path().join("runs/reports/rar-none.confusion.csv").exists());

    std::fs::remove_file(sb.path().join("runs/reports/rar-none.jsonl")).unwrap();
    for ((args, artifact), before) in steps.iter().zip(&first) {
        sb.ok(args);
        assert_eq!(&sb.read(artifact), before, "{artifact} changed on rerun");
    }
    let warm = sb.manifest("runs/reports/rar-none.jsonl");
    assert_eq!(warm["details"]["stats"]["llm_cache"]["writes"], 0);
    assert_eq!(warm["details"]["stats"]["llm_cache"]["hits"], 50);
}

#[test]
fn eval_ablate_prints_three_rows() {
    let sb = Sandbox::new("");
    train_head(&sb);
    let out = sb.ok(&["eval", "ablate", "--shots", "5,10,15"]);
    let rows: Vec<&str> = out.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Shots")).collect();
    assert_eq!(rows.len(), 3, "{out}");
    for (row, k) in rows.iter().zip([5, 10, 15]) {
        assert!(row.starts_with(&format!("| {k} |")), "{row}");
    }
    for k in [5, 10, 15] {
        assert!(sb.path().join(format!("runs/reports/rar-none-{k}shot.jsonl")).exists());
    }
    let csv = String::from_utf8(sb.read("runs/reports/rar-none.ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    sb.manifest("runs/reports/rar-none.ablation.csv");
}

/// Accepts connections on a background thread and answers each request
/// with `status` and `body`. Returns the base URL and a request counter.
fn serve(status: u16, body: String) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let counter = counter.clone();
            let body = body.clone();
            std::thread::spawn(move || handle(stream, status, &body, &counter));
        }
    });
    (url, hits)
}

fn handle(stream: TcpStream, status: u16, body: &str, counter: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    loop {
        let mut length = 0usize;
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        loop {
            line.clear();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
        }
        let mut buf = vec![0; length];
        reader.read_exact(&mut buf).unwrap();
        counter.fetch_add(1, Ordering::SeqCst);
        let reply = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
            body.len()
        );
        let mut w = &stream;
        if w.write_all(reply.as_bytes()).is_err() {
            return;
        }
    }
}

fn http_config(url: &str) -> String {
    mock_config("endpoint = \"remote\"\n").replace(
        "[endpoints.mock]",
        &format!(
            "[endpoints.remote]\nprovider = \"openai_compatible\"\nbase_url = \"{url}\"\nmodel_name = \"remote-model\"\nmax_retries = 0\n\n[endpoints.mock]"
        ),
    )
}

#[test]
fn eval_run_over_http_endpoint() {
    let (url, hits) = serve(200, rarex_gateway::chat_response(TERP_REPLY));
    let sb = Sandbox::new("");
    train_head(&sb);
    sb.write_config(&http_config(&url));
    let out = sb.ok(&["eval", "run"]);
    assert!(out.contains("remote-model (en)"), "{out}");
    assert_eq!(hits.load(Ordering::SeqCst), 50);
    assert!((report_micro_f1(&sb.read("runs/reports/rar-none.jsonl")) - terp_share()).abs() < 1e-12);
    sb.ok(&["eval", "run"]);
    assert_eq!(hits.load(Ordering::SeqCst), 50, "warm rerun must not call the endpoint");
}

#[test]
fn auth_failure_exits_2() {
    let (url, hits) = serve(401, "{\"error\":\"bad key\"}".into());
    let sb = Sandbox::new("");
    train_head(&sb);
    sb.write_config(&http_config(&url));
    let out = sb.run(&["eval", "run"]);
    assert_eq!(code(&out), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("401"), "{}", stderr(&out));
    assert!(hits.load(Ordering::SeqCst) >= 1);
}

#[test]
fn missing_api_key_exits_1() {
    let sb = Sandbox::new("");
    train_head(&sb);
    let cfg = http_config("http://127.0.0.1:9/v1")
        .replace("max_retries = 0", "max_retries = 0\napi_key_env = \"RAREX_TEST_KEY\"");
    sb.write_config(&cfg);
    let out = sb.run(&["eval", "run"]);
    assert_eq!(code(&out), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("RAREX_TEST_KEY"), "{}", stderr(&out));
}

#[test]
fn runtime_failure_exits_2() {
    let sb = Sandbox::new("");
    std::fs::write(sb.path().join("blocker"), "").unwrap();
    sb.write_config(&mock_config("").replace("[paths]", "[paths]\npairs = \"blocker/pairs.jsonl\""));
    let out = sb.run(&["pairs", "mine"]);
    assert_eq!(code(&out), Some(2), "{}", stderr(&out));
}

#[test]
fn dry_run_writes_nothing_and_sends_nothing() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());

    let sb = Sandbox::new("");
    train_head(&sb);
    sb.ok(&["head", "apply"]);
    sb.ok(&["eval", "run"]);
    sb.write_config(&http_config(&url).replace("name = \"rar-none\"", "name = \"fresh\""));
    let before = sb.snapshot();
    let emb = fixture("embeddings.bin");
    let commands: Vec<Vec<&str>> = vec![
        vec!["corpus", "validate"],
        vec!["corpus", "sample", "--n", "10"],
        vec!["embed", "import", "--input", emb.to_str().unwrap(), "--output", "imported.bin"],
        vec!["pairs", "mine"],
        vec!["head", "train"],
        vec!["head", "apply"],
        vec!["retrieve", "--strategy", "kate"],
        vec!["prompt", "render", "--id", "syn-0161", "--output", "prompt.txt"],
        vec!["cot", "generate", "--style", "sqp"],
        vec!["eval", "run"],
        vec!["eval", "run", "--style", "gold_label", "--name", "gl"],
        vec!["eval", "ablate", "--shots", "5,10"],
        vec!["report", "runs/reports/rar-none.jsonl", "--confusion", "conf"],
    ];
    for args in &commands {
        let mut full = vec!["--dry-run"];
        full.extend(args);
        let out = sb.run(&full);
        assert_eq!(code(&out), Some(0), "{args:?}: {}", stderr(&out));
    }
    assert!(sb.snapshot() == before, "dry-run modified the sandbox");
    match listener.accept() {
        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {}
        other => panic!("dry-run contacted the endpoint: {other:?}"),
    }
}

#[test]
fn prompt_render_prints_the_query_prompt() {
    let sb = Sandbox::new("");
    let out = sb.ok(&["prompt", "render", "--id", "syn-0161", "--strategy", "kate"]);
    assert!(out.trim_end().ends_with("Response:"), "{out}");
    assert_eq!(out.matches("Context:").count(), 6);
    let test = parse_corpus(&fixture("test.jsonl"), Lang::En, Split::Test).unwrap();
    assert!(out.contains(&test.get("syn-0161").unwrap().sentence));

    sb.ok(&["prompt", "render", "--id", "syn-0161", "--strategy", "kate", "--output", "p.txt"]);
    assert_eq!(String::from_utf8(sb.read("p.txt")).unwrap().trim_end(), out.trim_end());
    sb.manifest("p.txt");

    let out = sb.run(&["prompt", "render", "--id", "nope"]);
    assert_eq!(code(&out), Some(1));
    let out = sb.run(&["prompt", "render", "--id", "syn-0161", "--strategy", "kate", "--style", "sqp"]);
    assert_eq!(code(&out), Some(1));
    assert!(stderr(&out).contains("rarex cot generate"), "{}", stderr(&out));
}

#[test]
fn cot_generate_fills_the_cache_once() {
    let sb = Sandbox::new("");
    let first = sb.ok(&["cot", "generate", "--style", "gold_label", "--strategy", "kate"]);
    assert!(first.contains("0 cached, 0 failed"), "{first}");
    let m = sb.manifest("runs/cache/cot");
    let generated = m["details"]["generated"].as_u64().unwrap();
    assert!(generated > 0);
    let again = sb.ok(&["cot", "generate", "--style", "gold_label", "--strategy", "kate"]);
    assert!(again.contains(&format!("0 generated, {generated} cached")), "{again}");
    sb.ok(&["prompt", "render", "--id", "syn-0161", "--strategy", "kate", "--style", "gold_label"]);
    let out = sb.run(&["cot", "generate", "--style", "none"]);
    assert_eq!(code(&out), Some(1));
}

#[test]
fn corpus_sample_is_stratified_and_repeatable() {
    let sb = Sandbox::new("");
    sb.ok(&["corpus", "sample", "--n", "20"]);
    let bytes = sb.read("runs/test-sample-20.jsonl");
    assert_eq!(String::from_utf8(bytes.clone()).unwrap().lines().count(), 20);
    sb.manifest("runs/test-sample-20.jsonl");
    sb.ok(&["corpus", "sample", "--n", "20"]);
    assert_eq!(sb.read("runs/test-sample-20.jsonl"), bytes);
    sb.ok(&["--seed", "8", "corpus", "sample", "--n", "20", "--output", "other.jsonl"]);
    assert_eq!(sb.manifest("other.jsonl")["seed"], 8);
    let out = sb.run(&["corpus", "sample", "--n", "500"]);
    assert_eq!(code(&out), Some(1));
}

#[test]
fn embed_import_checks_coverage() {
    let sb = Sandbox::new("");
    sb.ok(&["embed", "import", "--input", fixture("embeddings.bin").to_str().unwrap(), "--output", "store.jsonl"]);
    let original = EmbeddingStore::load(&fixture("embeddings.bin")).unwrap();
    let imported = EmbeddingStore::load(&sb.path().join("store.jsonl")).unwrap();
    assert_eq!(imported.to_binary(), original.to_binary());
    sb.manifest("store.jsonl");

    let mut partial = EmbeddingStore::new();
    for c in [Channel::Sentence, Channel::E1, Channel::E2] {
        partial.insert("syn-0001", c, EmbeddingVector::new(vec![1.0, 0.0])).unwrap();
    }
    partial.save(&sb.path().join("partial.bin")).unwrap();
    let out = sb.run(&["embed", "import", "--input", "partial.bin", "--output", "x.bin"]);
    assert_eq!(code(&out), Some(1));
    assert!(stderr(&out).contains("lack sentence/e1/e2 vectors"), "{}", stderr(&out));
    assert!(!sb.path().join("x.bin").exists());
}

#[test]
fn report_rechecks_stored_aggregates() {
    let sb = Sandbox::new("");
    sb.ok(&["eval", "run", "--strategy", "kate", "--name", "k"]);
    let md = sb.ok(&["report", "runs/reports/k.jsonl"]);
    assert!(md.contains("| kate / none |"), "{md}");
    let csv = sb.ok(&["report", "runs/reports/k.jsonl", "--format", "csv", "--confusion", "conf"]);
    assert!(csv.starts_with("experiment,strategy"));
    assert_eq!(sb.read("conf/k.confusion.csv"), sb.read("runs/reports/k.confusion.csv"));

    let text = String::from_utf8(sb.read("runs/reports/k.jsonl")).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.contains("\"predicted\":\"TeRP\""), "{first}");
    let flipped = first.replace("\"predicted\":\"TeRP\"", "\"predicted\":\"PIP\"");
    std::fs::write(sb.path().join("tampered.jsonl"), text.replacen(first, &flipped, 1)).unwrap();
    let out = sb.run(&["report", "tampered.jsonl"]);
    assert_eq!(code(&out), Some(1), "{}", stderr(&out));
}
