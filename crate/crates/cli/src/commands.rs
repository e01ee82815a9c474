//! Subcommand bodies. Each returns the exit status or an error that maps
//! to exit code 2.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use sunar_core::clients::http::{
    HttpChatClient, HttpConfig, HttpCrossScorer, HttpEmbedder, HttpNli, LLM_API_KEY_ENV, NLI_API_KEY_ENV,
};
use sunar_core::clients::scripted::{FixtureSet, HashEmbedder, ScriptedEmbedder, ScriptedLlm, ScriptedNli, TableScorer};
use sunar_core::clients::{Embedder, RateLimiter};
use sunar_core::corpus::ingest_corpus;
use sunar_core::embedding::{embed_corpus, EmbeddingStore};
use sunar_core::eval::{cover_em_report, evaluate_run, read_run, write_run, EvalReport, Gold, Qrels, RunFile};
use sunar_core::graph::{build_graph, NeighborhoodGraph};
use sunar_core::index::TermIndex;
use sunar_core::nar::{run_nar, NarIteration, NarTrace};
use sunar_core::pipeline::{hop_runs, load_questions, pool_evidence, write_paths, Clients, Engine};
use sunar_core::prompts::Prompts;
use sunar_core::ranking::RankedList;
use sunar_core::scalar::Scalar;
use sunar_core::testkit::suites::{EMBED_FILE, LLM_FILE, NLI_FILE, SCORER_FILE};
use sunar_core::testkit::{build_fixture_suite, star_fixture, SUITES};

use crate::config::{required, ClientMode, Config, Endpoint, NliKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some questions failed; outputs were still written.
    Partial,
}

pub const CONFIG_FILE: &str = "sunar.toml";
pub const PATHS_FILE: &str = "paths.jsonl";
pub const RUN_FILE: &str = "run.txt";
pub const HOPS_FILE: &str = "hops.txt";
pub const REPORT_FILE: &str = "report.json";
const RUN_TAG: &str = "sunar";

fn corpus_path(cfg: &Config) -> Result<&Path> {
    required(&cfg.paths.corpus, "corpus", "--corpus")
}

/// Existing artifact or an error naming the command that builds it.
fn artifact<'a>(p: &'a Option<PathBuf>, key: &str, builder: &str) -> Result<&'a Path> {
    let path = required(p, key, &format!("--{key}"))?;
    if !path.exists() {
        bail!("{key} file {} not found; build it with `sunar {builder}`", path.display());
    }
    Ok(path)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn index(cfg: &Config) -> Result<Status> {
    let corpus_path = corpus_path(cfg)?;
    let out = required(&cfg.paths.index, "index", "--index")?;
    let corpus = ingest_corpus(corpus_path).with_context(|| format!("ingesting {}", corpus_path.display()))?;
    let index = TermIndex::build(&corpus);
    ensure_parent(out)?;
    index.save(out)?;
    let stats = index.stats();
    println!(
        "indexed {} documents, {} terms, avg length {:.2} -> {}",
        index.doc_count(),
        index.terms().count(),
        stats.avg_doc_length,
        out.display()
    );
    Ok(Status::Ok)
}

fn limiter(e: &Endpoint) -> Option<Arc<RateLimiter>> {
    e.rate_limit.map(|r| Arc::new(RateLimiter::new(r)))
}

fn http_config(e: &Endpoint, name: &str, key_env: &str) -> Result<HttpConfig> {
    let (Some(url), Some(model)) = (&e.base_url, &e.model) else {
        bail!("http mode needs clients.{name}.base_url and clients.{name}.model");
    };
    let mut c = HttpConfig::new(url, model).with_api_key_from_env(key_env);
    c.limiter = limiter(e);
    Ok(c)
}

fn fixture(cfg: &Config, file: &str) -> Result<FixtureSet> {
    let dir = required(&cfg.paths.fixtures, "fixtures", "--fixtures")?;
    let path = dir.join(file);
    FixtureSet::load(&path).with_context(|| format!("loading fixtures {}", path.display()))
}

fn embedder(cfg: &Config) -> Result<Box<dyn Embedder>> {
    let dim = cfg.embed.dim;
    Ok(match cfg.clients.mode {
        ClientMode::Scripted => match &cfg.paths.fixtures {
            Some(dir) if dir.join(EMBED_FILE).exists() => {
                Box::new(ScriptedEmbedder::from_fixture(&fixture(cfg, EMBED_FILE)?, dim))
            }
            _ => Box::new(HashEmbedder::new(dim)),
        },
        ClientMode::Http => Box::new(HttpEmbedder::new(
            http_config(&cfg.clients.embedder, "embedder", LLM_API_KEY_ENV)?,
            dim,
        )),
    })
}

fn clients(cfg: &Config) -> Result<Clients> {
    let c = &cfg.clients;
    Ok(match c.mode {
        ClientMode::Scripted => Clients {
            llm: Arc::new(ScriptedLlm::from_fixture(&fixture(cfg, LLM_FILE)?)),
            nli: Arc::new(ScriptedNli::from_fixture(&fixture(cfg, NLI_FILE)?)),
            scorer: Arc::new(TableScorer::from_fixture(&fixture(cfg, SCORER_FILE)?)),
        },
        ClientMode::Http => {
            let nli_cfg = http_config(&c.nli, "nli", NLI_API_KEY_ENV)?;
            Clients {
                llm: Arc::new(HttpChatClient::new(http_config(&c.llm, "llm", LLM_API_KEY_ENV)?)),
                nli: Arc::new(match c.nli.kind.unwrap_or_default() {
                    NliKind::Chat => HttpNli::chat_judge(nli_cfg),
                    NliKind::Endpoint => HttpNli::endpoint(nli_cfg),
                }),
                scorer: Arc::new(HttpCrossScorer::new(http_config(&c.scorer, "scorer", LLM_API_KEY_ENV)?)),
            }
        }
    })
}

pub fn embed(cfg: &Config) -> Result<Status> {
    let corpus_path = corpus_path(cfg)?;
    let out = required(&cfg.paths.embeddings, "embeddings", "--embeddings")?;
    let corpus = ingest_corpus(corpus_path).with_context(|| format!("ingesting {}", corpus_path.display()))?;
    let e = embedder(cfg)?;
    let store: EmbeddingStore<f64> = embed_corpus(&corpus, e.as_ref(), cfg.embed.dim)?;
    ensure_parent(out)?;
    store.save(out)?;
    println!(
        "embedded {} documents (dim {}) -> {} sha256 {}",
        store.len(),
        store.dim(),
        out.display(),
        sha256_file(out)?
    );
    Ok(Status::Ok)
}

pub fn graph<S: Scalar>(cfg: &Config) -> Result<Status> {
    let input = artifact(&cfg.paths.embeddings, "embeddings", "embed")?;
    let out = required(&cfg.paths.graph, "graph", "--graph")?;
    let store = EmbeddingStore::<S>::load(input)?;
    let (graph, report) = build_graph(&store, cfg.graph.k)?;
    if !report.zero_norm.is_empty() {
        log::warn!("{} documents have zero-norm embeddings", report.zero_norm.len());
    }
    ensure_parent(out)?;
    graph.save(out)?;
    println!(
        "graph over {} documents, {} edges (k={}) -> {}",
        graph.node_count(),
        graph.edge_count(),
        cfg.graph.k,
        out.display()
    );
    Ok(Status::Ok)
}

fn engine<S: Scalar>(cfg: &Config) -> Result<Engine<S>> {
    cfg.validate()?;
    let corpus_path = corpus_path(cfg)?;
    let corpus = ingest_corpus(corpus_path).with_context(|| format!("ingesting {}", corpus_path.display()))?;
    let index = TermIndex::load(artifact(&cfg.paths.index, "index", "index")?)?;
    let graph_path = artifact(&cfg.paths.graph, "graph", "graph")?;
    let graph = NeighborhoodGraph::<S>::load(graph_path)?;
    if let Some(missing) = corpus.iter().find(|d| !graph.contains(&d.doc_id)) {
        log::warn!(
            "document {:?} is not in the graph {}; rebuild it with `sunar graph`",
            missing.doc_id,
            graph_path.display()
        );
    }
    let prompts = match &cfg.paths.prompts {
        Some(dir) => Prompts::from_dir(dir).with_context(|| format!("reading prompts from {}", dir.display()))?,
        None => Prompts::default(),
    };
    Ok(Engine::new(corpus, index, graph, clients(cfg)?, prompts, cfg.pipeline_config())?)
}

fn write_traces<S: Scalar>(path: &Path, traces: &[&NarTrace<S>]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for t in traces {
        t.write_jsonl(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub struct RetrieveOpts {
    pub query: String,
    pub top: usize,
    pub run: Option<PathBuf>,
    pub qid: String,
    pub trace: Option<PathBuf>,
}

pub fn retrieve<S: Scalar>(cfg: &Config, opts: &RetrieveOpts) -> Result<Status> {
    let engine = engine::<S>(cfg)?;
    let (ranked, trace) = engine.retrieve(&opts.query)?;
    for (i, e) in ranked.iter().take(opts.top).enumerate() {
        let origin = match &e.source_doc {
            Some(src) => format!("neighbor of {src}"),
            None => "first stage".into(),
        };
        println!("{:>3} {:<20} {:.6} {origin}", i + 1, e.doc_id, e.score.to_f64().unwrap_or(f64::NAN));
    }
    if let Some(path) = &opts.run {
        let mut run = RunFile::default();
        run.insert(&opts.qid, &ranked);
        ensure_parent(path)?;
        write_run(path, &run, RUN_TAG)?;
    }
    if let Some(path) = &opts.trace {
        write_traces(path, &[&trace])?;
    }
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
struct RunReport {
    questions: usize,
    failed: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cover_em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    retrieval: Option<EvalReport>,
}

pub fn run<S: Scalar>(cfg: &Config) -> Result<Status> {
    let questions_path = required(&cfg.paths.questions, "questions", "--questions")?;
    let out = required(&cfg.paths.output, "output", "--output")?;
    let questions = load_questions(questions_path)?;
    let engine = engine::<S>(cfg)?;
    let outcomes = engine.run_batch(&questions, cfg.workers);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let paths_file = out.join(PATHS_FILE);
    let mut w = BufWriter::new(File::create(&paths_file).with_context(|| format!("creating {}", paths_file.display()))?);
    write_paths(&mut w, &outcomes)?;
    w.flush()?;
    write_run(&out.join(HOPS_FILE), &hop_runs(&outcomes), RUN_TAG)?;

    // Per question: every hop's re-ranked list merged by best score.
    let mut run = RunFile::default();
    let mut failed = Vec::new();
    let mut predictions = Vec::new();
    for o in &outcomes {
        match &o.result {
            Ok(p) => {
                run.insert(&o.qid, &RankedList::from_entries(pool_evidence(&p.steps, usize::MAX)));
                if let Some(e) = &p.error {
                    log::warn!("{}: {e}", o.qid);
                    failed.push(o.qid.clone());
                }
                predictions.push((o.qid.as_str(), p.reported_answer.as_str()));
            }
            Err(e) => {
                log::warn!("{}: {e}", o.qid);
                failed.push(o.qid.clone());
                predictions.push((o.qid.as_str(), ""));
            }
        }
    }
    write_run(&out.join(RUN_FILE), &run, RUN_TAG)?;

    let golds: BTreeMap<&str, &Gold> = questions
        .iter()
        .filter_map(|q| q.answer.as_ref().map(|g| (q.qid.as_str(), g)))
        .collect();
    let cover_em = (!golds.is_empty()).then(|| {
        cover_em_report(
            predictions
                .iter()
                .filter_map(|(q, p)| golds.get(q).map(|g| (*q, *p, *g))),
        )
        .mean
    });
    let retrieval = match &cfg.paths.qrels {
        Some(path) => Some(evaluate_run(&run, &Qrels::load(path)?, &[1, 10])?),
        None => None,
    };
    let report = RunReport {
        questions: questions.len(),
        failed,
        cover_em,
        retrieval,
    };
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;

    println!(
        "answered {}/{} questions -> {}",
        report.questions - report.failed.len(),
        report.questions,
        out.display()
    );
    if let Some(c) = report.cover_em {
        println!("cover-EM {c:.4}");
    }
    if let Some(r) = &report.retrieval {
        for (name, m) in &r.metrics {
            println!("{name} {:.4}", m.mean);
        }
    }
    Ok(if report.failed.is_empty() { Status::Ok } else { Status::Partial })
}

pub fn ask<S: Scalar>(cfg: &Config, question: &str, trace: Option<&Path>, show_path: bool) -> Result<Status> {
    let engine = engine::<S>(cfg)?;
    let path = match engine.answer_question(question) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("question failed: {e}");
            return Ok(Status::Partial);
        }
    };
    if let Some(t) = trace {
        let traces: Vec<&NarTrace<S>> = path.steps.iter().map(|s| &s.trace).collect();
        write_traces(t, &traces)?;
    }
    if show_path {
        eprintln!("{}", path.render());
    }
    for w in &path.warnings {
        log::warn!("{w}");
    }
    if let Some(e) = &path.error {
        eprintln!("question failed: {e}");
        return Ok(Status::Partial);
    }
    println!("{}", path.reported_answer);
    Ok(Status::Ok)
}

pub struct EvalOpts {
    pub run: PathBuf,
    pub qrels: Option<PathBuf>,
    pub ks: Vec<usize>,
    pub answers: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Reported answers keyed by qid from a `paths.jsonl`; failures map to "".
fn read_answers(path: &Path) -> Result<BTreeMap<String, String>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        let Some(qid) = v.get("qid").and_then(Value::as_str) else {
            bail!("{} line {}: missing qid", path.display(), i + 1);
        };
        let answer = v
            .pointer("/path/reported_answer")
            .and_then(Value::as_str)
            .unwrap_or_default();
        out.insert(qid.to_string(), answer.to_string());
    }
    Ok(out)
}

pub fn eval(opts: &EvalOpts) -> Result<Status> {
    let qrels_path = required(&opts.qrels, "qrels", "--qrels")?;
    let run = read_run(&opts.run)?;
    let qrels = Qrels::load(qrels_path)?;
    let mut report = evaluate_run(&run, &qrels, &opts.ks)?;
    if let (Some(a), Some(q)) = (&opts.answers, &opts.questions) {
        let answers = read_answers(a)?;
        let questions = load_questions(q)?;
        let items: Vec<(&str, &str, &Gold)> = questions
            .iter()
            .filter_map(|q| {
                q.answer
                    .as_ref()
                    .map(|g| (q.qid.as_str(), answers.get(&q.qid).map_or("", String::as_str), g))
            })
            .collect();
        report.cover_em = Some(cover_em_report(items));
    }
    let mut seen = std::collections::BTreeSet::new();
    for w in report.metrics.values().flat_map(|m| &m.warnings) {
        if seen.insert(w) {
            log::warn!("{w}");
        }
    }
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &opts.out {
        Some(p) => {
            ensure_parent(p)?;
            fs::write(p, json).with_context(|| format!("writing {}", p.display()))?;
            for (name, m) in &report.metrics {
                println!("{name} {:.4}", m.mean);
            }
        }
        None => print!("{json}"),
    }
    Ok(Status::Ok)
}

#[derive(Deserialize)]
struct TraceRecord {
    sub_question: String,
    #[serde(flatten)]
    iteration: NarIteration<f64>,
}

fn print_trace(records: &[(String, NarIteration<f64>)]) {
    let mut current: Option<&str> = None;
    let mut pools = Vec::new();
    for (sq, it) in records {
        if current != Some(sq.as_str()) {
            if !pools.is_empty() {
                println!("  pools {}", pools.join(","));
                pools.clear();
            }
            println!("{sq}");
            current = Some(sq);
        }
        let scores: Vec<String> = it.final_scores.iter().map(|s| format!("{s:.4}")).collect();
        let fallback = if it.pool != it.scheduled {
            format!(" (scheduled {:?}, empty)", it.scheduled)
        } else {
            String::new()
        };
        let divisor = it.divisor.map(|d| format!(" /{d}")).unwrap_or_default();
        println!(
            "  {:>3} {:?}{fallback} {} [{}]{divisor}",
            it.iteration,
            it.pool,
            it.batch.join(","),
            scores.join(", ")
        );
        pools.push(format!("{:?}", it.pool));
    }
    if !pools.is_empty() {
        println!("  pools {}", pools.join(","));
    }
}

pub fn trace_file(path: &Path) -> Result<Status> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TraceRecord =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        records.push((r.sub_question, r.iteration));
    }
    print_trace(&records);
    Ok(Status::Ok)
}

pub fn trace_star(out: Option<&Path>) -> Result<Status> {
    let f = star_fixture();
    let (_, trace) = run_nar(&f.sub_question, &f.initial, &f.graph, &f.corpus, &f.scorer, None, &f.config)?;
    if let Some(p) = out {
        write_traces(p, &[&trace])?;
    }
    let records: Vec<(String, NarIteration<f64>)> = trace
        .iterations
        .iter()
        .map(|it| (trace.sub_question.clone(), it.clone()))
        .collect();
    print_trace(&records);
    Ok(Status::Ok)
}

pub fn list_suites() -> Result<Status> {
    for s in SUITES {
        println!("{s}");
    }
    Ok(Status::Ok)
}

/// Config that runs a suite directory end to end with scripted clients.
fn suite_config(manifest: &sunar_core::testkit::SuiteManifest) -> Config {
    let mut cfg = Config::default();
    let p = &mut cfg.paths;
    p.corpus = Some("corpus.jsonl".into());
    p.questions = Some("questions.jsonl".into());
    p.qrels = Some("qrels.txt".into());
    p.fixtures = Some(".".into());
    p.index = Some("artifacts/index.json".into());
    p.embeddings = Some("artifacts/embeddings.json".into());
    p.graph = Some("artifacts/graph.txt".into());
    p.output = Some("out".into());
    let pc = &manifest.pipeline;
    cfg.nar = pc.nar;
    cfg.pipeline.l = pc.l;
    cfg.pipeline.max_hops = pc.max_hops;
    cfg.pipeline.retrieval_depth = pc.retrieval_depth;
    cfg.pipeline.asu_enabled = pc.asu_enabled;
    cfg.pipeline.mer_enabled = pc.mer_enabled;
    cfg.pipeline.m = pc.m;
    cfg.pipeline.temperature = pc.temperature;
    cfg.pipeline.exemplars = pc.exemplars;
    cfg.graph.k = manifest.graph_k;
    cfg.embed.dim = manifest.embed_dim;
    cfg.clients.mode = ClientMode::Scripted;
    cfg
}

pub fn fixtures(name: &str, out: Option<&Path>) -> Result<Status> {
    if !SUITES.contains(&name) {
        bail!("unknown suite {name:?}; available: {}", SUITES.join(", "));
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(name));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = build_fixture_suite(name, &dir)?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, suite_config(&manifest).to_toml()?)
        .with_context(|| format!("writing {}", cfg_path.display()))?;
    println!("suite {name} -> {} (config {})", dir.display(), cfg_path.display());
    Ok(Status::Ok)
}
