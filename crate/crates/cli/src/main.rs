//! `sunar`: build retrieval artifacts, answer questions, evaluate runs.
//!
//! Exit codes: 0 success, 1 some questions failed, 2 configuration or I/O
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ClientMode, Config};
use sunar_core::prompts::ExemplarSet;

#[derive(Debug, Parser)]
#[command(name = "sunar", version, about = "Graph-aware multi-hop retrieval and question answering")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(flatten)]
    paths: PathFlags,
    /// Client backend.
    #[arg(long, global = true, value_enum)]
    mode: Option<ClientMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct PathFlags {
    /// Corpus JSONL (`id`, `contents`, optional `title`).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    /// Recorded client fixtures (scripted mode).
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Prompt template directory.
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct PipelineFlags {
    /// Batch size per re-ranking iteration.
    #[arg(long)]
    b: Option<usize>,
    /// Re-ranking budget per sub-question.
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    neighbor_limit: Option<usize>,
    /// Evidence passages per step.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    max_hops: Option<usize>,
    /// First-stage candidates handed to re-ranking.
    #[arg(long)]
    depth: Option<usize>,
    /// Disable answer-uncertainty rescoring.
    #[arg(long)]
    no_asu: bool,
    /// Disable the meta-reasoning pass.
    #[arg(long)]
    no_mer: bool,
    /// Answers sampled per batch for uncertainty rescoring.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_parser = parse_exemplars)]
    exemplars: Option<ExemplarSet>,
    /// Run numeric kernels in single precision.
    #[arg(long)]
    f32: bool,
}

fn parse_exemplars(s: &str) -> Result<ExemplarSet, String> {
    match s {
        "wqa" => Ok(ExemplarSet::Wqa),
        "mqa" => Ok(ExemplarSet::Mqa),
        other => Err(format!("unknown exemplar set {other:?} (wqa or mqa)")),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the lexical index over the corpus.
    Index,
    /// Embed every document.
    Embed {
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Build the k-nearest-neighbor document graph from embeddings.
    Graph {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        f32: bool,
    },
    /// Retrieve and re-rank for one query.
    Retrieve {
        query: String,
        /// Entries printed.
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Write the ranking as a run file.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value = "q")]
        qid: String,
        /// Write the re-ranking trace as JSONL.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Answer every question in a JSONL file.
    Run {
        #[arg(long)]
        questions: Option<PathBuf>,
        /// Relevance judgments for the per-question run.
        #[arg(long)]
        qrels: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Answer one question.
    Ask {
        question: String,
        /// Write each hop's re-ranking trace as JSONL.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the reasoning path before the answer.
        #[arg(long)]
        show_path: bool,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Score a run file against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: Option<PathBuf>,
        /// Cutoffs; repeatable.
        #[arg(long = "k", default_values_t = [1usize, 10])]
        ks: Vec<usize>,
        /// Reasoning paths from `run`, for cover-EM.
        #[arg(long, requires = "questions")]
        answers: Option<PathBuf>,
        /// Questions with gold answers, for cover-EM.
        #[arg(long)]
        questions: Option<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a re-ranking trace.
    Trace {
        /// Trace JSONL written by `ask --trace` or `retrieve --trace`.
        #[arg(required_unless_present = "star")]
        file: Option<PathBuf>,
        /// Run the built-in twelve-document star fixture instead.
        #[arg(long, conflicts_with = "file")]
        star: bool,
        /// With --star, also write the trace JSONL here.
        #[arg(long, requires = "star")]
        out: Option<PathBuf>,
    },
    /// Write a scripted fixture suite plus a config that runs it.
    Fixtures {
        #[arg(long, required_unless_present = "list")]
        suite: Option<String>,
        /// List suite names.
        #[arg(long)]
        list: bool,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let f = &cli.paths;
    let p = &mut cfg.paths;
    for (flag, slot) in [
        (&f.corpus, &mut p.corpus),
        (&f.index, &mut p.index),
        (&f.embeddings, &mut p.embeddings),
        (&f.graph, &mut p.graph),
        (&f.fixtures, &mut p.fixtures),
        (&f.prompts, &mut p.prompts),
        (&f.output, &mut p.output),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(m) = cli.mode {
        cfg.clients.mode = m;
    }
    Ok(cfg)
}

impl PipelineFlags {
    fn apply(&self, cfg: &mut Config) {
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.nar.batch_size, self.b);
        set(&mut cfg.nar.budget, self.c);
        set(&mut cfg.nar.neighbor_limit, self.neighbor_limit);
        let p = &mut cfg.pipeline;
        set(&mut p.l, self.l);
        set(&mut p.max_hops, self.max_hops);
        set(&mut p.retrieval_depth, self.depth);
        set(&mut p.m, self.m);
        if let Some(t) = self.temperature {
            p.temperature = t;
        }
        if let Some(e) = self.exemplars {
            p.exemplars = e;
        }
        if self.no_asu {
            p.asu_enabled = false;
        }
        if self.no_mer {
            p.mer_enabled = false;
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<commands::Status> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Index => commands::index(&cfg),
        Command::Embed { dim } => {
            if let Some(d) = dim {
                cfg.embed.dim = d;
            }
            commands::embed(&cfg)
        }
        Command::Graph { k, f32 } => {
            if let Some(k) = k {
                cfg.graph.k = k;
            }
            if f32 {
                commands::graph::<f32>(&cfg)
            } else {
                commands::graph::<f64>(&cfg)
            }
        }
        Command::Retrieve {
            query,
            top,
            run,
            qid,
            trace,
            pipeline,
        } => {
            pipeline.apply(&mut cfg);
            let opts = commands::RetrieveOpts {
                query,
                top,
                run,
                qid,
                trace,
            };
            if pipeline.f32 {
                commands::retrieve::<f32>(&cfg, &opts)
            } else {
                commands::retrieve::<f64>(&cfg, &opts)
            }
        }
        Command::Run {
            questions,
            qrels,
            workers,
            pipeline,
        } => {
            pipeline.apply(&mut cfg);
            if questions.is_some() {
                cfg.paths.questions = questions;
            }
            if qrels.is_some() {
                cfg.paths.qrels = qrels;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if pipeline.f32 {
                commands::run::<f32>(&cfg)
            } else {
                commands::run::<f64>(&cfg)
            }
        }
        Command::Ask {
            question,
            trace,
            show_path,
            pipeline,
        } => {
            pipeline.apply(&mut cfg);
            if pipeline.f32 {
                commands::ask::<f32>(&cfg, &question, trace.as_deref(), show_path)
            } else {
                commands::ask::<f64>(&cfg, &question, trace.as_deref(), show_path)
            }
        }
        Command::Eval {
            run,
            qrels,
            ks,
            answers,
            questions,
            out,
        } => {
            let qrels = qrels.or(cfg.paths.qrels.clone());
            commands::eval(&commands::EvalOpts {
                run,
                qrels,
                ks,
                answers,
                questions,
                out,
            })
        }
        Command::Trace { file, star, out } => {
            if star {
                commands::trace_star(out.as_deref())
            } else {
                commands::trace_file(file.as_deref().expect("clap enforces file or --star"))
            }
        }
        Command::Fixtures { suite, list } => match suite {
            Some(name) if !list => commands::fixtures(&name, cfg.paths.output.as_deref()),
            _ => commands::list_suites(),
        },
    }
}

/// Error chain joined with ": ", skipping causes whose text the message
/// already contains (library errors embed their source).
fn render_error(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::from(2)
        }
    }
}
