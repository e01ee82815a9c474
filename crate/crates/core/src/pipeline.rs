//! Decomposition-driven question answering: each sub-question is retrieved
//! with neighborhood-aware re-ranking, answered over its top-l evidence, and
//! the whole path is optionally re-read by a meta-reasoner.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{llm_generate, ChatRequest, ClientError, CrossScorer, EntailmentJudge, LanguageModel};
use crate::corpus::{Corpus, Document};
use crate::eval::{Gold, RunFile};
use crate::graph::NeighborhoodGraph;
use crate::index::TermIndex;
use crate::nar::{run_nar, FeedbackHook, NarConfig, NarError, NarTrace};
use crate::prompts::{ExemplarSet, Prompts, FINAL_ANSWER, FOLLOW_UP, INTERMEDIATE_ANSWER, NEEDS_FOLLOW_UP};
use crate::ranking::{RankedList, ScoredDoc};
use crate::scalar::Scalar;
use crate::uncertainty::{AsuFeedback, DEFAULT_SAMPLES, DEFAULT_TEMPERATURE};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unparseable decomposition output: {raw:?}")]
    Unparseable { raw: String },
    #[error("no evidence for sub-question {sub_question:?}")]
    NoEvidence { sub_question: String },
    #[error("{stage} call failed: {source}")]
    Client {
        stage: &'static str,
        #[source]
        source: ClientError,
    },
    #[error("retrieval failed for {sub_question:?}: {source}")]
    Retrieval {
        sub_question: String,
        #[source]
        source: NarError,
    },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Evidence passages per step and for the meta-reasoner.
    pub l: usize,
    pub max_hops: usize,
    /// First-stage candidates handed to re-ranking.
    pub retrieval_depth: usize,
    pub nar: NarConfig,
    pub asu_enabled: bool,
    pub mer_enabled: bool,
    pub m: usize,
    pub temperature: f64,
    pub exemplars: ExemplarSet,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            l: 10,
            max_hops: 6,
            retrieval_depth: 100,
            nar: NarConfig::default(),
            asu_enabled: true,
            mer_enabled: true,
            m: DEFAULT_SAMPLES,
            temperature: DEFAULT_TEMPERATURE,
            exemplars: ExemplarSet::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.l == 0 {
            return Err(PipelineError::Config("l must be >= 1".into()));
        }
        if self.max_hops == 0 {
            return Err(PipelineError::Config("max_hops must be >= 1".into()));
        }
        if self.retrieval_depth == 0 {
            return Err(PipelineError::Config("retrieval_depth must be >= 1".into()));
        }
        if self.asu_enabled && self.m == 0 {
            return Err(PipelineError::Config("m must be >= 1".into()));
        }
        self.nar.validate().map_err(|e| match e {
            NarError::Config(msg) => PipelineError::Config(msg),
            other => PipelineError::Config(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    FollowUp(String),
    Final(String),
}

/// A parsed decomposition turn and the prefix of the raw output it consumed
/// (through the end of the marker line, newline-terminated).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub step: Step,
    pub consumed: String,
}

/// Finds the first line carrying a follow-up or final-answer marker.
pub fn parse_decomposition(raw: &str) -> Result<Decomposition, PipelineError> {
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let end = offset + line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        let fu = body.find(FOLLOW_UP);
        let fa = body.find(FINAL_ANSWER);
        let step = match (fu, fa) {
            (Some(i), Some(j)) if j < i => Some(Step::Final(body[j + FINAL_ANSWER.len()..].trim().into())),
            (Some(i), _) => Some(Step::FollowUp(body[i + FOLLOW_UP.len()..].trim().into())),
            (None, Some(j)) => Some(Step::Final(body[j + FINAL_ANSWER.len()..].trim().into())),
            (None, None) => None,
        };
        match step {
            Some(Step::FollowUp(q)) if q.is_empty() => {}
            Some(step) => {
                let mut consumed = raw[..end].to_string();
                if !consumed.ends_with('\n') {
                    consumed.push('\n');
                }
                return Ok(Decomposition { step, consumed });
            }
            None => {}
        }
        offset = end;
    }
    Err(PipelineError::Unparseable { raw: raw.to_string() })
}

/// One greedy decomposition call over the transcript. Generation stops at
/// the model's own intermediate-answer marker.
pub fn decompose_step(
    llm: &dyn LanguageModel,
    prompts: &Prompts,
    exemplars: ExemplarSet,
    transcript: &str,
) -> Result<Decomposition, PipelineError> {
    let req = ChatRequest::user(prompts.render_self_ask(exemplars, transcript)).with_stop(INTERMEDIATE_ANSWER);
    let out = llm_generate(llm, &req).map_err(|source| PipelineError::Client {
        stage: "decompose",
        source,
    })?;
    parse_decomposition(&out[0])
}

/// Single-line answer to a sub-question grounded in `evidence`.
pub fn answer_sub_question(
    llm: &dyn LanguageModel,
    prompts: &Prompts,
    sub_question: &str,
    evidence: &[&Document],
) -> Result<String, PipelineError> {
    if evidence.is_empty() {
        return Err(PipelineError::NoEvidence {
            sub_question: sub_question.to_string(),
        });
    }
    let req = ChatRequest::user(prompts.render_answer(sub_question, evidence));
    let out = llm_generate(llm, &req).map_err(|source| PipelineError::Client {
        stage: "answer",
        source,
    })?;
    Ok(one_line(&out[0]))
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DecompositionStep<S> {
    /// 1-based hop number.
    pub index: usize,
    pub sub_question: String,
    /// Top-l of the re-ranked list.
    pub evidence: Vec<ScoredDoc<S>>,
    pub intermediate_answer: String,
    /// Full re-ranked list; not serialized.
    #[serde(skip)]
    pub ranked: RankedList<S>,
    #[serde(skip)]
    pub trace: NarTrace<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ReasoningPath<S> {
    pub question: String,
    pub steps: Vec<DecompositionStep<S>>,
    /// Answer reached by the sequential decomposition.
    pub final_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mer_answer: Option<String>,
    /// `mer_answer` when present, else `final_answer`.
    pub reported_answer: String,
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl<S: Scalar> ReasoningPath<S> {
    /// `Follow up:` / `Intermediate Answer:` pairs and the sequential answer.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for st in &self.steps {
            s.push_str(&format!(
                "{FOLLOW_UP} {}\n{INTERMEDIATE_ANSWER} {}\n",
                st.sub_question, st.intermediate_answer
            ));
        }
        s.push_str(&format!("{FINAL_ANSWER} {}", self.final_answer));
        s
    }
}

/// Merges every step's re-ranked list keeping each doc's best score, then
/// truncates to `l`.
pub fn pool_evidence<S: Scalar>(steps: &[DecompositionStep<S>], l: usize) -> Vec<ScoredDoc<S>> {
    let all: Vec<ScoredDoc<S>> = steps.iter().flat_map(|s| s.ranked.iter().cloned()).collect();
    RankedList::from_entries(all).top(l).into_entries()
}

/// Text after the first final-answer marker, up to the end of its line.
pub fn parse_final_answer(text: &str) -> Option<String> {
    let i = text.find(FINAL_ANSWER)?;
    let rest = &text[i + FINAL_ANSWER.len()..];
    let a = rest.lines().next().unwrap_or("").trim();
    (!a.is_empty()).then(|| a.to_string())
}

/// Post-hoc answer over the reasoning path and pooled evidence. Falls back to
/// the sequential answer (with a warning) if the call fails or the output
/// lacks the final-answer marker.
pub fn meta_reason<S: Scalar>(
    llm: &dyn LanguageModel,
    prompts: &Prompts,
    path: &mut ReasoningPath<S>,
    evidence: &[&Document],
) -> String {
    let req = ChatRequest::user(prompts.render_meta(&path.question, &path.render(), evidence));
    let answer = match llm_generate(llm, &req) {
        Ok(out) => match parse_final_answer(&out[0]) {
            Some(a) => Some(a),
            None => {
                path.warnings
                    .push("meta-reasoner output lacked a final answer; kept sequential answer".into());
                None
            }
        },
        Err(e) => {
            path.warnings
                .push(format!("meta-reasoner call failed ({e}); kept sequential answer"));
            None
        }
    };
    answer.unwrap_or_else(|| path.final_answer.clone())
}

/// Model handles shared by every question.
#[derive(Clone)]
pub struct Clients {
    pub llm: Arc<dyn LanguageModel>,
    pub nli: Arc<dyn EntailmentJudge>,
    pub scorer: Arc<dyn CrossScorer>,
}

/// Immutable retrieval state plus clients. Shareable across worker threads.
pub struct Engine<S> {
    pub corpus: Corpus,
    pub index: TermIndex,
    pub graph: NeighborhoodGraph<S>,
    pub clients: Clients,
    pub prompts: Arc<Prompts>,
    pub config: PipelineConfig,
}

impl<S: Scalar> Engine<S> {
    pub fn new(
        corpus: Corpus,
        index: TermIndex,
        graph: NeighborhoodGraph<S>,
        clients: Clients,
        prompts: Prompts,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            corpus,
            index,
            graph,
            clients,
            prompts: Arc::new(prompts),
            config,
        })
    }

    fn feedback(&self) -> Option<AsuFeedback> {
        self.config.asu_enabled.then(|| {
            AsuFeedback::new(
                self.clients.llm.clone(),
                self.clients.nli.clone(),
                self.prompts.clone(),
                self.config.m,
                self.config.temperature,
            )
        })
    }

    /// First-stage retrieval followed by re-ranking for one sub-question.
    pub fn retrieve(&self, sub_question: &str) -> Result<(RankedList<S>, NarTrace<S>), PipelineError> {
        let initial = self
            .index
            .sparse_retrieve::<S>(sub_question, self.config.retrieval_depth);
        let fb = self.feedback();
        run_nar(
            sub_question,
            &initial,
            &self.graph,
            &self.corpus,
            self.clients.scorer.as_ref(),
            fb.as_ref().map(|f| f as &dyn FeedbackHook<S>),
            &self.config.nar,
        )
        .map_err(|source| PipelineError::Retrieval {
            sub_question: sub_question.to_string(),
            source,
        })
    }

    fn docs<'a>(&'a self, entries: &[ScoredDoc<S>]) -> Vec<&'a Document> {
        entries.iter().filter_map(|e| self.corpus.get(&e.doc_id)).collect()
    }

    pub fn answer_question(&self, question: &str) -> Result<ReasoningPath<S>, PipelineError> {
        let cfg = &self.config;
        let llm = self.clients.llm.as_ref();
        let mut path = ReasoningPath {
            question: question.to_string(),
            steps: Vec::new(),
            final_answer: String::new(),
            mer_answer: None,
            reported_answer: String::new(),
            transcript: format!("Question: {question}\n{NEEDS_FOLLOW_UP}"),
            error: None,
            warnings: Vec::new(),
        };
        loop {
            let d = decompose_step(llm, &self.prompts, cfg.exemplars, &path.transcript)?;
            match d.step {
                Step::Final(answer) => {
                    path.transcript.push_str(&d.consumed);
                    path.final_answer = answer;
                    break;
                }
                Step::FollowUp(sub_question) => {
                    if path.steps.len() == cfg.max_hops {
                        path.error = Some(format!("hop cap of {} exceeded", cfg.max_hops));
                        path.final_answer.clear();
                        return Ok(path);
                    }
                    let (ranked, trace) = self.retrieve(&sub_question)?;
                    let evidence = ranked.top(cfg.l).into_entries();
                    let answer = answer_sub_question(llm, &self.prompts, &sub_question, &self.docs(&evidence))?;
                    path.transcript.push_str(&d.consumed);
                    path.transcript
                        .push_str(&format!("{INTERMEDIATE_ANSWER} {answer}\n"));
                    path.steps.push(DecompositionStep {
                        index: path.steps.len() + 1,
                        sub_question,
                        evidence,
                        intermediate_answer: answer,
                        ranked,
                        trace,
                    });
                }
            }
        }
        path.reported_answer = path.final_answer.clone();
        if cfg.mer_enabled {
            if path.steps.is_empty() {
                path.warnings
                    .push("no retrieval steps; meta-reasoner skipped".into());
            } else {
                let pooled = pool_evidence(&path.steps, cfg.l);
                let docs = self.docs(&pooled);
                let a = meta_reason(llm, &self.prompts, &mut path, &docs);
                path.reported_answer = a.clone();
                path.mer_answer = Some(a);
            }
        }
        Ok(path)
    }

    /// Answers every question on a pool of `workers` threads. Results keep
    /// input order and do not depend on the worker count.
    pub fn run_batch(&self, questions: &[Question], workers: usize) -> Vec<QuestionOutcome<S>> {
        let work = || {
            questions
                .par_iter()
                .map(|q| QuestionOutcome {
                    qid: q.qid.clone(),
                    result: self.answer_question(&q.question).map_err(|e| e.to_string()),
                })
                .collect()
        };
        match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub qid: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Gold>,
}

pub fn load_questions(path: &Path) -> Result<Vec<Question>, PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    let f = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| PipelineError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn write_questions(path: &Path, questions: &[Question]) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for q in questions {
        writeln!(w, "{}", serde_json::to_string(q).map_err(std::io::Error::other)?)?;
    }
    w.flush()
}

pub struct QuestionOutcome<S> {
    pub qid: String,
    pub result: Result<ReasoningPath<S>, String>,
}

#[derive(Serialize)]
#[serde(bound = "S: Scalar")]
struct PathRecord<'a, S> {
    qid: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<&'a ReasoningPath<S>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a str>,
}

/// One JSON record per outcome: `{qid, path}` or `{qid, failure}`.
pub fn write_paths<S: Scalar, W: Write>(w: &mut W, outcomes: &[QuestionOutcome<S>]) -> std::io::Result<()> {
    for o in outcomes {
        let rec = PathRecord {
            qid: &o.qid,
            path: o.result.as_ref().ok(),
            failure: o.result.as_ref().err().map(String::as_str),
        };
        writeln!(w, "{}", serde_json::to_string(&rec).map_err(std::io::Error::other)?)?;
    }
    Ok(())
}

/// Re-ranked lists keyed `<qid>.<hop>`.
pub fn hop_runs<S: Scalar>(outcomes: &[QuestionOutcome<S>]) -> RunFile {
    let mut run = RunFile::default();
    for o in outcomes {
        if let Ok(p) = &o.result {
            for st in &p.steps {
                run.insert(format!("{}.{}", o.qid, st.index), &st.ranked);
            }
        }
    }
    run
}
