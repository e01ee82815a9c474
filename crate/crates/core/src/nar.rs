//! Neighborhood-aware re-ranking: budgeted batch scoring that alternates
//! between the first-stage candidates and a neighbor pool grown from the
//! corpus graph, with an optional per-batch feedback hook.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{cross_score, ClientError, CrossScorer};
use crate::corpus::{Corpus, Document};
use crate::graph::NeighborhoodGraph;
use crate::ranking::{RankedList, ScoredDoc};
use crate::scalar::{cmp_scalar, Scalar};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum NarError {
    #[error("empty first-stage retrieval")]
    EmptyInitial,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("document {doc_id:?} is not in the corpus (iteration {iteration})")]
    UnknownDoc { iteration: usize, doc_id: String },
    #[error("scorer failed at iteration {iteration}: {source}")]
    Scorer {
        iteration: usize,
        #[source]
        source: ClientError,
    },
    #[error("feedback failed at iteration {iteration}: {source}")]
    Feedback {
        iteration: usize,
        #[source]
        source: BoxError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pool {
    R,
    N,
}

impl Pool {
    pub fn other(self) -> Self {
        match self {
            Pool::R => Pool::N,
            Pool::N => Pool::R,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NarConfig {
    /// Documents scored per iteration (`b`).
    pub batch_size: usize,
    /// Total documents scored per call (`c`).
    pub budget: usize,
    /// Neighbors looked up per scored document.
    pub neighbor_limit: usize,
    pub start_pool: Pool,
}

impl Default for NarConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            budget: 100,
            neighbor_limit: 10,
            start_pool: Pool::R,
        }
    }
}

impl NarConfig {
    pub fn new(batch_size: usize, budget: usize, neighbor_limit: usize) -> Self {
        Self {
            batch_size,
            budget,
            neighbor_limit,
            start_pool: Pool::R,
        }
    }

    pub fn validate(&self) -> Result<(), NarError> {
        if self.batch_size == 0 || self.batch_size > self.budget {
            return Err(NarError::Config(format!(
                "need 1 <= b <= c, got b={} c={}",
                self.batch_size, self.budget
            )));
        }
        Ok(())
    }
}

/// Result of a feedback hook over one scored batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackOutcome<S> {
    /// Uniform divisor applied to the batch (number of semantic sets).
    pub divisor: usize,
    /// Rescored values, in batch order.
    pub scores: Vec<S>,
}

/// Per-batch rescoring step invoked after cross-scoring.
pub trait FeedbackHook<S>: Send + Sync {
    fn rescore(
        &self,
        sub_question: &str,
        batch: &[ScoredDoc<S>],
        docs: &[&Document],
    ) -> Result<FeedbackOutcome<S>, BoxError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct NarIteration<S> {
    pub iteration: usize,
    /// Pool the alternation schedule asked for.
    pub scheduled: Pool,
    /// Pool actually drawn from (differs only on empty-pool fallback).
    pub pool: Pool,
    pub batch: Vec<String>,
    pub sources: Vec<Option<String>>,
    pub logits: Vec<S>,
    /// Logistic-transformed cross-scorer outputs.
    pub raw_scores: Vec<S>,
    pub divisor: Option<usize>,
    pub final_scores: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct NarTrace<S> {
    pub sub_question: String,
    pub iterations: Vec<NarIteration<S>>,
}

#[derive(Serialize)]
#[serde(bound = "S: Scalar")]
struct TraceLine<'a, S> {
    sub_question: &'a str,
    #[serde(flatten)]
    iteration: &'a NarIteration<S>,
}

impl<S: Scalar> NarTrace<S> {
    /// Doc ids in scoring order.
    pub fn scored_ids(&self) -> Vec<&str> {
        self.iterations
            .iter()
            .flat_map(|it| it.batch.iter().map(String::as_str))
            .collect()
    }

    pub fn pools(&self) -> Vec<Pool> {
        self.iterations.iter().map(|it| it.pool).collect()
    }

    /// One JSON object per iteration.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for it in &self.iterations {
            let line = serde_json::to_string(&TraceLine {
                sub_question: &self.sub_question,
                iteration: it,
            })
            .map_err(std::io::Error::other)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Neighbor priority: source document's final score, then graph similarity,
/// then ascending doc_id.
#[derive(Debug, Clone, PartialEq)]
pub struct Priority<S> {
    pub source_score: S,
    pub similarity: S,
    pub source: String,
}

impl<S: Scalar> Priority<S> {
    fn beats(&self, other: &Self) -> bool {
        cmp_scalar(self.source_score, other.source_score)
            .then_with(|| cmp_scalar(self.similarity, other.similarity))
            .is_gt()
    }
}

/// Neighbor pool `N`.
#[derive(Debug, Clone, Default)]
pub struct NeighborPool<S> {
    members: HashMap<String, Priority<S>>,
}

impl<S: Scalar> NeighborPool<S> {
    pub fn new() -> Self {
        Self {
            members: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.members.contains_key(doc_id)
    }

    pub fn priority(&self, doc_id: &str) -> Option<&Priority<S>> {
        self.members.get(doc_id)
    }

    /// Adds `doc_id`, keeping whichever priority is higher if already pooled.
    pub fn offer(&mut self, doc_id: &str, priority: Priority<S>) {
        match self.members.get_mut(doc_id) {
            Some(existing) if !priority.beats(existing) => {}
            Some(existing) => *existing = priority,
            None => {
                self.members.insert(doc_id.to_string(), priority);
            }
        }
    }

    pub fn remove(&mut self, doc_id: &str) {
        self.members.remove(doc_id);
    }

    /// Members in priority order.
    pub fn ordered(&self) -> Vec<(&str, &Priority<S>)> {
        let mut v: Vec<(&str, &Priority<S>)> =
            self.members.iter().map(|(k, p)| (k.as_str(), p)).collect();
        v.sort_by(|a, b| {
            cmp_scalar(b.1.source_score, a.1.source_score)
                .then_with(|| cmp_scalar(b.1.similarity, a.1.similarity))
                .then_with(|| a.0.cmp(b.0))
        });
        v
    }

    /// Removes and returns the `n` highest-priority members.
    pub fn take_top(&mut self, n: usize) -> Vec<(String, Priority<S>)> {
        let ids: Vec<String> = self
            .ordered()
            .into_iter()
            .take(n)
            .map(|(id, _)| id.to_string())
            .collect();
        ids.into_iter()
            .map(|id| {
                let p = self.members.remove(&id).expect("member just listed");
                (id, p)
            })
            .collect()
    }
}

/// Adds graph neighbors of each scored batch document to the pool, skipping
/// anything already ranked. Unknown graph nodes contribute nothing.
pub fn promote_neighbors<S: Scalar>(
    batch: &[ScoredDoc<S>],
    graph: &NeighborhoodGraph<S>,
    neighbor_limit: usize,
    already_ranked: &HashSet<String>,
    pool: &mut NeighborPool<S>,
) {
    if neighbor_limit == 0 {
        return;
    }
    for src in batch {
        let Ok(neigh) = graph.neighbors(&src.doc_id, neighbor_limit) else {
            continue;
        };
        for (n, sim) in neigh {
            if already_ranked.contains(n) {
                continue;
            }
            pool.offer(
                n,
                Priority {
                    source_score: src.score,
                    similarity: sim,
                    source: src.doc_id.clone(),
                },
            );
        }
    }
}

/// Cross-scores a batch and maps the logits through the logistic function.
/// Pairs are scored concurrently and reassembled in input order. Returns
/// `(logits, transformed)`.
pub fn score_batch<S: Scalar>(
    scorer: &dyn CrossScorer,
    sub_question: &str,
    batch: &[&Document],
) -> Result<(Vec<S>, Vec<S>), ClientError> {
    let logits: Vec<f64> = batch
        .par_iter()
        .map(|d| cross_score(scorer, sub_question, &d.full_text()))
        .collect::<Result<_, _>>()?;
    let logits: Vec<S> = logits.into_iter().map(S::from_f64_lossy).collect();
    let scores = logits.iter().map(|&x| x.logistic()).collect();
    Ok((logits, scores))
}

/// Runs the alternating R/N batch loop until the budget is spent or both pools
/// are exhausted. Returns the globally re-sorted list and the iteration trace.
pub fn run_nar<S: Scalar>(
    sub_question: &str,
    initial: &RankedList<S>,
    graph: &NeighborhoodGraph<S>,
    corpus: &Corpus,
    scorer: &dyn CrossScorer,
    feedback: Option<&dyn FeedbackHook<S>>,
    config: &NarConfig,
) -> Result<(RankedList<S>, NarTrace<S>), NarError> {
    config.validate()?;
    if initial.is_empty() {
        return Err(NarError::EmptyInitial);
    }
    let first_stage: Vec<&str> = initial.iter().map(|e| e.doc_id.as_str()).collect();
    let mut r_cursor = 0usize;
    let mut ranked: Vec<ScoredDoc<S>> = Vec::new();
    let mut ranked_ids: HashSet<String> = HashSet::new();
    let mut pool = NeighborPool::new();
    let mut trace = NarTrace {
        sub_question: sub_question.to_string(),
        iterations: Vec::new(),
    };
    let mut scheduled = config.start_pool;

    while ranked.len() < config.budget {
        let iteration = trace.iterations.len();
        while r_cursor < first_stage.len() && ranked_ids.contains(first_stage[r_cursor]) {
            r_cursor += 1;
        }
        let r_empty = r_cursor >= first_stage.len();
        let pool_used = match scheduled {
            Pool::R if !r_empty => Pool::R,
            Pool::N if !pool.is_empty() => Pool::N,
            _ if r_empty && pool.is_empty() => break,
            other => other.other(),
        };
        let take = config.batch_size.min(config.budget - ranked.len());

        let mut batch: Vec<ScoredDoc<S>> = Vec::with_capacity(take);
        match pool_used {
            Pool::R => {
                let mut i = r_cursor;
                while batch.len() < take && i < first_stage.len() {
                    let id = first_stage[i];
                    if !ranked_ids.contains(id) {
                        batch.push(ScoredDoc::first_stage(id, S::zero()));
                    }
                    i += 1;
                }
            }
            Pool::N => {
                for (id, p) in pool.take_top(take) {
                    batch.push(ScoredDoc::neighbor(id, S::zero(), p.source));
                }
            }
        }

        let docs: Vec<&Document> = batch
            .iter()
            .map(|e| {
                corpus.get(&e.doc_id).ok_or_else(|| NarError::UnknownDoc {
                    iteration,
                    doc_id: e.doc_id.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        let (logits, raw) = score_batch::<S>(scorer, sub_question, &docs)
            .map_err(|source| NarError::Scorer { iteration, source })?;
        for (e, &s) in batch.iter_mut().zip(&raw) {
            e.score = s;
            e.batch_index = Some(iteration);
        }

        let mut divisor = None;
        if let Some(hook) = feedback {
            let out = hook
                .rescore(sub_question, &batch, &docs)
                .map_err(|source| NarError::Feedback { iteration, source })?;
            if out.scores.len() != batch.len() {
                return Err(NarError::Feedback {
                    iteration,
                    source: format!(
                        "hook returned {} scores for a batch of {}",
                        out.scores.len(),
                        batch.len()
                    )
                    .into(),
                });
            }
            for (e, s) in batch.iter_mut().zip(&out.scores) {
                e.score = *s;
            }
            divisor = Some(out.divisor);
        }

        for e in &batch {
            ranked_ids.insert(e.doc_id.clone());
            pool.remove(&e.doc_id);
        }
        promote_neighbors(&batch, graph, config.neighbor_limit, &ranked_ids, &mut pool);

        trace.iterations.push(NarIteration {
            iteration,
            scheduled,
            pool: pool_used,
            batch: batch.iter().map(|e| e.doc_id.clone()).collect(),
            sources: batch.iter().map(|e| e.source_doc.clone()).collect(),
            logits,
            raw_scores: raw,
            divisor,
            final_scores: batch.iter().map(|e| e.score).collect(),
        });
        ranked.extend(batch);
        scheduled = scheduled.other();
    }

    Ok((RankedList::from_entries(ranked), trace))
}

/// Baseline without graph expansion: cross-scores the first `budget`
/// first-stage candidates and sorts them.
pub fn rerank_first_stage<S: Scalar>(
    sub_question: &str,
    initial: &RankedList<S>,
    corpus: &Corpus,
    scorer: &dyn CrossScorer,
    budget: usize,
) -> Result<RankedList<S>, NarError> {
    let head: Vec<&ScoredDoc<S>> = initial.iter().take(budget).collect();
    let docs: Vec<&Document> = head
        .iter()
        .map(|e| {
            corpus.get(&e.doc_id).ok_or_else(|| NarError::UnknownDoc {
                iteration: 0,
                doc_id: e.doc_id.clone(),
            })
        })
        .collect::<Result<_, _>>()?;
    let (_, scores) = score_batch::<S>(scorer, sub_question, &docs)
        .map_err(|source| NarError::Scorer { iteration: 0, source })?;
    Ok(RankedList::from_entries(
        head.iter()
            .zip(scores)
            .map(|(e, s)| ScoredDoc::first_stage(e.doc_id.clone(), s))
            .collect(),
    ))
}
