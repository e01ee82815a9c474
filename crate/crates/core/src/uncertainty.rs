//! Answer semantic uncertainty: sample several answers for a batch, group
//! them into semantic sets by bidirectional entailment, and divide the
//! batch's scores by the number of sets.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{llm_generate, ChatRequest, ClientError, EntailmentJudge, LanguageModel};
use crate::corpus::Document;
use crate::nar::{BoxError, FeedbackHook, FeedbackOutcome};
use crate::prompts::Prompts;
use crate::ranking::{rank_order, ScoredDoc};
use crate::scalar::Scalar;

pub const DEFAULT_SAMPLES: usize = 5;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("m must be >= 1")]
    ZeroSamples,
    #[error("no evidence to sample answers from")]
    NoEvidence,
    #[error("answer sampling failed: {0}")]
    Sample(#[source] ClientError),
    #[error("entailment failed for answers {i} and {j}: {source}")]
    Entailment {
        i: usize,
        j: usize,
        #[source]
        source: ClientError,
    },
    #[error("divisor must be >= 1")]
    ZeroDivisor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSamples {
    pub sub_question: String,
    pub answers: Vec<String>,
}

impl AnswerSamples {
    pub fn new(sub_question: impl Into<String>, answers: Vec<String>) -> Self {
        Self {
            sub_question: sub_question.into(),
            answers,
        }
    }

    pub fn m(&self) -> usize {
        self.answers.len()
    }
}

/// Partition of answer indices (0-based) into semantic sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticClustering {
    pub sets: Vec<Vec<usize>>,
}

impl SemanticClustering {
    /// Number of semantic sets.
    pub fn s(&self) -> usize {
        self.sets.len()
    }

    /// True when the sets are non-empty, disjoint and cover `0..m`.
    pub fn is_partition_of(&self, m: usize) -> bool {
        let mut seen = vec![false; m];
        for set in &self.sets {
            if set.is_empty() {
                return false;
            }
            for &i in set {
                if i >= m || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.into_iter().all(|x| x)
    }
}

/// Draws `m` answers from one prompt built over the evidence (in given order).
pub fn sample_answers(
    llm: &dyn LanguageModel,
    prompts: &Prompts,
    sub_question: &str,
    evidence: &[&Document],
    m: usize,
    temperature: f64,
) -> Result<AnswerSamples, UncertaintyError> {
    if m == 0 {
        return Err(UncertaintyError::ZeroSamples);
    }
    if evidence.is_empty() {
        return Err(UncertaintyError::NoEvidence);
    }
    let req = ChatRequest::user(prompts.render_answer(sub_question, evidence)).with_samples(m, temperature);
    let answers = llm_generate(llm, &req).map_err(UncertaintyError::Sample)?;
    Ok(AnswerSamples::new(sub_question, answers))
}

/// Greedy clustering: each answer joins the first set whose representative
/// (first member) it entails in both directions, otherwise it opens a new
/// set. Answers are trimmed first; empty answers only group with each other
/// and never reach the judge.
pub fn cluster_answers(
    nli: &dyn EntailmentJudge,
    samples: &AnswerSamples,
) -> Result<SemanticClustering, UncertaintyError> {
    let answers: Vec<&str> = samples.answers.iter().map(|a| a.trim()).collect();
    let mut sets: Vec<Vec<usize>> = Vec::new();
    'answers: for (i, a) in answers.iter().enumerate() {
        for set in sets.iter_mut() {
            let rep = set[0];
            let r = answers[rep];
            let same = match (a.is_empty(), r.is_empty()) {
                (true, true) => true,
                (true, false) | (false, true) => false,
                (false, false) => {
                    let judge = |p: &str, h: &str| {
                        nli.entails(p, h).map_err(|source| UncertaintyError::Entailment {
                            i: rep,
                            j: i,
                            source,
                        })
                    };
                    judge(r, a)? && judge(a, r)?
                }
            };
            if same {
                set.push(i);
                continue 'answers;
            }
        }
        sets.push(vec![i]);
    }
    Ok(SemanticClustering { sets })
}

/// Divides every score by `s`. Order within the batch is unchanged.
pub fn rescore_batch<S: Scalar>(
    batch: &[ScoredDoc<S>],
    s: usize,
) -> Result<Vec<ScoredDoc<S>>, UncertaintyError> {
    if s == 0 {
        return Err(UncertaintyError::ZeroDivisor);
    }
    let d = S::from_usize(s).ok_or(UncertaintyError::ZeroDivisor)?;
    Ok(batch
        .iter()
        .map(|e| ScoredDoc {
            score: e.score / d,
            ..e.clone()
        })
        .collect())
}

/// Feedback hook running sample -> cluster -> rescore on each batch.
#[derive(Clone)]
pub struct AsuFeedback {
    pub llm: Arc<dyn LanguageModel>,
    pub nli: Arc<dyn EntailmentJudge>,
    pub prompts: Arc<Prompts>,
    pub m: usize,
    pub temperature: f64,
}

/// Error from one stage of the feedback hook.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: UncertaintyError,
}

impl AsuFeedback {
    pub fn new(
        llm: Arc<dyn LanguageModel>,
        nli: Arc<dyn EntailmentJudge>,
        prompts: Arc<Prompts>,
        m: usize,
        temperature: f64,
    ) -> Self {
        Self {
            llm,
            nli,
            prompts,
            m,
            temperature,
        }
    }

    /// Samples and clusters answers for a batch; evidence is presented in
    /// descending score order.
    pub fn cluster_batch<S: Scalar>(
        &self,
        sub_question: &str,
        batch: &[ScoredDoc<S>],
        docs: &[&Document],
    ) -> Result<(AnswerSamples, SemanticClustering), StageError> {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.sort_by(|&a, &b| rank_order(&batch[a], &batch[b]));
        let evidence: Vec<&Document> = order.iter().map(|&i| docs[i]).collect();
        let samples = sample_answers(
            self.llm.as_ref(),
            &self.prompts,
            sub_question,
            &evidence,
            self.m,
            self.temperature,
        )
        .map_err(|source| StageError {
            stage: "sample",
            source,
        })?;
        let clustering = cluster_answers(self.nli.as_ref(), &samples).map_err(|source| StageError {
            stage: "cluster",
            source,
        })?;
        Ok((samples, clustering))
    }
}

pub fn asu_feedback_hook(
    llm: Arc<dyn LanguageModel>,
    nli: Arc<dyn EntailmentJudge>,
    prompts: Arc<Prompts>,
    m: usize,
    temperature: f64,
) -> AsuFeedback {
    AsuFeedback::new(llm, nli, prompts, m, temperature)
}

impl<S: Scalar> FeedbackHook<S> for AsuFeedback {
    fn rescore(
        &self,
        sub_question: &str,
        batch: &[ScoredDoc<S>],
        docs: &[&Document],
    ) -> Result<FeedbackOutcome<S>, BoxError> {
        let (_, clustering) = self.cluster_batch(sub_question, batch, docs)?;
        let s = clustering.s();
        let rescored = rescore_batch(batch, s).map_err(|source| StageError {
            stage: "rescore",
            source,
        })?;
        Ok(FeedbackOutcome {
            divisor: s,
            scores: rescored.into_iter().map(|e| e.score).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::scripted::{ExactMatchNli, RuleLlm, ScriptedNli};

    fn samples(a: &[&str]) -> AnswerSamples {
        AnswerSamples::new("q", a.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn identical_answers_one_set() {
        let c = cluster_answers(&ExactMatchNli, &samples(&["Paris", "Paris", "Paris"])).unwrap();
        assert_eq!(c.s(), 1);
        assert_eq!(c.sets, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn distinct_answers_distinct_sets() {
        let c = cluster_answers(&ExactMatchNli, &samples(&["A", "B", "C"])).unwrap();
        assert_eq!(c.s(), 3);
    }

    #[test]
    fn scripted_bidirectional_judgments() {
        let mut nli = ScriptedNli::default();
        nli.insert_symmetric("Paris", "the capital Paris", true);
        nli.insert_symmetric("Paris", "London", false);
        // "the capital Paris" vs "London" is never asked: London is compared
        // against representative "Paris" only, and fails in the first direction.
        let c = cluster_answers(&nli, &samples(&["Paris", "the capital Paris", "London"])).unwrap();
        assert_eq!(c.sets, vec![vec![0, 1], vec![2]]);
        assert_eq!(c.s(), 2);
    }

    #[test]
    fn one_way_entailment_is_not_enough() {
        let mut nli = ScriptedNli::default();
        nli.insert("Paris", "Paris, France", true);
        nli.insert("Paris, France", "Paris", false);
        let c = cluster_answers(&nli, &samples(&["Paris", "Paris, France"])).unwrap();
        assert_eq!(c.s(), 2);
    }

    #[test]
    fn empty_answers_group_together_without_judge() {
        let nli = ScriptedNli::default();
        let c = cluster_answers(&nli, &samples(&["", "  ", ""])).unwrap();
        assert_eq!(c.s(), 1);
        let c = cluster_answers(&ExactMatchNli, &samples(&["x", "", "x"])).unwrap();
        assert_eq!(c.sets, vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn judge_failure_reports_pair() {
        let err = cluster_answers(&ScriptedNli::default(), &samples(&["a", "b"])).unwrap_err();
        assert!(matches!(err, UncertaintyError::Entailment { i: 0, j: 1, .. }));
    }

    #[test]
    fn rescore_arithmetic() {
        let b = vec![ScoredDoc::first_stage("a", 0.9f64), ScoredDoc::first_stage("b", 0.6)];
        let r = rescore_batch(&b, 3).unwrap();
        assert!((r[0].score - 0.3).abs() < 1e-15 && (r[1].score - 0.2).abs() < 1e-15);
        assert_eq!(rescore_batch(&b, 1).unwrap(), b);
        assert!(matches!(rescore_batch(&b, 0), Err(UncertaintyError::ZeroDivisor)));

        let lg = |x: f64| 1.0 / (1.0 + (-x).exp());
        let b = vec![ScoredDoc::first_stage("a", lg(2.0)), ScoredDoc::first_stage("b", lg(-2.0))];
        let r = rescore_batch(&b, 2).unwrap();
        assert!((r[0].score - 0.4404).abs() < 1e-4 && (r[1].score - 0.0596).abs() < 1e-4);
    }

    #[test]
    fn sampling_contract() {
        let llm = RuleLlm::new(|r: &ChatRequest| vec!["Paris".to_string(); r.n]);
        let p = Prompts::default();
        let d = Document::new("d", "Paris is the capital.");
        let s = sample_answers(&llm, &p, "capital?", &[&d], 3, 0.7).unwrap();
        assert_eq!(s.answers, ["Paris", "Paris", "Paris"]);
        assert!(matches!(sample_answers(&llm, &p, "q", &[&d], 0, 0.7), Err(UncertaintyError::ZeroSamples)));
        assert!(matches!(sample_answers(&llm, &p, "q", &[], 1, 0.7), Err(UncertaintyError::NoEvidence)));
        let one = sample_answers(&llm, &p, "q", &[&d], 1, 0.7).unwrap();
        assert_eq!(cluster_answers(&ScriptedNli::default(), &one).unwrap().s(), 1);
    }

    #[test]
    fn hook_divides_by_set_count() {
        let distinct = RuleLlm::new(|r: &ChatRequest| (0..r.n).map(|i| format!("ans{i}")).collect());
        let hook = asu_feedback_hook(
            Arc::new(distinct),
            Arc::new(ExactMatchNli),
            Arc::new(Prompts::default()),
            5,
            0.7,
        );
        let d1 = Document::new("a", "x");
        let d2 = Document::new("b", "y");
        let batch = vec![ScoredDoc::first_stage("a", 0.5f64), ScoredDoc::first_stage("b", 0.25)];
        let out = FeedbackHook::<f64>::rescore(&hook, "q", &batch, &[&d1, &d2]).unwrap();
        assert_eq!(out.divisor, 5);
        assert_eq!(out.scores, [0.1, 0.05]);
    }

    #[test]
    fn hook_errors_carry_stage() {
        let hook = asu_feedback_hook(
            Arc::new(RuleLlm::new(|r: &ChatRequest| vec!["a".to_string(), "b".to_string()][..r.n.min(2)].to_vec())),
            Arc::new(ScriptedNli::default()),
            Arc::new(Prompts::default()),
            2,
            0.7,
        );
        let d = Document::new("a", "x");
        let batch = vec![ScoredDoc::first_stage("a", 0.5f64)];
        let err = FeedbackHook::<f64>::rescore(&hook, "q", &batch, &[&d]).unwrap_err();
        assert!(err.to_string().starts_with("cluster:"));
    }
}
