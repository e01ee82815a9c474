//! Seeded corpora where some relevant documents are invisible to lexical
//! retrieval but sit next to visible ones in embedding space.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TestkitError;
use crate::clients::scripted::TableScorer;
use crate::corpus::{Corpus, Document};
use crate::embedding::EmbeddingStore;
use crate::eval::Qrels;
use crate::pipeline::Question;

const QUERY_TERMS: usize = 3;
const FILLER_VOCAB: usize = 80;
const DOC_WORDS: usize = 9;
const NOISE_DIMS: usize = 8;
/// Norm of the noise added to relevant vectors; keeps sibling cosine >= 0.95.
const RELEVANT_NOISE: f64 = 0.1;
const DISTRACTOR_NOISE: f64 = 0.15;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_questions: usize,
    pub relevant_per_question: usize,
    /// Fraction of relevant docs that contain query terms, in (0, 1].
    pub surfaced_fraction: f64,
    pub distractors_per_question: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_questions: 4,
            relevant_per_question: 4,
            surfaced_fraction: 0.5,
            distractors_per_question: 10,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn surfaced_count(&self) -> usize {
        ((self.relevant_per_question as f64 * self.surfaced_fraction).ceil() as usize)
            .clamp(1, self.relevant_per_question)
    }

    pub fn validate(&self) -> Result<(), TestkitError> {
        let bad = |m: &str| Err(TestkitError::Infeasible(m.to_string()));
        if self.num_questions == 0 {
            return bad("num_questions must be >= 1");
        }
        if self.relevant_per_question == 0 {
            return bad("relevant_per_question must be >= 1");
        }
        if !(self.surfaced_fraction > 0.0 && self.surfaced_fraction <= 1.0) {
            return bad("surfaced_fraction must lie in (0, 1]");
        }
        if self.surfaced_fraction < 1.0 && self.relevant_per_question < 2 {
            return bad("relevant_per_question must be >= 2 when some relevants are hidden");
        }
        let words = self.num_questions * QUERY_TERMS + FILLER_VOCAB;
        let capacity = (CONSONANTS.len() * VOWELS.len()).pow(3);
        if words * 4 > capacity {
            return bad("vocabulary too small for this many questions");
        }
        Ok(())
    }
}

/// Generated corpus with its relevance labels and a table scorer that
/// rates every relevant (question, doc) pair above every other pair.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub qrels: Qrels,
    pub questions: Vec<Question>,
    pub embeddings: EmbeddingStore<f64>,
    pub scorer: TableScorer,
    /// Per question: (surfaced relevant ids, hidden relevant ids).
    pub planted: Vec<(Vec<String>, Vec<String>)>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    (0..3)
        .flat_map(|_| {
            [
                CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char,
                VOWELS[rng.gen_range(0..VOWELS.len())] as char,
            ]
        })
        .collect()
}

fn fresh_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Vector of the given norm spread over the noise block.
fn noise(rng: &mut ChaCha8Rng, dim: usize, offset: usize, norm: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let raw: Vec<f64> = (0..NOISE_DIMS).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for (i, x) in raw.into_iter().enumerate() {
        v[offset + i] = x / n * norm;
    }
    v
}

pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus, TestkitError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = HashSet::new();
    let filler = fresh_words(&mut rng, FILLER_VOCAB, &mut taken);
    let nq = spec.num_questions;
    // Axes: one per question for relevants, one per question for its
    // distractors, then the shared noise block.
    let dim = 2 * nq + NOISE_DIMS;
    let noise_at = 2 * nq;

    let mut docs = Vec::new();
    let mut vectors = Vec::new();
    let mut qrels = Qrels::default();
    let mut questions = Vec::new();
    let mut planted = Vec::new();
    let mut labels: Vec<(usize, String, bool)> = Vec::new();

    let fill = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n).map(|_| filler.choose(rng).expect("filler vocab").clone()).collect()
    };

    for q in 0..nq {
        let qid = format!("s{q}");
        let terms = fresh_words(&mut rng, QUERY_TERMS, &mut taken);
        questions.push(Question {
            qid: qid.clone(),
            question: terms.join(" "),
            answer: None,
        });
        let surfaced = spec.surfaced_count();
        let mut ids = (Vec::new(), Vec::new());
        for r in 0..spec.relevant_per_question {
            let id = format!("q{q}-rel{r}");
            let mut words = if r < surfaced {
                let mut w = terms.clone();
                w.extend(fill(&mut rng, DOC_WORDS - QUERY_TERMS));
                w
            } else {
                fill(&mut rng, DOC_WORDS)
            };
            words.shuffle(&mut rng);
            let mut v = noise(&mut rng, dim, noise_at, RELEVANT_NOISE);
            v[q] = 1.0;
            docs.push(Document::new(&id, words.join(" ")));
            vectors.push((id.clone(), v));
            qrels.insert(&qid, &id, 1);
            labels.push((q, id.clone(), true));
            if r < surfaced {
                ids.0.push(id);
            } else {
                ids.1.push(id);
            }
        }
        for d in 0..spec.distractors_per_question {
            let id = format!("q{q}-dis{d}");
            let shared = 1 + d % (QUERY_TERMS - 1);
            let mut words: Vec<String> = terms.choose_multiple(&mut rng, shared).cloned().collect();
            words.extend(fill(&mut rng, DOC_WORDS - shared));
            words.shuffle(&mut rng);
            let mut v = noise(&mut rng, dim, noise_at, DISTRACTOR_NOISE);
            v[nq + q] = 1.0;
            docs.push(Document::new(&id, words.join(" ")));
            vectors.push((id.clone(), v));
            labels.push((q, id, false));
        }
        planted.push(ids);
    }

    let corpus = Corpus::from_documents(docs).map_err(|e| TestkitError::Infeasible(e.to_string()))?;
    let mut embeddings = EmbeddingStore::new(dim).map_err(|e| TestkitError::Infeasible(e.to_string()))?;
    for (id, v) in vectors {
        embeddings
            .insert(id, v)
            .map_err(|e| TestkitError::Infeasible(e.to_string()))?;
    }
    let mut scorer = TableScorer::default();
    for (qi, question) in questions.iter().enumerate() {
        for (owner, id, relevant) in &labels {
            let doc = corpus.get(id).expect("generated doc");
            let logit = if *relevant && *owner == qi {
                2.0 + rng.gen_range(0.0..1.0)
            } else {
                -3.0 + rng.gen_range(0.0..1.0)
            };
            scorer.insert(&question.question, &doc.full_text(), logit);
        }
    }
    Ok(SyntheticCorpus {
        corpus,
        qrels,
        questions,
        embeddings,
        scorer,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, cosine};
    use crate::text::tokenize;

    #[test]
    fn spec_example_single_question() {
        let spec = SyntheticSpec {
            num_questions: 1,
            distractors_per_question: 10,
            seed: 7,
            ..SyntheticSpec::default()
        };
        let s = generate_corpus(&spec).unwrap();
        let index = crate::index::TermIndex::build(&s.corpus);
        let hits = index.sparse_retrieve::<f64>(&s.questions[0].question, 100);
        let (surfaced, hidden) = &s.planted[0];
        let relevant_hits: Vec<&str> = hits.ids().into_iter().filter(|id| id.contains("rel")).collect();
        let mut expect: Vec<&str> = surfaced.iter().map(String::as_str).collect();
        let mut got = relevant_hits.clone();
        expect.sort();
        got.sort();
        assert_eq!(got, expect);
        let (g, _) = build_graph(&s.embeddings, 10).unwrap();
        for sf in surfaced {
            let ns: Vec<&str> = g.neighbors(sf, 10).unwrap().into_iter().map(|(d, _)| d).collect();
            for h in hidden {
                assert!(ns.contains(&h.as_str()));
            }
        }
    }

    #[test]
    fn geometry_and_vocabulary() {
        let s = generate_corpus(&SyntheticSpec {
            num_questions: 3,
            seed: 11,
            ..SyntheticSpec::default()
        })
        .unwrap();
        for (qi, q) in s.questions.iter().enumerate() {
            let qt: HashSet<String> = tokenize(&q.question).into_iter().collect();
            let (surfaced, hidden) = &s.planted[qi];
            for h in hidden {
                let toks = tokenize(&s.corpus.get(h).unwrap().text);
                assert!(toks.iter().all(|t| !qt.contains(t)));
                for sf in surfaced {
                    let c = cosine(s.embeddings.get(h).unwrap(), s.embeddings.get(sf).unwrap());
                    assert!(c >= 0.95, "{c}");
                }
            }
            for sf in surfaced {
                let toks = tokenize(&s.corpus.get(sf).unwrap().text);
                assert!(toks.iter().any(|t| qt.contains(t)));
            }
            for d in 0..10 {
                let id = format!("q{qi}-dis{d}");
                let toks = tokenize(&s.corpus.get(&id).unwrap().text);
                assert!(toks.iter().any(|t| qt.contains(t)));
                for r in surfaced.iter().chain(hidden) {
                    let c = cosine(s.embeddings.get(&id).unwrap(), s.embeddings.get(r).unwrap());
                    assert!(c <= 0.2, "{c}");
                }
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec {
            seed: 3,
            ..SyntheticSpec::default()
        };
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.corpus.documents(), b.corpus.documents());
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.scorer.to_fixture(), b.scorer.to_fixture());
        let c = generate_corpus(&SyntheticSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.corpus.documents(), c.corpus.documents());
    }

    #[test]
    fn infeasible_specs() {
        for spec in [
            SyntheticSpec { num_questions: 0, ..Default::default() },
            SyntheticSpec { relevant_per_question: 1, ..Default::default() },
            SyntheticSpec { surfaced_fraction: 0.0, ..Default::default() },
            SyntheticSpec { num_questions: 100_000, ..Default::default() },
        ] {
            assert!(matches!(generate_corpus(&spec), Err(TestkitError::Infeasible(_))));
        }
    }
}
