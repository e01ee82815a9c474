//! Lexical inverted index with BM25 first-stage retrieval.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::ranking::{RankedList, ScoredDoc};
use crate::scalar::Scalar;
use crate::text::tokenize;

pub const INDEX_FORMAT: &str = "sunar-term-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("index file {path} is not readable: {reason}")]
    Format { path: String, reason: String },
    #[error("unsupported index version {found} (expected {INDEX_VERSION})")]
    Version { found: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Inverted index over a corpus. Documents are addressed internally by their
/// corpus position; postings within a term are in ascending position order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermIndex {
    format: String,
    version: u32,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

/// Corpus-level statistics the scorer depends on. Freezing these makes
/// per-document scores independent of unrelated corpus changes.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectionStats {
    pub doc_count: usize,
    pub avg_doc_length: f64,
    pub doc_freq: HashMap<String, usize>,
}

impl TermIndex {
    pub fn build(corpus: &Corpus) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (pos, doc) in corpus.iter().enumerate() {
            let tokens = tokenize(&doc.full_text());
            doc_ids.push(doc.doc_id.clone());
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: pos as u32,
                    tf: n,
                });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = if doc_ids.is_empty() {
            0.0
        } else {
            total as f64 / doc_ids.len() as f64
        };
        Self {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_id(&self, pos: u32) -> &str {
        &self.doc_ids[pos as usize]
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.doc_ids
            .iter()
            .position(|d| d == doc_id)
            .map(|i| self.doc_lengths[i])
    }

    pub fn doc_lengths(&self) -> impl Iterator<Item = (&str, u32)> {
        self.doc_ids
            .iter()
            .map(String::as_str)
            .zip(self.doc_lengths.iter().copied())
    }

    /// `(doc_id, tf)` pairs for a term, in corpus order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|ps| ps.iter().map(|p| (self.doc_id(p.doc), p.tf)).collect())
            .unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn stats(&self) -> CollectionStats {
        CollectionStats {
            doc_count: self.doc_count(),
            avg_doc_length: self.avg_doc_length,
            doc_freq: self
                .postings
                .iter()
                .map(|(t, ps)| (t.clone(), ps.len()))
                .collect(),
        }
    }

    /// BM25 top-k using this index's own statistics.
    pub fn sparse_retrieve<S: Scalar>(&self, query: &str, k: usize) -> RankedList<S> {
        self.sparse_retrieve_with(&self.stats(), Bm25Params::default(), query, k)
    }

    /// BM25 top-k against externally supplied collection statistics.
    /// Only documents sharing at least one query term are returned.
    pub fn sparse_retrieve_with<S: Scalar>(
        &self,
        stats: &CollectionStats,
        params: Bm25Params,
        query: &str,
        k: usize,
    ) -> RankedList<S> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        if terms.is_empty() || k == 0 {
            return RankedList::default();
        }
        let n = S::from_usize(stats.doc_count).unwrap_or_else(S::zero);
        let avgdl = S::from_f64_lossy(stats.avg_doc_length);
        let k1 = S::from_f64_lossy(params.k1);
        let b = S::from_f64_lossy(params.b);
        let one = S::one();
        let half = S::from_f64_lossy(0.5);

        let mut acc: HashMap<u32, S> = HashMap::new();
        for term in &terms {
            let Some(ps) = self.postings.get(term) else {
                continue;
            };
            let df = S::from_usize(stats.doc_freq.get(term).copied().unwrap_or(ps.len()))
                .unwrap_or_else(S::one);
            let idf = (one + (n - df + half) / (df + half)).ln();
            for p in ps {
                let tf = S::from_u32(p.tf).unwrap_or_else(S::zero);
                let dl = S::from_u32(self.doc_lengths[p.doc as usize]).unwrap_or_else(S::zero);
                let norm = if avgdl > S::zero() {
                    one - b + b * dl / avgdl
                } else {
                    one
                };
                let w = idf * tf * (k1 + one) / (tf + k1 * norm);
                let slot = acc.entry(p.doc).or_insert_with(S::zero);
                *slot = *slot + w;
            }
        }
        let entries = acc
            .into_iter()
            .map(|(doc, score)| ScoredDoc::first_stage(self.doc_id(doc), score))
            .collect();
        RankedList::from_entries(entries).top(k)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let io = |source| IndexError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer(&mut w, self).map_err(|e| IndexError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let f = File::open(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let idx: TermIndex =
            serde_json::from_reader(BufReader::new(f)).map_err(|e| IndexError::Format {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        if idx.format != INDEX_FORMAT {
            return Err(IndexError::Format {
                path: path.display().to_string(),
                reason: format!("unexpected format tag {:?}", idx.format),
            });
        }
        if idx.version != INDEX_VERSION {
            return Err(IndexError::Version { found: idx.version });
        }
        Ok(idx)
    }
}

pub fn build_term_index(corpus: &Corpus) -> TermIndex {
    TermIndex::build(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use rand::{Rng, SeedableRng};

    fn corpus(docs: &[(&str, &str)]) -> Corpus {
        Corpus::from_documents(docs.iter().map(|(i, t)| Document::new(*i, *t)).collect()).unwrap()
    }

    // Straight BM25 over raw token lists, no index.
    fn brute_bm25(docs: &[(&str, &str)], query: &str) -> Vec<(String, f64)> {
        let toks: Vec<Vec<String>> = docs.iter().map(|(_, t)| tokenize(t)).collect();
        let n = docs.len() as f64;
        let avg = toks.iter().map(|t| t.len()).sum::<usize>() as f64 / n;
        let mut q = tokenize(query);
        q.sort();
        q.dedup();
        let mut out = Vec::new();
        for (i, (id, _)) in docs.iter().enumerate() {
            let mut s = 0.0;
            let mut hit = false;
            for term in &q {
                let df = toks.iter().filter(|t| t.contains(term)).count() as f64;
                let tf = toks[i].iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                hit = true;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let dl = toks[i].len() as f64;
                s += idf * tf * 1.9 / (tf + 0.9 * (1.0 - 0.4 + 0.4 * dl / avg));
            }
            if hit {
                out.push((id.to_string(), s));
            }
        }
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    #[test]
    fn postings_hand_count() {
        let idx = TermIndex::build(&corpus(&[("d1", "red fox"), ("d2", "red red hen")]));
        assert_eq!(idx.postings("red"), vec![("d1", 1), ("d2", 2)]);
        assert_eq!(idx.doc_count(), 2);
        assert!((idx.avg_doc_length() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn punctuation_only_doc_has_zero_length() {
        let idx = TermIndex::build(&corpus(&[("d1", "red"), ("p", "!!!")]));
        assert_eq!(idx.doc_length("p"), Some(0));
        assert!(idx.terms().all(|t| idx.postings(t).iter().all(|(d, _)| *d != "p")));
    }

    #[test]
    fn tf_total_matches_lengths_on_random_corpus() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vocab = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
        let owned: Vec<(String, String)> = (0..100)
            .map(|i| {
                let n = rng.gen_range(1..20);
                let words: Vec<&str> = (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
                (format!("d{i:03}"), words.join(", "))
            })
            .collect();
        let docs: Vec<(&str, &str)> = owned.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let idx = TermIndex::build(&corpus(&docs));
        let tf_sum: u64 = idx
            .terms()
            .flat_map(|t| idx.postings(t))
            .map(|(_, tf)| tf as u64)
            .sum();
        let recount: u64 = docs.iter().map(|(_, t)| tokenize(t).len() as u64).sum();
        let lens: u64 = idx.doc_lengths().map(|(_, l)| l as u64).sum();
        assert_eq!(tf_sum, recount);
        assert_eq!(lens, recount);
    }

    #[test]
    fn red_fox_ranks_d1_first() {
        let docs = [("d1", "red fox"), ("d2", "red red hen")];
        let idx = TermIndex::build(&corpus(&docs));
        let got: RankedList<f64> = idx.sparse_retrieve("red fox", 10);
        assert_eq!(got.ids(), ["d1", "d2"]);
        let oracle = brute_bm25(&docs, "red fox");
        for (e, (id, s)) in got.iter().zip(&oracle) {
            assert_eq!(&e.doc_id, id);
            assert!((e.score - s).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_on_random_corpus() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let vocab = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
        let owned: Vec<(String, String)> = (0..40)
            .map(|i| {
                let n = rng.gen_range(1..12);
                let w: Vec<&str> = (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
                (format!("x{i:02}"), w.join(" "))
            })
            .collect();
        let docs: Vec<(&str, &str)> = owned.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let idx = TermIndex::build(&corpus(&docs));
        for q in ["a b", "c c d", "j", "e f g h"] {
            let got: RankedList<f64> = idx.sparse_retrieve(q, 1000);
            let oracle = brute_bm25(&docs, q);
            assert_eq!(got.len(), oracle.len());
            for (e, (id, s)) in got.iter().zip(&oracle) {
                assert_eq!(&e.doc_id, id);
                assert!((e.score - s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn no_match_and_empty_query() {
        let idx = TermIndex::build(&corpus(&[("d1", "red fox")]));
        assert!(idx.sparse_retrieve::<f64>("zebra", 10).is_empty());
        assert!(idx.sparse_retrieve::<f64>("?!", 10).is_empty());
    }

    #[test]
    fn respects_k_and_tie_break() {
        let idx = TermIndex::build(&corpus(&[("c", "x"), ("a", "x"), ("b", "x")]));
        let got: RankedList<f64> = idx.sparse_retrieve("x", 2);
        assert_eq!(got.ids(), ["a", "b"]);
    }

    #[test]
    fn frozen_stats_ignore_unrelated_docs() {
        let base = [("d1", "red fox"), ("d2", "red red hen"), ("d3", "blue jay")];
        let a = TermIndex::build(&corpus(&base));
        let mut more = base.to_vec();
        more.push(("d4", "green parrot wings"));
        let b = TermIndex::build(&corpus(&more));
        let stats = a.stats();
        let ra: RankedList<f64> = a.sparse_retrieve_with(&stats, Bm25Params::default(), "red fox hen", 10);
        let rb: RankedList<f64> = b.sparse_retrieve_with(&stats, Bm25Params::default(), "red fox hen", 10);
        assert_eq!(ra, rb);
    }

    #[test]
    fn save_load_round_trip_and_version_check() {
        let idx = TermIndex::build(&corpus(&[("d1", "red fox"), ("d2", "hen")]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.json");
        idx.save(&p).unwrap();
        assert_eq!(TermIndex::load(&p).unwrap(), idx);
        let text = std::fs::read_to_string(&p).unwrap().replace("\"version\":1", "\"version\":9");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(TermIndex::load(&p), Err(IndexError::Version { found: 9 })));
    }

    #[test]
    fn f32_agrees_with_f64_order() {
        let idx = TermIndex::build(&corpus(&[("d1", "red fox"), ("d2", "red red hen"), ("d3", "fox")]));
        let a: RankedList<f64> = idx.sparse_retrieve("red fox", 10);
        let b: RankedList<f32> = idx.sparse_retrieve("red fox", 10);
        assert_eq!(a.ids(), b.ids());
    }
}
