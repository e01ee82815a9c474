//! Deterministic offline clients: fixture replay, rule-based mocks and
//! recorders that capture live traffic into fixture files.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    fingerprint_embed, fingerprint_pair, ChatRequest, ClientError, CrossScorer, Embedder,
    EntailmentJudge, LanguageModel,
};
use crate::text::tokenize;

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Free-form note for humans reading the fixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl FixtureRecord {
    fn bare(fingerprint: String) -> Self {
        Self {
            fingerprint,
            completions: None,
            verdict: None,
            vector: None,
            score: None,
            label: None,
        }
    }
}

/// Fingerprint-keyed fixture entries, kept sorted so written files are stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureSet {
    records: BTreeMap<String, FixtureRecord>,
}

impl FixtureSet {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let fail = |reason: String| ClientError::Fixture {
            path: path.display().to_string(),
            reason,
        };
        let f = File::open(path).map_err(|e| fail(e.to_string()))?;
        let mut records = BTreeMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| fail(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord =
                serde_json::from_str(&line).map_err(|e| fail(format!("line {}: {e}", i + 1)))?;
            records.insert(rec.fingerprint.clone(), rec);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        let fail = |e: std::io::Error| ClientError::Fixture {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let mut w = BufWriter::new(File::create(path).map_err(fail)?);
        for rec in self.records.values() {
            let line = serde_json::to_string(rec).expect("fixture record serializes");
            writeln!(w, "{line}").map_err(fail)?;
        }
        w.flush().map_err(fail)
    }

    pub fn insert(&mut self, rec: FixtureRecord) {
        self.records.insert(rec.fingerprint.clone(), rec);
    }

    pub fn get(&self, fingerprint: &str) -> Option<&FixtureRecord> {
        self.records.get(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn merge(&mut self, other: FixtureSet) {
        self.records.extend(other.records);
    }

    pub fn records(&self) -> impl Iterator<Item = &FixtureRecord> {
        self.records.values()
    }
}

/// Replays chat completions keyed by request fingerprint. A miss is an error.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLlm {
    entries: HashMap<String, Vec<String>>,
}

impl ScriptedLlm {
    pub fn from_fixture(set: &FixtureSet) -> Self {
        let entries = set
            .records()
            .filter_map(|r| r.completions.clone().map(|c| (r.fingerprint.clone(), c)))
            .collect();
        Self { entries }
    }

    pub fn insert(&mut self, request: &ChatRequest, completions: Vec<String>) {
        self.entries.insert(request.fingerprint(), completions);
    }
}

impl LanguageModel for ScriptedLlm {
    fn generate(&self, request: &ChatRequest) -> Result<Vec<String>, ClientError> {
        let fp = request.fingerprint();
        self.entries
            .get(&fp)
            .cloned()
            .ok_or(ClientError::FixtureMiss {
                kind: "chat",
                fingerprint: fp,
            })
    }
}

/// Chat mock driven by a closure over the request. Used to author fixtures.
pub struct RuleLlm<F> {
    rule: F,
}

impl<F> RuleLlm<F>
where
    F: Fn(&ChatRequest) -> Vec<String> + Send + Sync,
{
    pub fn new(rule: F) -> Self {
        Self { rule }
    }
}

impl<F> LanguageModel for RuleLlm<F>
where
    F: Fn(&ChatRequest) -> Vec<String> + Send + Sync,
{
    fn generate(&self, request: &ChatRequest) -> Result<Vec<String>, ClientError> {
        Ok((self.rule)(request))
    }
}

/// Entailment holds iff the whitespace-trimmed strings are equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchNli;

impl EntailmentJudge for ExactMatchNli {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, ClientError> {
        Ok(premise.trim() == hypothesis.trim())
    }
}

/// Replays entailment verdicts keyed by `(premise, hypothesis)` fingerprint.
#[derive(Debug, Clone, Default)]
pub struct ScriptedNli {
    verdicts: HashMap<String, bool>,
}

impl ScriptedNli {
    pub fn from_fixture(set: &FixtureSet) -> Self {
        let verdicts = set
            .records()
            .filter_map(|r| r.verdict.map(|v| (r.fingerprint.clone(), v)))
            .collect();
        Self { verdicts }
    }

    pub fn insert(&mut self, premise: &str, hypothesis: &str, verdict: bool) {
        self.verdicts
            .insert(fingerprint_pair("nli", premise, hypothesis), verdict);
    }

    /// Inserts the verdict in both directions.
    pub fn insert_symmetric(&mut self, a: &str, b: &str, verdict: bool) {
        self.insert(a, b, verdict);
        self.insert(b, a, verdict);
    }
}

impl EntailmentJudge for ScriptedNli {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, ClientError> {
        let fp = fingerprint_pair("nli", premise, hypothesis);
        self.verdicts
            .get(&fp)
            .copied()
            .ok_or(ClientError::FixtureMiss {
                kind: "nli",
                fingerprint: fp,
            })
    }
}

/// Cross-scorer replaying a `(query, doc_text) -> logit` table.
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    table: HashMap<String, f64>,
}

impl TableScorer {
    pub fn from_fixture(set: &FixtureSet) -> Self {
        let table = set
            .records()
            .filter_map(|r| r.score.map(|s| (r.fingerprint.clone(), s)))
            .collect();
        Self { table }
    }

    pub fn insert(&mut self, query: &str, doc_text: &str, logit: f64) {
        self.table
            .insert(fingerprint_pair("score", query, doc_text), logit);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn to_fixture(&self) -> FixtureSet {
        let mut set = FixtureSet::default();
        for (fp, s) in &self.table {
            let mut rec = FixtureRecord::bare(fp.clone());
            rec.score = Some(*s);
            set.insert(rec);
        }
        set
    }
}

impl CrossScorer for TableScorer {
    fn score(&self, query: &str, doc_text: &str) -> Result<f64, ClientError> {
        let fp = fingerprint_pair("score", query, doc_text);
        self.table
            .get(&fp)
            .copied()
            .ok_or(ClientError::FixtureMiss {
                kind: "score",
                fingerprint: fp,
            })
    }
}

/// Logit equals the number of distinct tokens shared by query and document.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalOverlapScorer;

impl CrossScorer for LexicalOverlapScorer {
    fn score(&self, query: &str, doc_text: &str) -> Result<f64, ClientError> {
        let q: std::collections::HashSet<String> = tokenize(query).into_iter().collect();
        let d: std::collections::HashSet<String> = tokenize(doc_text).into_iter().collect();
        Ok(q.intersection(&d).count() as f64)
    }
}

/// Deterministic pseudo-embedding derived from SHA-256 of the text, with
/// components in `[-1, 1]`. Identical on every platform.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        if self.dim == 0 {
            return Err(ClientError::Config("embedding dim must be >= 1".into()));
        }
        let mut out = Vec::with_capacity(self.dim);
        let mut block = 0u64;
        while out.len() < self.dim {
            let mut h = Sha256::new();
            h.update(block.to_le_bytes());
            h.update(text.as_bytes());
            for chunk in h.finalize().chunks_exact(4) {
                if out.len() == self.dim {
                    break;
                }
                let x = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                out.push(x as f64 / u32::MAX as f64 * 2.0 - 1.0);
            }
            block += 1;
        }
        Ok(out)
    }
}

/// Embedder replaying text-keyed vectors.
#[derive(Debug, Clone)]
pub struct ScriptedEmbedder {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl ScriptedEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn from_fixture(set: &FixtureSet, dim: usize) -> Self {
        let vectors = set
            .records()
            .filter_map(|r| r.vector.clone().map(|v| (r.fingerprint.clone(), v)))
            .collect();
        Self { dim, vectors }
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) {
        self.vectors
            .insert(fingerprint_embed(text, self.dim), vector);
    }

    pub fn to_fixture(&self) -> FixtureSet {
        let mut set = FixtureSet::default();
        for (fp, v) in &self.vectors {
            let mut rec = FixtureRecord::bare(fp.clone());
            rec.vector = Some(v.clone());
            set.insert(rec);
        }
        set
    }
}

impl Embedder for ScriptedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        let fp = fingerprint_embed(text, self.dim);
        self.vectors
            .get(&fp)
            .cloned()
            .ok_or(ClientError::FixtureMiss {
                kind: "embed",
                fingerprint: fp,
            })
    }
}

/// Wraps a chat client and records every exchange as a fixture entry.
pub struct RecordingLlm<L> {
    inner: L,
    log: Mutex<FixtureSet>,
}

impl<L: LanguageModel> RecordingLlm<L> {
    pub fn new(inner: L) -> Self {
        Self {
            inner,
            log: Mutex::new(FixtureSet::default()),
        }
    }

    pub fn fixture(&self) -> FixtureSet {
        self.log.lock().expect("recorder poisoned").clone()
    }
}

impl<L: LanguageModel> LanguageModel for RecordingLlm<L> {
    fn generate(&self, request: &ChatRequest) -> Result<Vec<String>, ClientError> {
        let out = self.inner.generate(request)?;
        let mut rec = FixtureRecord::bare(request.fingerprint());
        rec.completions = Some(out.clone());
        rec.label = request
            .messages
            .last()
            .and_then(|m| m.content.lines().last())
            .map(|l| l.chars().take(80).collect());
        self.log.lock().expect("recorder poisoned").insert(rec);
        Ok(out)
    }
}

/// Wraps an entailment judge and records its verdicts.
pub struct RecordingNli<J> {
    inner: J,
    log: Mutex<FixtureSet>,
}

impl<J: EntailmentJudge> RecordingNli<J> {
    pub fn new(inner: J) -> Self {
        Self {
            inner,
            log: Mutex::new(FixtureSet::default()),
        }
    }

    pub fn fixture(&self) -> FixtureSet {
        self.log.lock().expect("recorder poisoned").clone()
    }
}

impl<J: EntailmentJudge> EntailmentJudge for RecordingNli<J> {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, ClientError> {
        let v = self.inner.entails(premise, hypothesis)?;
        let mut rec = FixtureRecord::bare(fingerprint_pair("nli", premise, hypothesis));
        rec.verdict = Some(v);
        rec.label = Some(format!("{premise} => {hypothesis}"));
        self.log.lock().expect("recorder poisoned").insert(rec);
        Ok(v)
    }
}

/// Wraps a cross-scorer and records its logits.
pub struct RecordingScorer<C> {
    inner: C,
    log: Mutex<FixtureSet>,
}

impl<C: CrossScorer> RecordingScorer<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            log: Mutex::new(FixtureSet::default()),
        }
    }

    pub fn fixture(&self) -> FixtureSet {
        self.log.lock().expect("recorder poisoned").clone()
    }
}

impl<C: CrossScorer> CrossScorer for RecordingScorer<C> {
    fn score(&self, query: &str, doc_text: &str) -> Result<f64, ClientError> {
        let s = self.inner.score(query, doc_text)?;
        let mut rec = FixtureRecord::bare(fingerprint_pair("score", query, doc_text));
        rec.score = Some(s);
        self.log.lock().expect("recorder poisoned").insert(rec);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_deterministic_and_distinct() {
        let e = HashEmbedder::new(16);
        assert_eq!(e.embed("same").unwrap(), e.embed("same").unwrap());
        let vs: Vec<Vec<f64>> = (0..100).map(|i| e.embed(&format!("text {i}")).unwrap()).collect();
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                assert_ne!(vs[i], vs[j]);
            }
        }
        assert!(vs.iter().flatten().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn hash_embedder_handles_dims_beyond_one_block() {
        let v = HashEmbedder::new(19).embed("x").unwrap();
        assert_eq!(v.len(), 19);
    }

    #[test]
    fn fixture_file_round_trip_feeds_all_mocks() {
        let req = ChatRequest::user("What?").with_samples(2, 0.5);
        let rec_llm = RecordingLlm::new(RuleLlm::new(|r: &ChatRequest| vec!["A".to_string(); r.n]));
        rec_llm.generate(&req).unwrap();
        let rec_nli = RecordingNli::new(ExactMatchNli);
        rec_nli.entails("x", "y").unwrap();
        let mut table = TableScorer::default();
        table.insert("q", "d1", 2.0);

        let mut set = rec_llm.fixture();
        set.merge(rec_nli.fixture());
        set.merge(table.to_fixture());
        let mut emb = ScriptedEmbedder::new(2);
        emb.insert("d1", vec![1.0, 0.0]);
        set.insert(FixtureRecord {
            vector: Some(vec![1.0, 0.0]),
            ..FixtureRecord::bare(fingerprint_embed("d1", 2))
        });

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fx.jsonl");
        set.save(&p).unwrap();
        let back = FixtureSet::load(&p).unwrap();
        assert_eq!(back, set);

        assert_eq!(ScriptedLlm::from_fixture(&back).generate(&req).unwrap(), ["A", "A"]);
        assert!(!ScriptedNli::from_fixture(&back).entails("x", "y").unwrap());
        assert_eq!(TableScorer::from_fixture(&back).score("q", "d1").unwrap(), 2.0);
        assert_eq!(ScriptedEmbedder::from_fixture(&back, 2).embed("d1").unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            ScriptedNli::from_fixture(&back).entails("y", "x"),
            Err(ClientError::FixtureMiss { kind: "nli", .. })
        ));
    }
}
