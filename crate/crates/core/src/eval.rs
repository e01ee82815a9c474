//! Answer and ranking metrics plus the whitespace-separated qrels and run
//! file formats.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranking::RankedList;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: doc {doc_id:?} repeated for qid {qid:?}")]
    Duplicate {
        line: usize,
        qid: String,
        doc_id: String,
    },
    #[error("k must be >= 1")]
    ZeroK,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One gold string or several acceptable aliases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    One(String),
    Many(Vec<String>),
}

impl Gold {
    pub fn answers(&self) -> &[String] {
        match self {
            Gold::One(s) => std::slice::from_ref(s),
            Gold::Many(v) => v,
        }
    }
}

impl From<&str> for Gold {
    fn from(s: &str) -> Self {
        Gold::One(s.to_string())
    }
}

/// Lowercases, trims punctuation from both ends of every whitespace token,
/// drops tokens left empty and joins with single spaces.
pub fn normalize_answer(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 iff some normalized gold string occurs in the normalized prediction.
/// A gold string that normalizes to nothing never matches.
pub fn cover_em(prediction: &str, gold: &Gold) -> u8 {
    let pred = normalize_answer(prediction);
    let hit = gold.answers().iter().any(|g| {
        let g = normalize_answer(g);
        !g.is_empty() && pred.contains(&g)
    });
    u8::from(hit)
}

/// Graded judgments: qid -> doc_id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Qrels {
    pub judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(qid.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(qid)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn relevant(&self, qid: &str) -> impl Iterator<Item = &str> {
        self.judgments
            .get(qid)
            .into_iter()
            .flat_map(|m| m.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.as_str()))
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut q = Qrels::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(EvalError::Malformed {
                    line: line_no,
                    reason: format!("expected 4 fields, found {}", f.len()),
                });
            }
            let grade: u32 = f[3].parse().map_err(|_| EvalError::Malformed {
                line: line_no,
                reason: format!("grade {:?} is not a non-negative integer", f[3]),
            })?;
            q.insert(f[0], f[2], grade);
        }
        Ok(q)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = String::new();
        for (qid, docs) in &self.judgments {
            for (d, g) in docs {
                out.push_str(&format!("{qid} 0 {d} {g}\n"));
            }
        }
        fs::write(path, out).map_err(io_err(path))
    }
}

/// Ranked output per qid, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub runs: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    pub fn insert<S: Scalar>(&mut self, qid: impl Into<String>, list: &RankedList<S>) {
        self.runs.insert(
            qid.into(),
            list.iter().map(|e| (e.doc_id.clone(), e.score.as_f64())).collect(),
        );
    }

    pub fn ranking(&self, qid: &str) -> &[(String, f64)] {
        self.runs.get(qid).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.runs.values().all(Vec::is_empty)
    }

    /// Lines are re-ordered by their rank column within each qid.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut rows: BTreeMap<String, Vec<(u64, String, f64, usize)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(EvalError::Malformed {
                    line: line_no,
                    reason: format!("expected 6 fields, found {}", f.len()),
                });
            }
            let rank: u64 = f[3].parse().map_err(|_| EvalError::Malformed {
                line: line_no,
                reason: format!("bad rank {:?}", f[3]),
            })?;
            let score: f64 = f[4]
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| EvalError::Malformed {
                    line: line_no,
                    reason: format!("bad score {:?}", f[4]),
                })?;
            rows.entry(f[0].to_string())
                .or_default()
                .push((rank, f[2].to_string(), score, line_no));
        }
        let mut run = RunFile::default();
        for (qid, mut r) in rows {
            r.sort_by_key(|x| x.0);
            let mut seen = HashSet::new();
            for (_, d, _, line) in &r {
                if !seen.insert(d.clone()) {
                    return Err(EvalError::Duplicate {
                        line: *line,
                        qid,
                        doc_id: d.clone(),
                    });
                }
            }
            run.runs.insert(qid, r.into_iter().map(|(_, d, s, _)| (d, s)).collect());
        }
        Ok(run)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// `qid Q0 doc rank score tag`, rank 1-based.
    pub fn write_to<W: Write>(&self, w: &mut W, tag: &str) -> std::io::Result<()> {
        for (qid, docs) in &self.runs {
            for (i, (d, s)) in docs.iter().enumerate() {
                writeln!(w, "{qid} Q0 {d} {} {s} {tag}", i + 1)?;
            }
        }
        Ok(())
    }
}

pub fn load_qrels(path: &Path) -> Result<Qrels, EvalError> {
    Qrels::load(path)
}

pub fn read_run(path: &Path) -> Result<RunFile, EvalError> {
    RunFile::load(path)
}

pub fn write_run(path: &Path, run: &RunFile, tag: &str) -> Result<(), EvalError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    run.write_to(&mut w, tag)
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

/// Per-qid values and their mean.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub per_qid: BTreeMap<String, f64>,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn finish(per_qid: BTreeMap<String, f64>, run: &RunFile, qrels: &Qrels) -> MetricResult {
    let mut warnings: Vec<String> = run
        .runs
        .keys()
        .filter(|q| !per_qid.contains_key(*q))
        .map(|q| format!("qid {q:?} has no positive judgments; excluded"))
        .collect();
    if per_qid.is_empty() {
        warnings.push("no judged qids to evaluate".into());
    }
    if run.is_empty() && !qrels.judgments.is_empty() {
        warnings.push("run is empty".into());
    }
    let mean = if per_qid.is_empty() {
        0.0
    } else {
        per_qid.values().sum::<f64>() / per_qid.len() as f64
    };
    MetricResult {
        per_qid,
        mean,
        warnings,
    }
}

/// Evaluated over every qid with at least one positive judgment.
pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricResult, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let mut per_qid = BTreeMap::new();
    for qid in qrels.judgments.keys() {
        let rel: HashSet<&str> = qrels.relevant(qid).collect();
        if rel.is_empty() {
            continue;
        }
        let hits = run
            .ranking(qid)
            .iter()
            .take(k)
            .filter(|(d, _)| rel.contains(d.as_str()))
            .count();
        per_qid.insert(qid.clone(), hits as f64 / rel.len() as f64);
    }
    Ok(finish(per_qid, run, qrels))
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// Exponential gain, log2(rank + 1) discount; qids with zero ideal DCG are
/// skipped.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricResult, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let mut per_qid = BTreeMap::new();
    for (qid, judged) in &qrels.judgments {
        let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i + 1))
            .sum();
        if idcg <= 0.0 {
            continue;
        }
        let dcg: f64 = run
            .ranking(qid)
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, (d, _))| gain(qrels.grade(qid, d)) / discount(i + 1))
            .sum();
        per_qid.insert(qid.clone(), dcg / idcg);
    }
    Ok(finish(per_qid, run, qrels))
}

/// Metrics keyed as `ndcg@k` / `recall@k`, plus optional cover-EM.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, MetricResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cover_em: Option<MetricResult>,
}

pub fn evaluate_run(run: &RunFile, qrels: &Qrels, ks: &[usize]) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::default();
    for &k in ks {
        report.metrics.insert(format!("ndcg@{k}"), ndcg_at_k(run, qrels, k)?);
        report.metrics.insert(format!("recall@{k}"), recall_at_k(run, qrels, k)?);
    }
    Ok(report)
}

/// Mean cover-EM over `(qid, prediction, gold)` triples.
pub fn cover_em_report<'a, I>(items: I) -> MetricResult
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a Gold)>,
{
    let per_qid: BTreeMap<String, f64> = items
        .into_iter()
        .map(|(q, p, g)| (q.to_string(), f64::from(cover_em(p, g))))
        .collect();
    let mean = if per_qid.is_empty() {
        0.0
    } else {
        per_qid.values().sum::<f64>() / per_qid.len() as f64
    };
    MetricResult {
        per_qid,
        mean,
        warnings: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(q: &str, docs: &[&str]) -> RunFile {
        let mut r = RunFile::default();
        r.runs.insert(
            q.into(),
            docs.iter()
                .enumerate()
                .map(|(i, d)| (d.to_string(), 10.0 - i as f64))
                .collect(),
        );
        r
    }

    #[test]
    fn cover_em_examples() {
        assert_eq!(cover_em("Joseph Ball was her father", &"Joseph Ball".into()), 1);
        assert_eq!(cover_em("joseph ball", &"Joseph Ball".into()), 1);
        assert_eq!(cover_em("unknown", &"Missoula, Montana".into()), 0);
        assert_eq!(cover_em("It is Missoula,   Montana.", &"Missoula, Montana".into()), 1);
        assert_eq!(cover_em("x", &Gold::Many(vec!["y".into(), "X".into()])), 1);
        assert_eq!(cover_em("anything", &"...".into()), 0);
    }

    #[test]
    fn recall_definition() {
        let mut q = Qrels::default();
        q.insert("q1", "a", 1);
        q.insert("q1", "b", 1);
        let r = recall_at_k(&run("q1", &["a", "x", "y"]), &q, 10).unwrap();
        assert_eq!(r.per_qid["q1"], 0.5);
        let r = recall_at_k(&run("q1", &["b", "a"]), &q, 10).unwrap();
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn ndcg_examples() {
        let mut q = Qrels::default();
        q.insert("q1", "a", 1);
        assert_eq!(ndcg_at_k(&run("q1", &["a", "b"]), &q, 10).unwrap().mean, 1.0);
        let v = ndcg_at_k(&run("q1", &["b", "a"]), &q, 10).unwrap().mean;
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        let v = ndcg_at_k(&RunFile::default(), &q, 10).unwrap();
        assert_eq!(v.per_qid["q1"], 0.0);
        assert!(!v.warnings.is_empty());
    }

    #[test]
    fn unjudged_qids_are_excluded_with_warning() {
        let mut q = Qrels::default();
        q.insert("q1", "a", 1);
        q.insert("q2", "a", 0);
        let mut r = run("q1", &["a"]);
        r.runs.extend(run("q3", &["a"]).runs);
        let m = recall_at_k(&r, &q, 1).unwrap();
        assert_eq!(m.per_qid.keys().collect::<Vec<_>>(), ["q1"]);
        assert!(m.warnings.iter().any(|w| w.contains("q3")));
        let m = ndcg_at_k(&r, &q, 1).unwrap();
        assert!(!m.per_qid.contains_key("q2"));
        assert!(matches!(recall_at_k(&r, &q, 0), Err(EvalError::ZeroK)));
    }

    #[test]
    fn formats() {
        let q = Qrels::parse("q1 0 d7 1\n").unwrap();
        assert_eq!(q.grade("q1", "d7"), 1);
        let err = Qrels::parse("q1 0 d7 1\nq1 0 d8\n").unwrap_err();
        assert!(matches!(err, EvalError::Malformed { line: 2, .. }));
        assert!(matches!(Qrels::parse("q 0 d -1").unwrap_err(), EvalError::Malformed { line: 1, .. }));

        let mut r = RunFile::default();
        r.runs.insert("q1".into(), vec![("d7".into(), 12.5)]);
        let mut buf = Vec::new();
        r.write_to(&mut buf, "sunar").unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "q1 Q0 d7 1 12.5 sunar\n");

        let parsed = RunFile::parse("q1 Q0 b 2 1 t\nq1 Q0 a 1 2 t\n").unwrap();
        assert_eq!(parsed.ranking("q1")[0].0, "a");
        assert!(matches!(
            RunFile::parse("q1 Q0 a 1 2 t\nq1 Q0 a 2 1 t\n").unwrap_err(),
            EvalError::Duplicate { line: 2, .. }
        ));
    }

    #[test]
    fn run_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RunFile::default();
        for q in 0..10 {
            r.runs.insert(
                format!("q{q}"),
                (0..10).map(|i| (format!("d{}", (i * 7 + q) % 13), 1.0 / (i as f64 + 1.3))).collect(),
            );
        }
        let p = dir.path().join("run.trec");
        write_run(&p, &r, "t").unwrap();
        let back = read_run(&p).unwrap();
        assert_eq!(back, r);
    }
}
