//! Offline document-neighborhood graph: exact cosine k-nearest neighbors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::EmbeddingStore;
use crate::scalar::{cmp_scalar, Scalar};

pub const GRAPH_MAGIC: &str = "SUNAR-GRAPH";
pub const GRAPH_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot build a graph from an empty embedding store")]
    EmptyStore,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("unknown document {0:?} in neighborhood graph")]
    UnknownDoc(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported graph version {found:?} (expected {GRAPH_VERSION})")]
    Version { found: String },
    #[error("corrupt graph file at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("doc_id {0:?} cannot be written to a graph file (contains whitespace)")]
    UnwritableId(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge<S> {
    pub doc_id: String,
    pub similarity: S,
}

/// Directed KNN graph. Each adjacency list is sorted by descending similarity,
/// then ascending doc_id, and never contains the node itself.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodGraph<S> {
    k: usize,
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<Edge<S>>>,
}

/// Non-fatal observations made while building.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    /// Documents whose vector has zero norm; they get similarity 0 to everyone.
    pub zero_norm: Vec<String>,
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Cosine similarity given precomputed norms; zero if either norm is zero.
pub fn cosine_with_norms<S: Scalar>(a: &[S], na: S, b: &[S], nb: S) -> S {
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    dot(a, b) / (na * nb)
}

pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    cosine_with_norms(a, dot(a, a).sqrt(), b, dot(b, b).sqrt())
}

impl<S: Scalar> NeighborhoodGraph<S> {
    /// Assembles a graph from explicit adjacency lists, normalizing list order,
    /// dropping self-edges and truncating to `k`.
    pub fn from_adjacency<I, N>(k: usize, adjacency: I) -> Self
    where
        I: IntoIterator<Item = (String, N)>,
        N: IntoIterator<Item = (String, S)>,
    {
        let mut g = Self {
            k,
            nodes: Vec::new(),
            index: HashMap::new(),
            adjacency: Vec::new(),
        };
        for (id, ns) in adjacency {
            let mut edges: Vec<Edge<S>> = ns
                .into_iter()
                .filter(|(n, _)| *n != id)
                .map(|(doc_id, similarity)| Edge { doc_id, similarity })
                .collect();
            sort_edges(&mut edges);
            edges.dedup_by(|a, b| a.doc_id == b.doc_id);
            edges.truncate(k);
            match g.index.get(&id) {
                Some(&i) => g.adjacency[i] = edges,
                None => {
                    g.index.insert(id.clone(), g.nodes.len());
                    g.nodes.push(id);
                    g.adjacency.push(edges);
                }
            }
        }
        g
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.index.contains_key(doc_id)
    }

    pub fn adjacency(&self, doc_id: &str) -> Option<&[Edge<S>]> {
        self.index.get(doc_id).map(|&i| self.adjacency[i].as_slice())
    }

    /// First `limit` neighbors of `doc_id`, in adjacency order.
    pub fn neighbors(&self, doc_id: &str, limit: usize) -> Result<Vec<(&str, S)>, GraphError> {
        let adj = self
            .adjacency(doc_id)
            .ok_or_else(|| GraphError::UnknownDoc(doc_id.to_string()))?;
        Ok(adj
            .iter()
            .take(limit)
            .map(|e| (e.doc_id.as_str(), e.similarity))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let io = |source| GraphError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w).map_err(|e| match e {
            GraphError::Io { source, .. } => io(source),
            other => other,
        })?;
        w.flush().map_err(io)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), GraphError> {
        let io = |source| GraphError::Io {
            path: "<writer>".into(),
            source,
        };
        writeln!(w, "{GRAPH_MAGIC} {GRAPH_VERSION} k={}", self.k).map_err(io)?;
        for (id, adj) in self.nodes.iter().zip(&self.adjacency) {
            if id.chars().any(char::is_whitespace) {
                return Err(GraphError::UnwritableId(id.clone()));
            }
            let cells: Vec<String> = adj
                .iter()
                .map(|e| format!("{}:{:.6}", e.doc_id, e.similarity.as_f64()))
                .collect();
            writeln!(w, "{id}\t{}", cells.join(" ")).map_err(io)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|source| GraphError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let corrupt = |line: usize, reason: &str| GraphError::Corrupt {
            line,
            reason: reason.to_string(),
        };
        if !text.ends_with('\n') {
            return Err(corrupt(text.lines().count().max(1), "truncated (no final newline)"));
        }
        let mut lines = text.split_terminator('\n');
        let header = lines.next().ok_or_else(|| corrupt(1, "missing header"))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(GRAPH_MAGIC) {
            return Err(corrupt(1, "bad magic"));
        }
        let version = parts.next().ok_or_else(|| corrupt(1, "missing version"))?;
        if version != GRAPH_VERSION {
            return Err(GraphError::Version {
                found: version.to_string(),
            });
        }
        let k: usize = parts
            .next()
            .and_then(|p| p.strip_prefix("k="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt(1, "missing k=<k>"))?;
        if parts.next().is_some() {
            return Err(corrupt(1, "trailing header fields"));
        }

        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| corrupt(lineno, "missing tab separator"))?;
            if id.is_empty() {
                return Err(corrupt(lineno, "empty doc_id"));
            }
            let mut edges = Vec::new();
            for cell in rest.split(' ').filter(|c| !c.is_empty()) {
                let (n, sim) = cell
                    .rsplit_once(':')
                    .ok_or_else(|| corrupt(lineno, "edge without ':'"))?;
                let sim: f64 = sim
                    .parse()
                    .map_err(|_| corrupt(lineno, "unparseable similarity"))?;
                edges.push((n.to_string(), S::from_f64_lossy(sim)));
            }
            if edges.len() > k {
                return Err(corrupt(lineno, "more than k neighbors"));
            }
            rows.push((id.to_string(), edges));
        }
        let g = Self::from_adjacency(k, rows);
        for (i, adj) in g.adjacency.iter().enumerate() {
            if let Some(e) = adj.iter().find(|e| !g.index.contains_key(&e.doc_id)) {
                return Err(corrupt(
                    i + 2,
                    &format!("neighbor {:?} is not a node (file truncated?)", e.doc_id),
                ));
            }
        }
        Ok(g)
    }
}

fn sort_edges<S: Scalar>(edges: &mut [Edge<S>]) {
    edges.sort_by(|a, b| {
        cmp_scalar(b.similarity, a.similarity).then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

/// Exact brute-force cosine KNN over every stored vector, self excluded.
/// Nodes are processed in parallel and reassembled in store order.
pub fn build_graph<S: Scalar>(
    store: &EmbeddingStore<S>,
    k: usize,
) -> Result<(NeighborhoodGraph<S>, BuildReport), GraphError> {
    if store.is_empty() {
        return Err(GraphError::EmptyStore);
    }
    if k == 0 {
        return Err(GraphError::ZeroK);
    }
    let rows: Vec<(&str, &[S])> = store.iter().collect();
    let norms: Vec<S> = rows.iter().map(|(_, v)| dot(v, v).sqrt()).collect();
    let adjacency: Vec<(String, Vec<(String, S)>)> = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let mut edges: Vec<Edge<S>> = (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| Edge {
                    doc_id: rows[j].0.to_string(),
                    similarity: cosine_with_norms(rows[i].1, norms[i], rows[j].1, norms[j]),
                })
                .collect();
            sort_edges(&mut edges);
            edges.truncate(k);
            (
                rows[i].0.to_string(),
                edges.into_iter().map(|e| (e.doc_id, e.similarity)).collect(),
            )
        })
        .collect();
    let report = BuildReport {
        zero_norm: rows
            .iter()
            .zip(&norms)
            .filter(|(_, n)| **n == S::zero())
            .map(|((id, _), _)| id.to_string())
            .collect(),
    };
    Ok((NeighborhoodGraph::from_adjacency(k, adjacency), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn store(vs: &[(&str, &[f64])]) -> EmbeddingStore<f64> {
        let mut s = EmbeddingStore::new(vs[0].1.len()).unwrap();
        for (id, v) in vs {
            s.insert(*id, v.to_vec()).unwrap();
        }
        s
    }

    fn three() -> EmbeddingStore<f64> {
        store(&[("d1", &[1.0, 0.0]), ("d2", &[0.9, 0.1]), ("d3", &[0.0, 1.0])])
    }

    // Independent pairwise cosine over plain vectors.
    fn brute_knn(vs: &[(String, Vec<f64>)], k: usize) -> Vec<(String, Vec<(String, f64)>)> {
        vs.iter()
            .map(|(a, va)| {
                let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
                let mut sims: Vec<(String, f64)> = vs
                    .iter()
                    .filter(|(b, _)| b != a)
                    .map(|(b, vb)| {
                        let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let d: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
                        let s = if na == 0.0 || nb == 0.0 { 0.0 } else { d / (na * nb) };
                        (b.clone(), s)
                    })
                    .collect();
                sims.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
                sims.truncate(k);
                (a.clone(), sims)
            })
            .collect()
    }

    #[test]
    fn three_node_k1() {
        let (g, report) = build_graph(&three(), 1).unwrap();
        assert!(report.zero_norm.is_empty());
        let first = |id: &str| g.neighbors(id, 10).unwrap()[0].0.to_string();
        assert_eq!(first("d1"), "d2");
        assert_eq!(first("d2"), "d1");
        assert_eq!(first("d3"), "d2");
        let (n, sim) = g.neighbors("d3", 1).unwrap()[0];
        assert_eq!(n, "d2");
        let expect = 0.1 / (0.82f64).sqrt();
        assert!((sim - expect).abs() < 1e-12);
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn k_at_least_n_gives_full_lists() {
        let (g, _) = build_graph(&three(), 10).unwrap();
        for id in ["d1", "d2", "d3"] {
            assert_eq!(g.adjacency(id).unwrap().len(), 2);
        }
    }

    #[test]
    fn limits_and_unknown_ids() {
        let (g, _) = build_graph(&three(), 2).unwrap();
        assert!(g.neighbors("d1", 0).unwrap().is_empty());
        let err = g.neighbors("nope", 1).unwrap_err();
        assert!(err.to_string().contains("\"nope\""));
    }

    #[test]
    fn zero_norm_flagged_not_fatal() {
        let s = store(&[("a", &[0.0, 0.0]), ("b", &[1.0, 0.0]), ("c", &[0.0, 1.0])]);
        let (g, report) = build_graph(&s, 2).unwrap();
        assert_eq!(report.zero_norm, ["a"]);
        assert!(g.adjacency("a").unwrap().iter().all(|e| e.similarity == 0.0));
    }

    #[test]
    fn empty_store_and_zero_k_rejected() {
        let s: EmbeddingStore<f64> = EmbeddingStore::new(2).unwrap();
        assert!(matches!(build_graph(&s, 1), Err(GraphError::EmptyStore)));
        assert!(matches!(build_graph(&three(), 0), Err(GraphError::ZeroK)));
    }

    #[test]
    fn matches_brute_force_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vs: Vec<(String, Vec<f64>)> = (0..60)
            .map(|i| (format!("n{i:02}"), (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let mut s = EmbeddingStore::new(5).unwrap();
        for (id, v) in &vs {
            s.insert(id.clone(), v.clone()).unwrap();
        }
        let (g, _) = build_graph(&s, 7).unwrap();
        for (id, expect) in brute_knn(&vs, 7) {
            let got = g.neighbors(&id, 7).unwrap();
            assert_eq!(got.len(), expect.len());
            for ((gi, gs), (ei, es)) in got.iter().zip(&expect) {
                assert_eq!(gi, ei);
                assert!((gs - es).abs() < 1e-12);
            }
        }
        assert_eq!(g.edge_count(), 7 * 60);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut s = EmbeddingStore::new(4).unwrap();
        for i in 0..200 {
            s.insert(format!("x{i}"), (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        }
        let build = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| build_graph(&s, 10).unwrap().0)
        };
        assert_eq!(build(1), build(4));
    }

    #[test]
    fn save_load_round_trip() {
        let (g, _) = build_graph(&three(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.txt");
        g.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("SUNAR-GRAPH v1 k=2\nd1\td2:0.993884 d3:0.000000\n"));
        let back: NeighborhoodGraph<f64> = NeighborhoodGraph::load(&p).unwrap();
        assert_eq!(back.nodes(), g.nodes());
        for id in g.nodes() {
            let a = g.adjacency(id).unwrap();
            let b = back.adjacency(id).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.doc_id, y.doc_id);
                assert!((x.similarity - y.similarity).abs() <= 5e-7);
            }
        }
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(matches!(
            NeighborhoodGraph::<f64>::parse("NOT-A-GRAPH v1 k=2\n"),
            Err(GraphError::Corrupt { line: 1, .. })
        ));
        assert!(matches!(
            NeighborhoodGraph::<f64>::parse("SUNAR-GRAPH v2 k=2\n"),
            Err(GraphError::Version { .. })
        ));
        assert!(matches!(
            NeighborhoodGraph::<f64>::parse("SUNAR-GRAPH v1 k=2\na\tb:0.5"),
            Err(GraphError::Corrupt { .. })
        ));
        assert!(matches!(
            NeighborhoodGraph::<f64>::parse("SUNAR-GRAPH v1 k=2\na\tb:0.5\n"),
            Err(GraphError::Corrupt { line: 2, .. })
        ));
    }

    fn ids_of(g: &NeighborhoodGraph<f64>, n: &str) -> Vec<String> {
        g.adjacency(n).unwrap().iter().map(|e| e.doc_id.clone()).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn scale_invariant_and_symmetric(
            vs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..25),
            exp in -10i32..10,
            factor in 0.01f64..100.0,
            k in 1usize..6,
        ) {
            let mut s = EmbeddingStore::new(3).unwrap();
            for (i, v) in vs.iter().enumerate() {
                s.insert(format!("p{i:02}"), v.clone()).unwrap();
            }
            let (g, _) = build_graph(&s, k).unwrap();
            // Power-of-two scaling is exact, so lists must match bit for bit.
            let (g2, _) = build_graph(&s.scaled(2f64.powi(exp)), k).unwrap();
            prop_assert_eq!(&g, &g2);

            // Arbitrary positive scaling: compare full lists wherever sims are well separated.
            let full = s.len() - 1;
            let (a, _) = build_graph(&s, full).unwrap();
            let (b, _) = build_graph(&s.scaled(factor), full).unwrap();
            for n in a.nodes() {
                let sims: Vec<f64> = a.adjacency(n).unwrap().iter().map(|e| e.similarity).collect();
                if sims.windows(2).all(|w| (w[0] - w[1]).abs() > 1e-9) {
                    prop_assert_eq!(ids_of(&a, n), ids_of(&b, n));
                }
                let listed = ids_of(&g, n);
                prop_assert_eq!(listed.len(), k.min(full));
                prop_assert!(!listed.contains(n));
            }
            let vecs: Vec<&[f64]> = s.iter().map(|(_, v)| v).collect();
            for x in &vecs {
                for y in &vecs {
                    prop_assert!((cosine(x, y) - cosine(y, x)).abs() <= 1e-9);
                }
            }
        }
    }
}
