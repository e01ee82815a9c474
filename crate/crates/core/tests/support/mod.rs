//! Straight-line reference of the alternating re-ranking loop, written
//! without any of the library's pool or ranking types.

use std::collections::{HashMap, HashSet};

use sunar_core::graph::NeighborhoodGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct RefIteration {
    pub pool: char,
    pub batch: Vec<String>,
    pub scores: Vec<f64>,
}

pub struct RefOutput {
    pub ranked: Vec<(String, f64)>,
    pub iterations: Vec<RefIteration>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `initial` in first-stage order; `logits` keyed by doc id.
pub fn reference_nar(
    initial: &[String],
    graph: &NeighborhoodGraph<f64>,
    logits: &HashMap<String, f64>,
    b: usize,
    c: usize,
    neighbor_limit: usize,
) -> RefOutput {
    let mut r: Vec<String> = initial.to_vec();
    // (doc, source score, similarity)
    let mut n: Vec<(String, f64, f64)> = Vec::new();
    let mut scored: Vec<(String, f64)> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut iterations = Vec::new();
    let mut want_r = true;

    loop {
        if scored.len() >= c {
            break;
        }
        let use_r = if want_r && !r.is_empty() {
            true
        } else if !want_r && !n.is_empty() {
            false
        } else if r.is_empty() && n.is_empty() {
            break;
        } else {
            !want_r
        };
        let take = b.min(c - scored.len());
        let batch: Vec<String> = if use_r {
            let k = take.min(r.len());
            r.drain(..k).collect()
        } else {
            n.sort_by(|x, y| {
                y.1.partial_cmp(&x.1)
                    .unwrap()
                    .then(y.2.partial_cmp(&x.2).unwrap())
                    .then(x.0.cmp(&y.0))
            });
            let k = take.min(n.len());
            n.drain(..k).map(|e| e.0).collect()
        };
        let scores: Vec<f64> = batch.iter().map(|d| sigmoid(logits[d])).collect();
        for d in &batch {
            seen.insert(d.clone());
        }
        r.retain(|d| !seen.contains(d));
        n.retain(|e| !seen.contains(&e.0));
        for (d, &s) in batch.iter().zip(&scores) {
            for (nb, sim) in graph.neighbors(d, neighbor_limit).unwrap_or_default() {
                if seen.contains(nb) {
                    continue;
                }
                match n.iter_mut().find(|e| e.0 == nb) {
                    Some(e) => {
                        if s > e.1 || (s == e.1 && sim > e.2) {
                            e.1 = s;
                            e.2 = sim;
                        }
                    }
                    None => n.push((nb.to_string(), s, sim)),
                }
            }
            scored.push((d.clone(), s));
        }
        iterations.push(RefIteration {
            pool: if use_r { 'R' } else { 'N' },
            batch,
            scores,
        });
        want_r = !want_r;
    }
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    RefOutput {
        ranked: scored,
        iterations,
    }
}
