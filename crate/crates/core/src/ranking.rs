//! Ranked lists of scored documents.

use serde::{Deserialize, Serialize};

use crate::scalar::{cmp_scalar, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    FirstStage,
    Neighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ScoredDoc<S> {
    pub doc_id: String,
    pub score: S,
    pub origin: Origin,
    /// Batch document whose adjacency produced this neighbor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_doc: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_index: Option<usize>,
}

impl<S: Scalar> ScoredDoc<S> {
    pub fn first_stage(doc_id: impl Into<String>, score: S) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
            origin: Origin::FirstStage,
            source_doc: None,
            batch_index: None,
        }
    }

    pub fn neighbor(doc_id: impl Into<String>, score: S, source: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
            origin: Origin::Neighbor,
            source_doc: Some(source.into()),
            batch_index: None,
        }
    }
}

/// Descending score, then ascending doc_id.
pub fn rank_order<S: Scalar>(a: &ScoredDoc<S>, b: &ScoredDoc<S>) -> std::cmp::Ordering {
    cmp_scalar(b.score, a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Documents ordered by descending score with ascending doc_id as tie-break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RankedList<S> {
    entries: Vec<ScoredDoc<S>>,
}

impl<S> Default for RankedList<S> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
        }
    }
}

impl<S: Scalar> RankedList<S> {
    /// Sorts the entries; duplicate doc_ids keep only their best-ranked entry.
    pub fn from_entries(mut entries: Vec<ScoredDoc<S>>) -> Self {
        entries.sort_by(rank_order);
        let mut seen = std::collections::HashSet::new();
        entries.retain(|e| seen.insert(e.doc_id.clone()));
        Self { entries }
    }

    pub fn entries(&self) -> &[ScoredDoc<S>] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ScoredDoc<S>> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.doc_id.as_str()).collect()
    }

    pub fn top(&self, l: usize) -> Self {
        Self {
            entries: self.entries.iter().take(l).cloned().collect(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ScoredDoc<S>> {
        self.entries.iter()
    }
}

impl<'a, S> IntoIterator for &'a RankedList<S> {
    type Item = &'a ScoredDoc<S>;
    type IntoIter = std::slice::Iter<'a, ScoredDoc<S>>;
    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}
