//! Synthetic corpora, scripted worlds and fixture suites for offline,
//! deterministic end-to-end testing.

pub mod suites;
pub mod synthetic;
pub mod world;

use thiserror::Error;

use crate::clients::scripted::TableScorer;
use crate::corpus::{Corpus, Document};
use crate::graph::NeighborhoodGraph;
use crate::nar::NarConfig;
use crate::ranking::{RankedList, ScoredDoc};

pub use suites::{build_fixture_suite, AsuBatch, Suite, SuiteManifest, SUITES};
pub use synthetic::{generate_corpus, SyntheticCorpus, SyntheticSpec};

#[derive(Debug, Error)]
pub enum TestkitError {
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
    #[error("unknown suite {0:?} (known: two-hop, wqa-exemplars, qualitative-table7, asu-distractor)")]
    UnknownSuite(String),
    #[error("{what}: {source}")]
    Artifact {
        what: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("recording run failed: {0}")]
    Recording(String),
}

/// Twelve documents: six first-stage candidates and six leaves hanging off
/// the top candidate, scored from a fixed logit table.
pub struct StarFixture {
    pub sub_question: String,
    pub corpus: Corpus,
    pub initial: RankedList<f64>,
    pub graph: NeighborhoodGraph<f64>,
    pub scorer: TableScorer,
    pub config: NarConfig,
    pub logits: Vec<(String, f64)>,
}

pub const STAR_LOGITS: [f64; 12] = [0.4, -1.2, 2.1, 0.0, -0.3, 1.7, 1.1, -2.0, 2.6, 0.9, -0.5, 0.2];

pub fn star_fixture() -> StarFixture {
    let sub_question = "which star documents matter".to_string();
    let ids: Vec<String> = (1..=12).map(|i| format!("d{i:02}")).collect();
    let corpus = Corpus::from_documents(
        ids.iter()
            .map(|id| Document::new(id, format!("star document {id}")))
            .collect(),
    )
    .expect("valid fixture corpus");
    let initial = RankedList::from_entries(
        ids[..6]
            .iter()
            .enumerate()
            .map(|(i, id)| ScoredDoc::first_stage(id.clone(), 10.0 - i as f64))
            .collect(),
    );
    let hub = ids[0].clone();
    let leaves: Vec<(String, f64)> = ids[6..]
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), 0.9 - 0.1 * i as f64))
        .collect();
    let mut adjacency = vec![(hub.clone(), leaves.clone())];
    adjacency.extend(leaves.iter().map(|(id, s)| (id.clone(), vec![(hub.clone(), *s)])));
    let graph = NeighborhoodGraph::from_adjacency(10, adjacency);
    let mut scorer = TableScorer::default();
    let mut logits = Vec::new();
    for (id, &l) in ids.iter().zip(STAR_LOGITS.iter()) {
        scorer.insert(&sub_question, &corpus.get(id).expect("fixture doc").full_text(), l);
        logits.push((id.clone(), l));
    }
    StarFixture {
        sub_question,
        corpus,
        initial,
        graph,
        scorer,
        config: NarConfig::new(2, 8, 10),
        logits,
    }
}
