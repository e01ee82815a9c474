//! Multi-hop question answering over a document corpus. Sub-questions are
//! retrieved with budgeted re-ranking that alternates between first-stage
//! candidates and corpus-graph neighbors, optionally penalized by how
//! inconsistent sampled answers are, and a final meta-reasoning pass reads
//! the whole path.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the width for callers that do not care.

pub mod clients;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod graph;
pub mod index;
pub mod nar;
pub mod pipeline;
pub mod prompts;
pub mod ranking;
pub mod scalar;
pub mod testkit;
pub mod text;
pub mod uncertainty;

pub use corpus::{ingest_corpus, Corpus, Document};
pub use eval::{cover_em, ndcg_at_k, recall_at_k, Gold, Qrels, RunFile};
pub use graph::{build_graph, NeighborhoodGraph};
pub use index::{build_term_index, TermIndex};
pub use nar::{run_nar, NarConfig, NarTrace, Pool};
pub use pipeline::{Engine, PipelineConfig, ReasoningPath};
pub use ranking::{Origin, RankedList, ScoredDoc};
pub use scalar::Scalar;
pub use uncertainty::{cluster_answers, rescore_batch, SemanticClustering};

pub type Graph = NeighborhoodGraph<f64>;
pub type GraphF32 = NeighborhoodGraph<f32>;
pub type Embeddings = embedding::EmbeddingStore<f64>;
pub type EmbeddingsF32 = embedding::EmbeddingStore<f32>;
pub type Ranking = RankedList<f64>;
pub type RankingF32 = RankedList<f32>;
pub type Trace = NarTrace<f64>;
pub type Reasoning = ReasoningPath<f64>;
pub type Pipeline = Engine<f64>;
pub type PipelineF32 = Engine<f32>;
