//! Node embeddings for weighted similarity graphs.
//!
//! A stack of graph convolutions mixes each node's content features with
//! weighted averages of its neighbors' representations; a dense back-end
//! projects the result into an embedding space trained with triplet loss.
//! Retrieval quality is measured with NDCG@K on held-out nodes whose
//! mutual connections stay hidden during embedding.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport};
pub use graph::{ArtistGraph, Split, TraceResult};
pub use model::{Checkpoint, ModelConfig, ModelParams};
pub use tensor::{Matrix, SparseMatrix};
pub use training::{train, TrainConfig, TrainOutcome};
