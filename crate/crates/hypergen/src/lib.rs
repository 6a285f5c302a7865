//! Generative modeling for hypergraphs through latent embeddings.
//!
//! The pipeline fits hyperlink and node embeddings to an observed hypergraph
//! by constrained maximum likelihood, trains a score-based diffusion model on
//! the fitted hyperlink embeddings, samples fresh embeddings from the reverse
//! SDE, and decodes them into new hyperlinks. Baseline generators operating
//! directly on binary incidence vectors and an RMSE evaluation harness are
//! included for comparisons.

pub mod baselines;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod hypergraph;
pub mod logistic;
pub mod lowrank;
pub mod mle;
pub mod net;
pub mod rng;
pub mod scorediff;
pub mod simulate;

pub use embedding::{EmbeddingSet, NodeParams};
pub use error::{Error, Result};
pub use hypergraph::{
    cooccurrence_stats, degree_summary, load_hypergraph, save_hypergraph, CooccurrenceStats,
    Hypergraph, HypergraphFormat,
};
