//! Polynomial graph-filter collaborative filtering on implicit feedback.
//!
//! The model scores items for a user by passing the user's binary
//! interaction vector through a spectral filter of the item-item graph:
//! a degree-normalized interaction matrix defines a Gram operator whose
//! eigenvalues live in [0, 1], a Chebyshev-interpolated polynomial shapes
//! the response across that spectrum, and an optional low-rank "ideal pass"
//! term boosts the strongest directions. Everything is matrix-free except
//! the small ideal-pass basis, so fitting is a handful of sparse matvecs.

pub mod cheby;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod sparse;
pub mod svd;
pub mod verify;

pub use cheby::{
    chebyshev_nodes, chebyshev_t, interpolation_coefficients, plateau, ChebyFilterSpec,
    TargetDescriptor,
};
pub use dataset::{InteractionDataset, LoadStats};
pub use error::{Error, Result};
pub use eval::{evaluate, grid_search, ndcg_at_n, recall_at_n, HyperGrid, MetricsReport};
pub use graph::NormalizedGraph;
pub use model::{rank_unseen, ChebyCFModel, HyperParams};
pub use sparse::{BinaryCsr, CsrMatrix, SignalBlock};
pub use svd::{truncated_svd, IdealPassBasis, SvdInfo, SvdOptions};
pub use verify::{run_verification, CheckLine, VerificationReport};

// Every fenced Rust snippet in the guide compiles and runs as a doc-test,
// so the book cannot drift from the API it documents.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/interaction-graph.md")]
    mod interaction_graph {}
    #[doc = include_str!("../../../book/src/polynomial-filters.md")]
    mod polynomial_filters {}
    #[doc = include_str!("../../../book/src/ideal-pass.md")]
    mod ideal_pass {}
    #[doc = include_str!("../../../book/src/scoring-pipeline.md")]
    mod scoring_pipeline {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
