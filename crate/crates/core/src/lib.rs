//! Fair and distributionally robust learning to rank.
//!
//! A ranker choosing a doubly-stochastic matrix `P` plays against an
//! adversary choosing item relevance probabilities `q` that must match the
//! feature moments of the training data. The ranker maximizes expected
//! utility `qᵀPv` minus a penalty `λ |fᵀPv|` on the group exposure gap. The
//! absolute value is handled through a sign multiplier `s ∈ [−1, 1]` that the
//! adversary side optimizes together with `q`.
//!
//! Training alternates closed-form dual weights, per-query ADMM projections
//! onto the doubly-stochastic matrices and projected-gradient steps on `q`.
//! Inference repeats the game with frozen weights and extracts a ranking with
//! the Hungarian algorithm (or samples one through a Birkhoff-von Neumann
//! decomposition).

pub mod baselines;
pub mod dataprep;
mod descent;
pub mod error;
pub mod experiment;
pub mod fairness;
pub mod inference;
pub mod kernels;
pub mod metrics;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    AdversaryBelief, DoublyStochasticMatrix, GroupId, ModelParams, OuterOptions, Permutation,
    PositionBias, RankingProblem, UnlabeledProblem,
};
