//! Numeric kernels: simplex projection, doubly-stochastic projection by
//! ADMM, maximum-score assignment and Birkhoff-von Neumann decomposition.

mod admm;
mod bvn;
mod hungarian;
mod simplex;

pub use admm::{ds_project, AdmmOptions, AdmmState, Projection};
pub use bvn::{bvn_decompose, sample_bvn, BvnDecomposition, BvnTerm};
pub use hungarian::hungarian_max;
pub use simplex::simplex_project;
