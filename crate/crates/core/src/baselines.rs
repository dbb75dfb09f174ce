//! Comparison rankers run through the same harness as the robust model:
//! ridge regression followed by a fairness-penalized re-ranking, and a
//! uniformly random ranker.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_len, Error, Result};
use crate::fairness::build_fairness_vector;
use crate::inference::{rank_deterministic, InferenceDiagnostics, InferenceResult};
use crate::kernels::{AdmmOptions, AdmmState};
use crate::trainer::response_at;
use crate::types::{AdversaryBelief, GroupId, Permutation, PositionBias, RankingProblem};

/// Smoothing used by the re-ranker's projection.
pub const POST_PROC_MU: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub weights: DVector<f64>,
    pub intercept: f64,
    pub ridge: f64,
}

impl RegressionModel {
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<DVector<f64>> {
        ensure_len("feature count", self.weights.len(), features.ncols())?;
        Ok((features * &self.weights).add_scalar(self.intercept))
    }
}

/// Least squares of relevance on features over every item of every query,
/// with `ridge` on the weights only. Solved from the centered normal
/// equations.
pub fn ridge_fit(problems: &[RankingProblem], ridge: f64) -> Result<RegressionModel> {
    let first = problems.first().ok_or(Error::EmptyDataset)?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid(format!("ridge must be >= 0, got {ridge}")));
    }
    let l = first.num_features();
    let mut n = 0usize;
    let mut x_sum = DVector::zeros(l);
    let mut y_sum = 0.0;
    for p in problems {
        ensure_len("feature count", l, p.num_features())?;
        n += p.len();
        for row in p.features.row_iter() {
            x_sum += row.transpose();
        }
        y_sum += p.num_relevant() as f64;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let x_mean = x_sum / n as f64;
    let y_mean = y_sum / n as f64;

    let mut gram = DMatrix::identity(l, l) * ridge;
    let mut rhs = DVector::zeros(l);
    for p in problems {
        let xc = DMatrix::from_fn(p.len(), l, |i, c| p.features[(i, c)] - x_mean[c]);
        let yc = p.relevance_vector().add_scalar(-y_mean);
        gram += xc.transpose() * &xc;
        rhs += xc.transpose() * yc;
    }
    let scale = gram.diagonal().amax().max(f64::MIN_POSITIVE);
    let weights = gram
        .cholesky()
        // a pivot this small means the columns are numerically dependent
        .filter(|c| c.l_dirty().diagonal().iter().all(|d| d * d > 1e-12 * scale))
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| {
            Error::Singular(format!(
                "normal equations are singular with ridge {ridge}; use a positive ridge"
            ))
        })?;
    let intercept = y_mean - weights.dot(&x_mean);
    Ok(RegressionModel {
        weights,
        intercept,
        ridge,
    })
}

/// Re-ranks predicted utilities: `P* = Proj_DS((û + λ f(û)) vᵀ / μ)` with `û`
/// clipped to `[0, 1]`, then the maximum assignment of `P*`.
pub fn post_process_rank(
    predicted: &DVector<f64>,
    groups: &[GroupId],
    lambda: f64,
    mu: f64,
    bias: &PositionBias,
) -> Result<InferenceResult> {
    let m = predicted.len();
    if m == 0 {
        return Err(Error::invalid("cannot rank an empty query"));
    }
    if predicted.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("predicted utilities"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let belief = AdversaryBelief::clamped(predicted.clone());
    let f = build_fairness_vector(&belief, groups)?.f;
    let admm = AdmmOptions::default();
    let mut state = AdmmState::new(m);
    let proj = response_at(&mut state, belief.values(), 1.0, &f, bias, lambda, mu, &admm)?;
    Ok(InferenceResult {
        ranking: rank_deterministic(&proj.matrix)?,
        adversary_belief: belief,
        diagnostics: InferenceDiagnostics {
            iterations: 0,
            converged: true,
            projected_grad_norm: 0.0,
            admm_iterations: proj.iterations,
            primal_residual: proj.primal_residual,
            dual_residual: proj.dual_residual,
        },
        p_star: proj.matrix,
    })
}

/// A uniformly random ranking of `m` items.
pub fn random_rank(m: usize, seed: u64) -> Permutation {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Permutation::from_order(&order).expect("a shuffle is a permutation")
}
