//! Test-time game with frozen dual weights, followed by ranking extraction.
//!
//! For a query without labels the adversary minimizes
//! `max_P qᵀPv − ⟨q, Xθ*⟩ + λfᵀPv − μ/2‖P‖² + μ/2‖q‖²` over `q ∈ [0,1]^M`
//! by the same projected descent used in training. The converged `P*` is
//! turned into a deterministic ranking by maximum-mass assignment, or into a
//! sampled one through its Birkhoff-von Neumann decomposition.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::descent::{BeliefObjective, BlockEval, Descent};
use crate::error::{ensure_len, Error, Result};
use crate::fairness::FairnessVector;
use crate::kernels::{bvn_decompose, hungarian_max, sample_bvn, AdmmOptions, AdmmState};
use crate::trainer::{block_grad, evaluate_query, initial_block, rebuild_fairness, split_block};
use crate::types::{
    AdversaryBelief, DoublyStochasticMatrix, ModelParams, Permutation, PositionBias,
    UnlabeledProblem,
};

/// Residual-mass tolerance for the decomposition behind stochastic ranking.
pub const BVN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub projected_grad_norm: f64,
    pub admm_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub p_star: DoublyStochasticMatrix,
    pub ranking: Permutation,
    pub adversary_belief: AdversaryBelief,
    pub diagnostics: InferenceDiagnostics,
}

struct InferObjective<'a> {
    problem: &'a UnlabeledProblem,
    score: DVector<f64>,
    lambda: f64,
    mu: f64,
    admm: AdmmOptions,
    bias: PositionBias,
    fairness: Vec<FairnessVector>,
    state: AdmmState,
}

impl BeliefObjective for InferObjective<'_> {
    fn refresh(&mut self, q: &[DVector<f64>]) -> Result<bool> {
        if self.lambda == 0.0 && !self.fairness.is_empty() {
            return Ok(false);
        }
        let rebuilt = rebuild_fairness(q, std::iter::once(self.problem.groups.as_slice()))?;
        let changed = rebuilt != self.fairness;
        self.fairness = rebuilt;
        Ok(changed)
    }

    fn evaluate(&mut self, q: &[DVector<f64>]) -> Result<BlockEval> {
        let (qi, s) = split_block(&q[0], self.problem.len());
        let e = evaluate_query(
            &mut self.state,
            &qi,
            Some(s),
            &self.score,
            0.0,
            &self.fairness[0].f,
            &self.bias,
            self.lambda,
            self.mu,
            &self.admm,
        )?;
        Ok(BlockEval {
            total: e.value,
            grads: vec![block_grad(&e, q[0].len())],
            projections: vec![e.p_star],
            theta: None,
        })
    }
}

/// Runs the frozen-weight game on one query and ranks by `P*`.
pub fn infer(problem: &UnlabeledProblem, params: &ModelParams) -> Result<InferenceResult> {
    params.validate()?;
    let m = problem.len();
    if m == 0 {
        return Err(Error::invalid("cannot rank an empty query"));
    }
    ensure_len("groups", m, problem.groups.len())?;
    ensure_len("theta", problem.features.ncols(), params.theta.len())?;

    let mut objective = InferObjective {
        problem,
        score: &problem.features * &params.theta,
        lambda: params.lambda,
        mu: params.mu,
        admm: params.admm,
        bias: PositionBias::new(m),
        fairness: Vec::new(),
        state: AdmmState::new(m),
    };
    let mut descent = Descent::new(vec![initial_block(m, params.lambda > 0.0)]);
    let converged = descent.run(&mut objective, &params.outer)?;
    if !converged {
        log::debug!(
            "inference on query {} stopped after {} iterations with projected gradient {:.3e}",
            problem.query_id,
            descent.iterations,
            descent.pg_norm
        );
    }
    let last = descent.last.take().expect("descent evaluates before returning");
    let proj = last.projections.into_iter().next().expect("one block");
    let ranking = rank_deterministic(&proj.matrix)?;
    Ok(InferenceResult {
        ranking,
        adversary_belief: AdversaryBelief::clamped(split_block(&descent.q[0], m).0),
        diagnostics: InferenceDiagnostics {
            iterations: descent.iterations,
            converged,
            projected_grad_norm: descent.pg_norm,
            admm_iterations: objective.state.iteration,
            primal_residual: proj.primal_residual,
            dual_residual: proj.dual_residual,
        },
        p_star: proj.matrix,
    })
}

/// Independent per-query inference, results in input order.
pub fn infer_batch(problems: &[UnlabeledProblem], params: &ModelParams) -> Result<Vec<InferenceResult>> {
    problems.par_iter().map(|p| infer(p, params)).collect()
}

/// The assignment maximizing the total probability mass `Σ_j P[j, π_j]`.
pub fn rank_deterministic(p: &DoublyStochasticMatrix) -> Result<Permutation> {
    hungarian_max(p.as_matrix())
}

/// A ranking drawn from the Birkhoff-von Neumann decomposition of `p`.
pub fn rank_stochastic<R: Rng + ?Sized>(p: &DoublyStochasticMatrix, rng: &mut R) -> Result<Permutation> {
    sample_bvn(&bvn_decompose(p, BVN_TOL)?, rng)
}
