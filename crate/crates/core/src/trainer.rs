//! The training game. For fixed adversary beliefs `q` the dual weights have
//! the closed form
//!
//! ```text
//! θ*_l = −1/(γN) Σ_i ⟨qⁱ − uⁱ, Xⁱ_{:,l}⟩
//! ```
//!
//! and each query's ranker best response is the projection of
//! `(q + sλf)vᵀ/μ` onto the doubly-stochastic matrices, with `s ∈ [−1, 1]`
//! chosen so the fairness term never rewards pushing past parity. The
//! beliefs are then moved by projected gradient descent on
//!
//! ```text
//! J(q) = Σ_i [qⁱᵀPⁱv − ⟨qⁱ − uⁱ, Xⁱθ*⟩ − λ|fⁱᵀPⁱv| − μ/2‖Pⁱ‖² + μ/2‖qⁱ‖²] − Nγ/2‖θ*‖²
//! ```
//!
//! whose gradient in `qⁱ` is `Pⁱv − Xⁱθ* + μqⁱ` by the envelope theorem.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descent::{projection_target, BeliefObjective, BlockEval, Descent};
pub use crate::descent::StepStatus;
use crate::error::{ensure_len, Error, Result};
use crate::fairness::{build_fairness_vector, FairnessVector};
use crate::inference::infer_batch;
use crate::kernels::{AdmmOptions, AdmmState, Projection};
use crate::metrics::ndcg;
use crate::types::{
    validate_penalties, AdversaryBelief, DoublyStochasticMatrix, ModelParams, OuterOptions,
    PositionBias, RankingProblem,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    /// Fairness penalty.
    pub lambda: f64,
    /// Regularization of the dual weights.
    pub gamma: f64,
    /// Smoothing of both players.
    pub mu: f64,
    pub admm: AdmmOptions,
    pub outer: OuterOptions,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            gamma: 1.0,
            mu: 1.0,
            admm: AdmmOptions::default(),
            outer: OuterOptions::default(),
        }
    }
}

impl Hyperparams {
    pub fn with_penalties(lambda: f64, gamma: f64, mu: f64) -> Self {
        Self {
            lambda,
            gamma,
            mu,
            ..Self::default()
        }
    }
}

/// `θ*` for the given beliefs, summed over queries in input order.
pub fn theta_star(
    beliefs: &[AdversaryBelief],
    problems: &[RankingProblem],
    gamma: f64,
) -> Result<DVector<f64>> {
    ensure_len("beliefs", problems.len(), beliefs.len())?;
    let q: Vec<&DVector<f64>> = beliefs.iter().map(|b| b.values()).collect();
    theta_from(&q, problems, gamma)
}

fn theta_from(q: &[&DVector<f64>], problems: &[RankingProblem], gamma: f64) -> Result<DVector<f64>> {
    let first = problems.first().ok_or(Error::EmptyDataset)?;
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    let l = first.num_features();
    let mut acc = DVector::zeros(l);
    for (qi, p) in q.iter().zip(problems) {
        ensure_len("belief", p.len(), qi.len())?;
        ensure_len("feature count", l, p.num_features())?;
        let diff = *qi - p.relevance_vector();
        acc += p.features.tr_mul(&diff);
    }
    Ok(acc / (-gamma * problems.len() as f64))
}

/// The ranker's best response `argmax_{P∈Δ} qᵀPv − λ|fᵀPv| − μ/2‖P‖²`.
///
/// While the group favored by `f` trails (`fᵀPv ≤ 0`) the fairness term is
/// the reward `λfᵀPv`; past parity it becomes a penalty, so large `λ` settles
/// at parity instead of reversing the disparity. See [`best_response`].
pub fn solve_p_star(
    q: &AdversaryBelief,
    f: &DVector<f64>,
    bias: &PositionBias,
    lambda: f64,
    mu: f64,
    admm: &AdmmOptions,
) -> Result<Projection> {
    let mut state = AdmmState::new(q.len());
    Ok(best_response(&mut state, q.values(), f, bias, lambda, mu, admm)?.projection)
}

#[derive(Debug, Clone)]
pub(crate) struct BestResponse {
    pub projection: Projection,
    /// `s ∈ [−1, 1]` with `P* = proj((q + sλf)vᵀ/μ)`.
    pub multiplier: f64,
}

/// `proj((q + sλf)vᵀ/μ)`, the ranker's best response for a fixed multiplier.
#[allow(clippy::too_many_arguments)]
pub(crate) fn response_at(
    state: &mut AdmmState,
    q: &DVector<f64>,
    s: f64,
    f: &DVector<f64>,
    bias: &PositionBias,
    lambda: f64,
    mu: f64,
    admm: &AdmmOptions,
) -> Result<Projection> {
    let m = q.len();
    ensure_len("fairness vector", m, f.len())?;
    ensure_len("position bias", m, bias.len())?;
    if m == 1 {
        // the only 1x1 doubly-stochastic matrix
        return Ok(Projection {
            matrix: DoublyStochasticMatrix::identity(1),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
        });
    }
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("mu must be > 0, got {mu}")));
    }
    state.project(&projection_target(q, f, bias.values(), s * lambda, mu), admm)
}

/// Longest multiplier search; each step is one warm-started projection.
const MAX_MULTIPLIER_STEPS: usize = 60;

/// Writing `−λ|x| = min_{s∈[−1,1]} sλx` turns the best response into a saddle
/// problem whose inner maximizer is `P(s) = proj((q + sλf)vᵀ/μ)`. The gap
/// `h(s) = fᵀP(s)v` is nondecreasing in `s`, so the minimizing `s` is 1 when
/// `h(1) ≤ 0`, −1 when `h(−1) ≥ 0` and the root of `h` otherwise, found by
/// regula falsi with the Illinois modification.
pub(crate) fn best_response(
    state: &mut AdmmState,
    q: &DVector<f64>,
    f: &DVector<f64>,
    bias: &PositionBias,
    lambda: f64,
    mu: f64,
    admm: &AdmmOptions,
) -> Result<BestResponse> {
    if q.len() == 1 {
        return Ok(BestResponse {
            projection: response_at(state, q, 1.0, f, bias, lambda, mu, admm)?,
            multiplier: 1.0,
        });
    }
    let v = bias.values();
    let mut solve = |s: f64| -> Result<(Projection, f64)> {
        let proj = response_at(state, q, s, f, bias, lambda, mu, admm)?;
        let gap = f.dot(&(proj.matrix.as_matrix() * v));
        Ok((proj, gap))
    };
    let done = |projection, multiplier| Ok(BestResponse { projection, multiplier });

    let (p_hi, h_hi) = solve(1.0)?;
    if lambda == 0.0 || f.iter().all(|&x| x == 0.0) {
        return done(p_hi, 1.0);
    }
    let tol = admm.tol_abs.max(1e-12);
    if h_hi <= tol {
        return done(p_hi, 1.0);
    }
    let (p_mid, h_mid) = solve(0.0)?;
    let (mut lo, mut hi) = if h_mid <= 0.0 {
        ((0.0, h_mid, p_mid), (1.0, h_hi, p_hi))
    } else {
        let (p_lo, h_lo) = solve(-1.0)?;
        if h_lo >= -tol {
            return done(p_lo, -1.0);
        }
        ((-1.0, h_lo, p_lo), (0.0, h_mid, p_mid))
    };
    if lo.1.abs() <= tol {
        return done(lo.2, lo.0);
    }

    // 1 when the last two updates moved the same end
    let mut side = 0i8;
    for _ in 0..MAX_MULTIPLIER_STEPS {
        let s = (hi.0 - hi.1 * (hi.0 - lo.0) / (hi.1 - lo.1)).clamp(lo.0, hi.0);
        let (p, h) = solve(s)?;
        if h.abs() <= tol {
            return done(p, s);
        }
        if h > 0.0 {
            hi = (s, h, p);
            if side == 1 {
                lo.1 *= 0.5;
            }
            side = 1;
        } else {
            lo = (s, h, p);
            if side == -1 {
                hi.1 *= 0.5;
            }
            side = -1;
        }
        if hi.0 - lo.0 <= 1e-12 {
            break;
        }
    }
    // Illinois halving leaves the stored gaps scaled; compare true gaps
    let gap = |p: &Projection| f.dot(&(p.matrix.as_matrix() * v)).abs();
    if gap(&lo.2) <= gap(&hi.2) {
        done(lo.2, lo.0)
    } else {
        done(hi.2, hi.0)
    }
}

/// Value and gradient of one query's term of the belief objective, with the
/// ranker's best response re-solved at `q`.
#[derive(Debug, Clone)]
pub struct QueryEvaluation {
    pub value: f64,
    pub grad: DVector<f64>,
    pub p_star: Projection,
    /// The fairness multiplier `s` behind `p_star`.
    pub multiplier: f64,
    /// Derivative of the value in `s`, `λfᵀP*v`.
    pub grad_multiplier: f64,
}

/// Evaluates `qᵀP*v − ⟨q − u, Xθ⟩ − λ|fᵀP*v| − μ/2‖P*‖² + μ/2‖q‖²` and its
/// gradient `P*v − Xθ + μq`.
#[allow(clippy::too_many_arguments)]
pub fn q_objective_grad(
    q: &AdversaryBelief,
    problem: &RankingProblem,
    theta: &DVector<f64>,
    f: &DVector<f64>,
    bias: &PositionBias,
    lambda: f64,
    mu: f64,
    admm: &AdmmOptions,
) -> Result<QueryEvaluation> {
    ensure_len("belief", problem.len(), q.len())?;
    ensure_len("theta", problem.num_features(), theta.len())?;
    let score = &problem.features * theta;
    let offset = problem.relevance_vector().dot(&score);
    let mut state = AdmmState::new(q.len());
    evaluate_query(&mut state, q.values(), None, &score, offset, f, bias, lambda, mu, admm)
}

/// `score = Xθ`; `offset = ⟨u, Xθ⟩`, zero at inference where `u` is unknown.
/// With `multiplier` given the fairness term is `sλfᵀPv` at that `s`;
/// otherwise `s` is solved for, which gives `−λ|fᵀPv|`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn evaluate_query(
    state: &mut AdmmState,
    q: &DVector<f64>,
    multiplier: Option<f64>,
    score: &DVector<f64>,
    offset: f64,
    f: &DVector<f64>,
    bias: &PositionBias,
    lambda: f64,
    mu: f64,
    admm: &AdmmOptions,
) -> Result<QueryEvaluation> {
    ensure_len("score", q.len(), score.len())?;
    let (p_star, s) = match multiplier {
        Some(s) => (response_at(state, q, s, f, bias, lambda, mu, admm)?, s),
        None => {
            let br = best_response(state, q, f, bias, lambda, mu, admm)?;
            (br.projection, br.multiplier)
        }
    };
    let p = p_star.matrix.as_matrix();
    let pv = p * bias.values();
    let grad_multiplier = lambda * f.dot(&pv);
    let value = q.dot(&pv) - (q.dot(score) - offset) + s * grad_multiplier
        - 0.5 * mu * p.norm_squared()
        + 0.5 * mu * q.norm_squared();
    let grad = pv - score + q * mu;
    Ok(QueryEvaluation {
        value,
        grad,
        p_star,
        multiplier: s,
        grad_multiplier,
    })
}

/// Snapshot of a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub beliefs: Vec<AdversaryBelief>,
    /// Per-query fairness multiplier `s ∈ [−1, 1]`.
    pub multipliers: Vec<f64>,
    pub theta: DVector<f64>,
    pub p_star: Vec<DoublyStochasticMatrix>,
    /// Objective after every accepted step.
    pub objective_trace: Vec<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct TrainDiagnostics {
    pub iterations: usize,
    /// False when the outer loop hit its cap or its line search stalled.
    pub converged: bool,
    pub projected_grad_norm: f64,
    pub objective_trace: Vec<f64>,
    pub max_marginal_violation: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub state: TrainState,
    pub diagnostics: TrainDiagnostics,
}

struct TrainObjective<'a> {
    problems: &'a [RankingProblem],
    hp: Hyperparams,
    bias: PositionBias,
    fairness: Vec<FairnessVector>,
    admm: Vec<AdmmState>,
}

impl BeliefObjective for TrainObjective<'_> {
    fn refresh(&mut self, q: &[DVector<f64>]) -> Result<bool> {
        if self.hp.lambda == 0.0 && !self.fairness.is_empty() {
            return Ok(false);
        }
        let rebuilt = rebuild_fairness(q, self.problems.iter().map(|p| p.groups.as_slice()))?;
        let changed = rebuilt != self.fairness;
        self.fairness = rebuilt;
        Ok(changed)
    }

    fn evaluate(&mut self, q: &[DVector<f64>]) -> Result<BlockEval> {
        let split: Vec<(DVector<f64>, f64)> = q
            .iter()
            .zip(self.problems)
            .map(|(b, p)| split_block(b, p.len()))
            .collect();
        let refs: Vec<&DVector<f64>> = split.iter().map(|(qi, _)| qi).collect();
        let theta = theta_from(&refs, self.problems, self.hp.gamma)?;
        let (hp, bias) = (&self.hp, &self.bias);
        let evals: Vec<Result<QueryEvaluation>> = self
            .admm
            .par_iter_mut()
            .zip(self.problems.par_iter())
            .zip(split.par_iter())
            .zip(self.fairness.par_iter())
            .map(|(((state, problem), (qi, s)), fv)| {
                let score = &problem.features * &theta;
                let offset = problem.relevance_vector().dot(&score);
                evaluate_query(state, qi, Some(*s), &score, offset, &fv.f, bias, hp.lambda, hp.mu, &hp.admm)
            })
            .collect();
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(q.len());
        let mut projections = Vec::with_capacity(q.len());
        for (e, block) in evals.into_iter().zip(q) {
            let e = e?;
            total += e.value;
            grads.push(block_grad(&e, block.len()));
            projections.push(e.p_star);
        }
        total -= 0.5 * hp.gamma * self.problems.len() as f64 * theta.norm_squared();
        Ok(BlockEval {
            total,
            grads,
            projections,
            theta: Some(theta),
        })
    }
}

pub(crate) fn rebuild_fairness<'g>(
    blocks: &[DVector<f64>],
    groups: impl Iterator<Item = &'g [crate::types::GroupId]>,
) -> Result<Vec<FairnessVector>> {
    blocks
        .iter()
        .zip(groups)
        .map(|(b, g)| build_fairness_vector(&AdversaryBelief::clamped(b.rows(0, g.len()).into_owned()), g))
        .collect()
}

// With the fairness term on, each descent block is `[q; t]` and the
// multiplier is `s = 2t − 1`, so one box `[0, 1]` covers both. The adversary
// minimizing over `s ∈ [−1, 1]` turns `sλfᵀPv` into `−λ|fᵀPv|`. Without it
// the block is `q` alone.

pub(crate) fn initial_block(m: usize, fair: bool) -> DVector<f64> {
    let q = AdversaryBelief::uninformative(m).into_inner();
    if fair {
        q.push(1.0)
    } else {
        q
    }
}

pub(crate) fn split_block(block: &DVector<f64>, m: usize) -> (DVector<f64>, f64) {
    if block.len() > m {
        (block.rows(0, m).into_owned(), 2.0 * block[m] - 1.0)
    } else {
        (block.clone(), 1.0)
    }
}

pub(crate) fn block_grad(e: &QueryEvaluation, block_len: usize) -> DVector<f64> {
    if block_len > e.grad.len() {
        e.grad.clone().push(2.0 * e.grad_multiplier)
    } else {
        e.grad.clone()
    }
}

/// A training run that can be advanced one outer iteration at a time.
pub struct Trainer<'a> {
    objective: TrainObjective<'a>,
    descent: Descent,
    converged: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(problems: &'a [RankingProblem], hp: Hyperparams) -> Result<Self> {
        let first = problems.first().ok_or(Error::EmptyDataset)?;
        validate_penalties(hp.lambda, hp.gamma, hp.mu)?;
        let m = first.len();
        for p in problems {
            ensure_len("items per query", m, p.len())?;
            ensure_len("feature count", first.num_features(), p.num_features())?;
        }
        let q0 = vec![initial_block(m, hp.lambda > 0.0); problems.len()];
        Ok(Self {
            objective: TrainObjective {
                problems,
                hp,
                bias: PositionBias::new(m),
                fairness: Vec::new(),
                admm: vec![AdmmState::new(m); problems.len()],
            },
            descent: Descent::new(q0),
            converged: false,
        })
    }

    /// One outer iteration: rebuild `f`, solve every `P*`, recompute `θ*` and
    /// take one projected step on all beliefs.
    pub fn step(&mut self) -> Result<StepStatus> {
        let outer = self.objective.hp.outer;
        let status = self.descent.step(&mut self.objective, &outer)?;
        self.converged = status == StepStatus::Converged;
        Ok(status)
    }

    pub fn projected_grad_norm(&self) -> f64 {
        self.descent.pg_norm
    }

    pub fn state(&self) -> TrainState {
        let last = self.descent.last.as_ref();
        TrainState {
            beliefs: self
                .descent
                .q
                .iter()
                .zip(self.objective.problems)
                .map(|(b, p)| AdversaryBelief::clamped(split_block(b, p.len()).0))
                .collect(),
            multipliers: self
                .descent
                .q
                .iter()
                .zip(self.objective.problems)
                .map(|(b, p)| split_block(b, p.len()).1)
                .collect(),
            theta: last
                .and_then(|e| e.theta.clone())
                .unwrap_or_else(|| DVector::zeros(self.objective.problems[0].num_features())),
            p_star: last
                .map(|e| e.projections.iter().map(|p| p.matrix.clone()).collect())
                .unwrap_or_default(),
            objective_trace: self.descent.trace.clone(),
            iteration: self.descent.iterations,
        }
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        let hp = self.objective.hp;
        self.converged = self.descent.run(&mut self.objective, &hp.outer)?;
        if !self.converged {
            log::warn!(
                "training stopped after {} iterations with projected gradient {:.3e}",
                self.descent.iterations,
                self.descent.pg_norm
            );
        }
        let state = self.state();
        let max_marginal_violation = state
            .p_star
            .iter()
            .map(|p| p.marginal_violation())
            .fold(0.0, f64::max);
        Ok(TrainOutcome {
            params: ModelParams {
                theta: state.theta.clone(),
                lambda: hp.lambda,
                gamma: hp.gamma,
                mu: hp.mu,
                admm: hp.admm,
                outer: hp.outer,
            },
            diagnostics: TrainDiagnostics {
                iterations: self.descent.iterations,
                converged: self.converged,
                projected_grad_norm: self.descent.pg_norm,
                objective_trace: self.descent.trace.clone(),
                max_marginal_violation,
            },
            state,
        })
    }
}

/// Trains on `problems` until the projected-gradient norm falls below
/// `hp.outer.tol` or `hp.outer.max_iter` iterations pass.
pub fn train(problems: &[RankingProblem], hp: Hyperparams) -> Result<TrainOutcome> {
    Trainer::new(problems, hp)?.run()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvScore {
    pub gamma: f64,
    pub mu: f64,
    pub mean_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub gamma: f64,
    pub mu: f64,
    pub scores: Vec<CvScore>,
}

/// Query-level fold assignment: a seeded shuffle cut into `folds` contiguous
/// chunks whose sizes differ by at most one (larger chunks first).
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::invalid(format!("{n} queries cannot fill {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let size = base + usize::from(k < extra);
        out.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

/// Picks `(γ, μ)` maximizing mean held-out NDCG over query-level folds.
/// Ties go to the smaller `γ`, then the smaller `μ`.
pub fn cross_validate(
    problems: &[RankingProblem],
    gamma_grid: &[f64],
    mu_grid: &[f64],
    folds: usize,
    base: Hyperparams,
    seed: u64,
) -> Result<CvOutcome> {
    if gamma_grid.is_empty() || mu_grid.is_empty() {
        return Err(Error::invalid("cross-validation grids must be non-empty"));
    }
    let split = fold_indices(problems.len(), folds, seed)?;
    let mut gammas = gamma_grid.to_vec();
    let mut mus = mu_grid.to_vec();
    gammas.sort_by(f64::total_cmp);
    mus.sort_by(f64::total_cmp);

    let mut scores = Vec::new();
    let mut best: Option<CvScore> = None;
    for &gamma in &gammas {
        for &mu in &mus {
            let hp = Hyperparams { gamma, mu, ..base };
            let mut fold_means = Vec::with_capacity(folds);
            for held_out in &split {
                let mut is_held = vec![false; problems.len()];
                for &i in held_out {
                    is_held[i] = true;
                }
                let train_set: Vec<RankingProblem> = problems
                    .iter()
                    .zip(&is_held)
                    .filter(|(_, &h)| !h)
                    .map(|(p, _)| p.clone())
                    .collect();
                let model = train(&train_set, hp)?.params;
                let test: Vec<&RankingProblem> = held_out.iter().map(|&i| &problems[i]).collect();
                let unlabeled: Vec<_> = test.iter().map(|p| p.unlabeled()).collect();
                let results = infer_batch(&unlabeled, &model)?;
                let mut sum = 0.0;
                for (p, r) in test.iter().zip(&results) {
                    sum += ndcg(&p.relevance, &r.ranking)?;
                }
                fold_means.push(sum / test.len() as f64);
            }
            let score = CvScore {
                gamma,
                mu,
                mean_ndcg: fold_means.iter().sum::<f64>() / folds as f64,
            };
            log::debug!("cv gamma={gamma} mu={mu} ndcg={:.4}", score.mean_ndcg);
            if best.as_ref().map_or(true, |b| score.mean_ndcg > b.mean_ndcg) {
                best = Some(score.clone());
            }
            scores.push(score);
        }
    }
    let best = best.expect("grids are non-empty");
    Ok(CvOutcome {
        gamma: best.gamma,
        mu: best.mu,
        scores,
    })
}

/// Features `M x L` helper for tests and examples.
#[doc(hidden)]
pub fn problem_from_rows(
    id: &str,
    rows: &[&[f64]],
    relevance: &[bool],
    groups: &[crate::types::GroupId],
) -> Result<RankingProblem> {
    let l = rows.first().map_or(0, |r| r.len());
    let x = DMatrix::from_fn(rows.len(), l, |i, j| rows[i][j]);
    RankingProblem::new(id, x, relevance.to_vec(), groups.to_vec())
}
