//! Projected gradient descent over a block of adversary beliefs, each
//! confined to `[0, 1]^M`, with Barzilai-Borwein trial steps and Armijo
//! backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::Projection;
use crate::types::OuterOptions;

/// Objective value, per-block gradients and the inner solutions they came from.
#[derive(Debug, Clone)]
pub(crate) struct BlockEval {
    pub total: f64,
    pub grads: Vec<DVector<f64>>,
    pub projections: Vec<Projection>,
    pub theta: Option<DVector<f64>>,
}

pub(crate) trait BeliefObjective {
    /// Called at the start of each outer iteration. Returns whether the
    /// objective changed (for example because `f` was rebuilt from `q`).
    fn refresh(&mut self, q: &[DVector<f64>]) -> Result<bool>;

    fn evaluate(&mut self, q: &[DVector<f64>]) -> Result<BlockEval>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Converged,
    Progress,
    /// No step length passed the Armijo test.
    Stalled,
}

#[derive(Debug, Clone)]
pub(crate) struct Descent {
    pub q: Vec<DVector<f64>>,
    /// Evaluation at the current `q`.
    pub last: Option<BlockEval>,
    pub iterations: usize,
    pub pg_norm: f64,
    pub trace: Vec<f64>,
    prev: Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)>,
    step: f64,
}

fn clamp_unit(x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| v.clamp(0.0, 1.0))
}

impl Descent {
    pub fn new(q: Vec<DVector<f64>>) -> Self {
        Self {
            q,
            last: None,
            iterations: 0,
            pg_norm: f64::INFINITY,
            trace: Vec::new(),
            prev: None,
            step: 1.0,
        }
    }

    pub fn step<O: BeliefObjective>(&mut self, obj: &mut O, opts: &OuterOptions) -> Result<StepStatus> {
        let changed = obj.refresh(&self.q)?;
        let cur = match self.last.take() {
            Some(eval) if !changed => eval,
            _ => obj.evaluate(&self.q)?,
        };
        if cur.total.is_nan() {
            return Err(Error::NanObjective(self.iterations));
        }

        self.pg_norm = self
            .q
            .iter()
            .zip(&cur.grads)
            .map(|(q, g)| (q - clamp_unit(&(q - g))).amax())
            .fold(0.0, f64::max);
        if self.pg_norm < opts.tol {
            self.last = Some(cur);
            return Ok(StepStatus::Converged);
        }

        if let Some((q_prev, g_prev)) = &self.prev {
            let (mut ss, mut sy) = (0.0, 0.0);
            for i in 0..self.q.len() {
                let s = &self.q[i] - &q_prev[i];
                let y = &cur.grads[i] - &g_prev[i];
                ss += s.dot(&s);
                sy += s.dot(&y);
            }
            self.step = if sy > 0.0 { ss / sy } else { opts.max_step };
        }
        let mut alpha = self.step.clamp(opts.min_step, opts.max_step);

        for _ in 0..=opts.max_backtracks {
            let trial_q: Vec<DVector<f64>> = self
                .q
                .iter()
                .zip(&cur.grads)
                .map(|(q, g)| clamp_unit(&(q - g * alpha)))
                .collect();
            let decrease: f64 = trial_q
                .iter()
                .zip(&self.q)
                .zip(&cur.grads)
                .map(|((t, q), g)| g.dot(&(t - q)))
                .sum();
            let trial = obj.evaluate(&trial_q)?;
            if trial.total.is_nan() {
                return Err(Error::NanObjective(self.iterations));
            }
            if trial.total <= cur.total + opts.armijo * decrease {
                let old_q = std::mem::replace(&mut self.q, trial_q);
                self.prev = Some((old_q, cur.grads));
                self.trace.push(trial.total);
                self.last = Some(trial);
                self.iterations += 1;
                return Ok(StepStatus::Progress);
            }
            alpha *= opts.backtrack;
            if alpha < opts.min_step {
                break;
            }
        }
        self.last = Some(cur);
        Ok(StepStatus::Stalled)
    }

    /// Steps until convergence, a stall or `opts.max_iter` iterations.
    /// Returns whether the projected-gradient tolerance was met.
    pub fn run<O: BeliefObjective>(&mut self, obj: &mut O, opts: &OuterOptions) -> Result<bool> {
        while self.iterations < opts.max_iter {
            match self.step(obj, opts)? {
                StepStatus::Converged => return Ok(true),
                StepStatus::Stalled => return Ok(false),
                StepStatus::Progress => {}
            }
        }
        // final check at the last iterate
        let changed = obj.refresh(&self.q)?;
        if changed || self.last.is_none() {
            self.last = Some(obj.evaluate(&self.q)?);
        }
        let last = self.last.as_ref().expect("evaluated above");
        self.pg_norm = self
            .q
            .iter()
            .zip(&last.grads)
            .map(|(q, g)| (q - clamp_unit(&(q - g))).amax())
            .fold(0.0, f64::max);
        Ok(self.pg_norm < opts.tol)
    }
}

/// `(q + λ f) vᵀ / μ`, the matrix whose projection is the ranker's best response.
pub(crate) fn projection_target(
    q: &DVector<f64>,
    f: &DVector<f64>,
    v: &DVector<f64>,
    lambda: f64,
    mu: f64,
) -> DMatrix<f64> {
    let a = q + f * lambda;
    (a * v.transpose()) / mu
}
