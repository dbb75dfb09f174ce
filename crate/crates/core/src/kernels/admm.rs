//! Euclidean projection onto the Birkhoff polytope by ADMM.
//!
//! The doubly-stochastic set is split into `C1` (rows on the simplex) and
//! `C2` (columns on the simplex), giving
//!
//! ```text
//! min_{P, S}  ½‖P − R‖² + ½‖S − R‖² + I_C1(P) + I_C2(S)   s.t.  P = S
//! ```
//!
//! with scaled dual `W`. Each iteration performs
//!
//! ```text
//! P ← Proj_C1((R + ρ(S − W)) / (1 + ρ))
//! S ← Proj_C2((R + ρ(S + W)) / (1 + ρ))
//! W ← W + P − S
//! ```
//!
//! Both projections decompose into independent simplex projections. The
//! iteration stops on the primal residual `‖P − S‖` and dual residual
//! `ρ‖S⁺ − S‖` and returns `(P + S) / 2`.

use nalgebra::DMatrix;

use super::simplex::project_simplex_strided;
use crate::error::{Error, Result};
use crate::types::{marginal_violation, DoublyStochasticMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    /// Penalty parameter.
    pub rho: f64,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    /// Required largest row/column sum deviation of the returned matrix.
    pub feasibility_tol: f64,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol_abs: 1e-6,
            tol_rel: 1e-4,
            max_iter: 5000,
            feasibility_tol: 1e-7,
        }
    }
}

impl AdmmOptions {
    /// Tight settings for oracle comparisons and finite differences.
    pub fn precise() -> Self {
        Self {
            tol_abs: 1e-13,
            tol_rel: 1e-13,
            max_iter: 200_000,
            feasibility_tol: 1e-12,
            ..Self::default()
        }
    }
}

/// Result of one projection.
#[derive(Debug, Clone)]
pub struct Projection {
    pub matrix: DoublyStochasticMatrix,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Splitting variable and scaled dual of the ADMM iteration. Keeping a state
/// per query warm-starts successive projections of nearby matrices.
#[derive(Debug, Clone)]
pub struct AdmmState {
    m: usize,
    s: Vec<f64>,
    w: Vec<f64>,
    p: Vec<f64>,
    s_next: Vec<f64>,
    r: Vec<f64>,
    scratch: Vec<f64>,
    /// Iterations run over the lifetime of this state.
    pub iteration: usize,
    warm: bool,
}

impl AdmmState {
    pub fn new(m: usize) -> Self {
        let n = m * m;
        Self {
            m,
            s: vec![1.0 / m as f64; n],
            w: vec![0.0; n],
            p: vec![0.0; n],
            s_next: vec![0.0; n],
            r: vec![0.0; n],
            scratch: Vec::with_capacity(m),
            iteration: 0,
            warm: false,
        }
    }

    /// Back to the cold-start point. The lifetime iteration count is kept.
    pub fn reset(&mut self) {
        let iteration = self.iteration;
        *self = Self::new(self.m);
        self.iteration = iteration;
    }

    /// Projects `r` onto the doubly-stochastic matrices, starting from the
    /// current splitting variable and dual. A warm start that fails to
    /// converge is retried once from the cold-start point.
    pub fn project(&mut self, r: &DMatrix<f64>, opts: &AdmmOptions) -> Result<Projection> {
        let was_warm = self.warm;
        match self.project_from_current(r, opts) {
            Err(Error::NotConverged { .. }) if was_warm => {
                self.reset();
                self.project_from_current(r, opts)
            }
            other => other,
        }
    }

    fn project_from_current(&mut self, r: &DMatrix<f64>, opts: &AdmmOptions) -> Result<Projection> {
        if !r.is_square() || r.nrows() == 0 {
            return Err(Error::invalid(format!(
                "projection target must be a non-empty square matrix, got {}x{}",
                r.nrows(),
                r.ncols()
            )));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection target"));
        }
        if !(opts.rho > 0.0) {
            return Err(Error::invalid(format!("ADMM penalty must be > 0, got {}", opts.rho)));
        }
        let m = r.nrows();
        if m != self.m {
            *self = Self::new(m);
        }
        for i in 0..m {
            for j in 0..m {
                self.r[i * m + j] = r[(i, j)];
            }
        }

        let rho = opts.rho;
        let scale = 1.0 / (1.0 + rho);
        let eps_abs = m as f64 * opts.tol_abs;
        let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);

        for it in 1..=opts.max_iter {
            for (idx, p) in self.p.iter_mut().enumerate() {
                *p = scale * (self.r[idx] + rho * (self.s[idx] - self.w[idx]));
            }
            for row in 0..m {
                project_simplex_strided(&mut self.p, row * m, 1, m, &mut self.scratch);
            }
            for (idx, s) in self.s_next.iter_mut().enumerate() {
                *s = scale * (self.r[idx] + rho * (self.s[idx] + self.w[idx]));
            }
            for col in 0..m {
                project_simplex_strided(&mut self.s_next, col, m, m, &mut self.scratch);
            }

            let (mut pr2, mut du2, mut p2, mut s2, mut w2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for idx in 0..m * m {
                let (p, sn) = (self.p[idx], self.s_next[idx]);
                self.w[idx] += p - sn;
                pr2 += (p - sn) * (p - sn);
                du2 += (sn - self.s[idx]) * (sn - self.s[idx]);
                p2 += p * p;
                s2 += sn * sn;
                w2 += self.w[idx] * self.w[idx];
            }
            std::mem::swap(&mut self.s, &mut self.s_next);
            self.iteration += 1;
            self.warm = true;

            primal = pr2.sqrt();
            dual = rho * du2.sqrt();
            let eps_pri = eps_abs + opts.tol_rel * p2.sqrt().max(s2.sqrt());
            let eps_dual = eps_abs + opts.tol_rel * rho * w2.sqrt();
            if primal <= eps_pri && dual <= eps_dual {
                let out = DMatrix::from_fn(m, m, |i, j| {
                    (0.5 * (self.p[i * m + j] + self.s[i * m + j])).max(0.0)
                });
                if marginal_violation(&out) <= opts.feasibility_tol {
                    return Ok(Projection {
                        matrix: DoublyStochasticMatrix::new_unchecked(out),
                        iterations: it,
                        primal_residual: primal,
                        dual_residual: dual,
                    });
                }
            }
        }
        Err(Error::NotConverged {
            iterations: opts.max_iter,
            primal,
            dual,
        })
    }
}

/// `argmin_{P doubly stochastic} ‖P − R‖_F` from a cold start.
pub fn ds_project(r: &DMatrix<f64>, opts: &AdmmOptions) -> Result<Projection> {
    AdmmState::new(r.nrows()).project(r, opts)
}
