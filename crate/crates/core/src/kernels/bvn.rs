use nalgebra::DMatrix;
use rand::Rng;

use super::hungarian::hungarian_max;
use crate::error::{Error, Result};
use crate::types::{DoublyStochasticMatrix, Permutation, DS_ENTRY_TOL, DS_SUM_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct BvnTerm {
    pub weight: f64,
    pub permutation: Permutation,
}

/// A doubly-stochastic matrix written as a convex combination of
/// permutation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BvnDecomposition {
    pub terms: Vec<BvnTerm>,
}

impl BvnDecomposition {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|t| t.weight).sum()
    }

    /// `Σ_i w_i · Perm_i`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let m = self.terms.first().map_or(0, |t| t.permutation.len());
        let mut out = DMatrix::zeros(m, m);
        for t in &self.terms {
            for (j, &k) in t.permutation.positions().iter().enumerate() {
                out[(j, k)] += t.weight;
            }
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Permutation> {
        sample_bvn(self, rng)
    }
}

/// Greedy Birkhoff decomposition. Each step finds a permutation supported on
/// the positive entries of the residual, removes it with weight equal to the
/// smallest entry it covers and stops once the residual mass drops below
/// `tol`. Weights are renormalized to sum to one.
pub fn bvn_decompose(p: &DoublyStochasticMatrix, tol: f64) -> Result<BvnDecomposition> {
    let m = p.dim();
    if p.marginal_violation() > DS_SUM_TOL || p.min_entry() < -DS_ENTRY_TOL {
        return Err(Error::invalid("BvN decomposition needs a doubly-stochastic input"));
    }
    if m == 0 {
        return Err(Error::invalid("BvN decomposition of an empty matrix"));
    }
    let tol = tol.max(f64::EPSILON);

    let mut residual = p.as_matrix().map(|x| x.max(0.0));
    let mut terms = Vec::new();
    let max_terms = m * m;
    while residual.sum() / m as f64 > tol && terms.len() < max_terms {
        let support = residual.map(|x| if x > tol { 1.0 } else { 0.0 });
        let perm = hungarian_max(&support)?;
        let covered = (0..m).all(|j| support[(j, perm.position(j))] > 0.0);
        if !covered {
            break;
        }
        let (arg, weight) = (0..m)
            .map(|j| (j, residual[(j, perm.position(j))]))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        for j in 0..m {
            residual[(j, perm.position(j))] -= weight;
        }
        residual[(arg, perm.position(arg))] = 0.0;
        terms.push(BvnTerm {
            weight,
            permutation: perm,
        });
    }
    if terms.is_empty() {
        return Err(Error::invalid("no permutation found on the support"));
    }
    let total: f64 = terms.iter().map(|t| t.weight).sum();
    for t in &mut terms {
        t.weight /= total;
    }
    Ok(BvnDecomposition { terms })
}

/// Draws a permutation with probability equal to its weight.
pub fn sample_bvn<R: Rng + ?Sized>(decomp: &BvnDecomposition, rng: &mut R) -> Result<Permutation> {
    let last = decomp
        .terms
        .last()
        .ok_or_else(|| Error::invalid("cannot sample from an empty decomposition"))?;
    let total = decomp.total_weight();
    let mut u = rng.gen::<f64>() * total;
    for t in &decomp.terms {
        if u < t.weight {
            return Ok(t.permutation.clone());
        }
        u -= t.weight;
    }
    Ok(last.permutation.clone())
}
