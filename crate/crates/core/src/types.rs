//! Domain types shared across the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, Error, Result};
use crate::kernels::AdmmOptions;

/// Protected-group label of an item.
pub type GroupId = u32;

/// Feasibility tolerance for row and column sums of a doubly-stochastic matrix.
pub const DS_SUM_TOL: f64 = 1e-6;
/// Entries may dip this far below zero after clipping and still count as feasible.
pub const DS_ENTRY_TOL: f64 = 1e-9;

/// One query: items with features, binary relevance and group membership.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingProblem {
    pub query_id: String,
    /// `M x L` item features.
    pub features: DMatrix<f64>,
    pub relevance: Vec<bool>,
    pub groups: Vec<GroupId>,
}

impl RankingProblem {
    pub fn new(
        query_id: impl Into<String>,
        features: DMatrix<f64>,
        relevance: Vec<bool>,
        groups: Vec<GroupId>,
    ) -> Result<Self> {
        let m = features.nrows();
        if m == 0 {
            return Err(Error::invalid("ranking problem has no items"));
        }
        ensure_len("relevance", m, relevance.len())?;
        ensure_len("groups", m, groups.len())?;
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Self {
            query_id: query_id.into(),
            features,
            relevance,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn relevance_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.relevance.iter().map(|&r| if r { 1.0 } else { 0.0 }),
        )
    }

    pub fn num_relevant(&self) -> usize {
        self.relevance.iter().filter(|&&r| r).count()
    }

    /// The same query with the relevance labels stripped.
    pub fn unlabeled(&self) -> UnlabeledProblem {
        UnlabeledProblem {
            query_id: self.query_id.clone(),
            features: self.features.clone(),
            groups: self.groups.clone(),
        }
    }
}

/// A query as seen at inference time. There is no relevance field, so the
/// inference path cannot read ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledProblem {
    pub query_id: String,
    pub features: DMatrix<f64>,
    pub groups: Vec<GroupId>,
}

impl UnlabeledProblem {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Position bias `v_k = 1 / log2(1 + k)` for ranks `k = 1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionBias(DVector<f64>);

impl PositionBias {
    pub fn new(m: usize) -> Self {
        Self(DVector::from_iterator(
            m,
            (1..=m).map(|k| 1.0 / ((1 + k) as f64).log2()),
        ))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    /// Average exposure over all positions, the parity target `tau`.
    pub fn mean(&self) -> f64 {
        self.0.mean()
    }
}

/// A ranking stored as the 0-based position of each item.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(m: usize) -> Self {
        Self((0..m).collect())
    }

    /// Builds a permutation from 0-based positions, `positions[j]` being the
    /// slot of item `j`.
    pub fn from_positions(positions: Vec<usize>) -> Result<Self> {
        let m = positions.len();
        let mut seen = vec![false; m];
        for &p in &positions {
            if p >= m || seen[p] {
                return Err(Error::invalid(format!(
                    "positions {positions:?} are not a bijection on 0..{m}"
                )));
            }
            seen[p] = true;
        }
        Ok(Self(positions))
    }

    /// Builds a permutation from 1-based ranks, `ranks[j]` being the rank of item `j`.
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.iter().any(|&r| r == 0) {
            return Err(Error::invalid("ranks are 1-based"));
        }
        Self::from_positions(ranks.iter().map(|r| r - 1).collect())
    }

    /// Builds the permutation that places `order[0]` first, `order[1]` second, ...
    pub fn from_order(order: &[usize]) -> Result<Self> {
        let m = order.len();
        let mut positions = vec![usize::MAX; m];
        for (pos, &item) in order.iter().enumerate() {
            if item >= m || positions[item] != usize::MAX {
                return Err(Error::invalid(format!("{order:?} is not an ordering")));
            }
            positions[item] = pos;
        }
        Ok(Self(positions))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 0-based position of item `j`.
    pub fn position(&self, j: usize) -> usize {
        self.0[j]
    }

    /// 1-based rank of item `j`.
    pub fn rank(&self, j: usize) -> usize {
        self.0[j] + 1
    }

    pub fn positions(&self) -> &[usize] {
        &self.0
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.0.iter().map(|p| p + 1).collect()
    }

    /// Items listed from the top position down.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.len()];
        for (item, &pos) in self.0.iter().enumerate() {
            order[pos] = item;
        }
        order
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let m = self.len();
        let mut out = DMatrix::zeros(m, m);
        for (j, &k) in self.0.iter().enumerate() {
            out[(j, k)] = 1.0;
        }
        out
    }
}

/// A probabilistic ranking: entry `(j, k)` is the probability that item `j`
/// lands at position `k`. Rows and columns sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublyStochasticMatrix(DMatrix<f64>);

impl DoublyStochasticMatrix {
    /// Accepts `m` if it is square, entries are `>= -DS_ENTRY_TOL` and all
    /// marginals are within `DS_SUM_TOL` of one.
    pub fn try_new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(format!(
                "doubly-stochastic matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("doubly-stochastic matrix"));
        }
        let viol = marginal_violation(&m);
        let min = m.iter().copied().fold(f64::INFINITY, f64::min);
        if viol > DS_SUM_TOL || min < -DS_ENTRY_TOL {
            return Err(Error::invalid(format!(
                "matrix is not doubly stochastic (marginal violation {viol:.3e}, min entry {min:.3e})"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn identity(m: usize) -> Self {
        Self(DMatrix::identity(m, m))
    }

    pub fn uniform(m: usize) -> Self {
        Self(DMatrix::from_element(m, m, 1.0 / m as f64))
    }

    pub fn from_permutation(p: &Permutation) -> Self {
        Self(p.to_matrix())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Largest absolute deviation of any row or column sum from one.
    pub fn marginal_violation(&self) -> f64 {
        marginal_violation(&self.0)
    }

    pub fn min_entry(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn marginal_violation(m: &DMatrix<f64>) -> f64 {
    let rows = m.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = m.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// The adversary's per-item probability of relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryBelief(DVector<f64>);

impl AdversaryBelief {
    pub fn new(q: DVector<f64>) -> Result<Self> {
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("adversary belief"));
        }
        if q.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::invalid("adversary belief entries must lie in [0, 1]"));
        }
        Ok(Self(q))
    }

    pub fn from_slice(q: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(q))
    }

    /// Uninformative belief `0.5 * 1`.
    pub fn uninformative(m: usize) -> Self {
        Self(DVector::from_element(m, 0.5))
    }

    /// Clamps every entry of `q` into `[0, 1]`.
    pub fn clamped(q: DVector<f64>) -> Self {
        Self(q.map(|x| x.clamp(0.0, 1.0)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// A trained model: dual weights plus the hyperparameters inference reuses.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: DVector<f64>,
    pub lambda: f64,
    pub gamma: f64,
    pub mu: f64,
    pub admm: AdmmOptions,
    pub outer: OuterOptions,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        validate_penalties(self.lambda, self.gamma, self.mu)?;
        if self.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("theta"));
        }
        Ok(())
    }
}

pub(crate) fn validate_penalties(lambda: f64, gamma: f64, mu: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be > 0, got {mu}")));
    }
    Ok(())
}

/// Settings for the projected-gradient descent over adversary beliefs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterOptions {
    pub max_iter: usize,
    /// Stop once the projected-gradient infinity norm falls below this.
    pub tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-4,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            min_step: 1e-8,
            max_step: 1e4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_bias_is_log2_discount() {
        let v = PositionBias::new(4);
        assert_eq!(v.values()[0], 1.0);
        assert!((v.values()[1] - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v.values()[3] - 1.0 / 5f64.log2()).abs() < 1e-15);
        assert!(v.values().as_slice().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn permutation_round_trips_between_ranks_and_order() {
        let p = Permutation::from_ranks(&[2, 3, 1]).unwrap();
        assert_eq!(p.order(), vec![2, 0, 1]);
        assert_eq!(Permutation::from_order(&p.order()).unwrap(), p);
        assert_eq!(p.rank(0), 2);
    }

    #[test]
    fn permutation_rejects_non_bijection() {
        assert!(Permutation::from_ranks(&[1, 1]).is_err());
        assert!(Permutation::from_ranks(&[0, 1]).is_err());
        assert!(Permutation::from_positions(vec![0, 2]).is_err());
    }

    #[test]
    fn ds_matrix_validation() {
        assert!(DoublyStochasticMatrix::try_new(DMatrix::identity(3, 3)).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[0.6, 0.6, 0.4, 0.4]);
        assert!(DoublyStochasticMatrix::try_new(bad).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.1, -0.1, -0.1, 1.1]);
        assert!(DoublyStochasticMatrix::try_new(neg).is_err());
    }

    #[test]
    fn belief_must_be_in_unit_box() {
        assert!(AdversaryBelief::from_slice(&[0.0, 1.0, 0.3]).is_ok());
        assert!(AdversaryBelief::from_slice(&[1.2]).is_err());
        assert!(AdversaryBelief::from_slice(&[f64::NAN]).is_err());
    }

    #[test]
    fn ranking_problem_checks_lengths() {
        let x = DMatrix::zeros(3, 2);
        assert!(RankingProblem::new("q", x.clone(), vec![true, false], vec![0, 1, 0]).is_err());
        assert!(RankingProblem::new("q", x, vec![true, false, false], vec![0, 1, 0]).is_ok());
    }

    #[test]
    fn penalties_validated() {
        assert!(validate_penalties(0.0, 1.0, 1.0).is_ok());
        assert!(validate_penalties(-1.0, 1.0, 1.0).is_err());
        assert!(validate_penalties(0.0, 0.0, 1.0).is_err());
        assert!(validate_penalties(0.0, 1.0, 0.0).is_err());
    }
}
