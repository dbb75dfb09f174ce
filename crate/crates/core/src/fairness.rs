//! Group exposure and the signed fairness vector `f` whose product
//! `fᵀ P v` enters the ranker's objective with weight `λ`.

use nalgebra::DVector;

use crate::error::{ensure_len, Error, Result};
use crate::metrics::{two_groups, ItemExposure};
use crate::types::{AdversaryBelief, GroupId, PositionBias};

/// Average exposure of the items in `group` (indices into the ranking).
pub fn exposure<R: ItemExposure + ?Sized>(
    ranking: &R,
    bias: &PositionBias,
    group: &[usize],
) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::invalid("exposure of an empty group"));
    }
    let per_item = ranking.item_exposure(bias)?;
    let mut sum = 0.0;
    for &j in group {
        sum += per_item
            .get(j)
            .ok_or_else(|| Error::invalid(format!("item {j} out of range")))?;
    }
    Ok(sum / group.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessVector {
    pub f: DVector<f64>,
    /// Mean position bias, the common exposure every group has under parity.
    pub target_tau: f64,
    /// `a_j`, summing to the group size within each group.
    pub group_weights: DVector<f64>,
    /// The group receiving the positive sign, if the vector is active.
    pub disadvantaged: Option<GroupId>,
}

impl FairnessVector {
    /// False when the query has a single group and exerts no fairness force.
    pub fn is_active(&self) -> bool {
        self.disadvantaged.is_some()
    }

    pub fn inactive(m: usize) -> Self {
        Self {
            f: DVector::zeros(m),
            target_tau: PositionBias::new(m).mean(),
            group_weights: DVector::zeros(m),
            disadvantaged: None,
        }
    }
}

/// Builds `f` from the current adversary belief.
///
/// Within group `G_s` the weights are `a_j = |G_s| q_j / Σ_{i∈G_s} q_i`
/// (uniform when the group has no mass), and `f_j = ±a_j / |G_s|`. The `+`
/// sign goes to the group with the lower mean belief; on a tie, to the
/// smaller label.
pub fn build_fairness_vector(q: &AdversaryBelief, groups: &[GroupId]) -> Result<FairnessVector> {
    let m = q.len();
    ensure_len("groups", m, groups.len())?;
    let Some((g0, g1)) = two_groups(groups)? else {
        return Ok(FairnessVector::inactive(m));
    };
    let q = q.values();

    let stats = |g: GroupId| {
        let (mass, n) = q
            .iter()
            .zip(groups)
            .filter(|(_, &s)| s == g)
            .fold((0.0, 0usize), |(mass, n), (x, _)| (mass + x, n + 1));
        (mass, n)
    };
    let (mass0, n0) = stats(g0);
    let (mass1, n1) = stats(g1);
    let (mean0, mean1) = (mass0 / n0 as f64, mass1 / n1 as f64);
    let disadvantaged = if mean1 < mean0 { g1 } else { g0 };

    let mut a = DVector::zeros(m);
    let mut f = DVector::zeros(m);
    for j in 0..m {
        let (mass, n) = if groups[j] == g0 { (mass0, n0) } else { (mass1, n1) };
        a[j] = if mass > 0.0 { n as f64 * q[j] / mass } else { 1.0 };
        let sign = if groups[j] == disadvantaged { 1.0 } else { -1.0 };
        f[j] = sign * a[j] / n as f64;
    }
    Ok(FairnessVector {
        f,
        target_tau: PositionBias::new(m).mean(),
        group_weights: a,
        disadvantaged: Some(disadvantaged),
    })
}
