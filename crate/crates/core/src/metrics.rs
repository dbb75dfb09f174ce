//! Ranking utility and evaluation metrics: DCG, NDCG, expected utility and
//! the demographic-parity exposure disparity.

use crate::error::{ensure_len, Error, Result};
use crate::types::{AdversaryBelief, DoublyStochasticMatrix, GroupId, Permutation, PositionBias};

/// Anything that assigns each item an expected exposure under a position bias.
pub trait ItemExposure {
    fn num_items(&self) -> usize;

    /// `sum_k P[j, k] * v_k` for every item `j`.
    fn item_exposure(&self, bias: &PositionBias) -> Result<Vec<f64>>;
}

impl ItemExposure for Permutation {
    fn num_items(&self) -> usize {
        self.len()
    }

    fn item_exposure(&self, bias: &PositionBias) -> Result<Vec<f64>> {
        ensure_len("position bias", self.len(), bias.len())?;
        Ok(self.positions().iter().map(|&k| bias.values()[k]).collect())
    }
}

impl ItemExposure for DoublyStochasticMatrix {
    fn num_items(&self) -> usize {
        self.dim()
    }

    fn item_exposure(&self, bias: &PositionBias) -> Result<Vec<f64>> {
        ensure_len("position bias", self.dim(), bias.len())?;
        Ok((self.as_matrix() * bias.values()).iter().copied().collect())
    }
}

/// Discounted cumulative gain of a ranking under binary relevance.
pub fn dcg(relevance: &[bool], ranking: &Permutation) -> Result<f64> {
    ensure_len("ranking", relevance.len(), ranking.len())?;
    Ok(relevance
        .iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(j, _)| 1.0 / ((1 + ranking.rank(j)) as f64).log2())
        .sum())
}

/// DCG of the ideal ranking that puts `n_relevant` items on top.
fn ideal_dcg(n_relevant: usize) -> f64 {
    (1..=n_relevant).map(|k| 1.0 / ((1 + k) as f64).log2()).sum()
}

/// DCG normalized by the ideal DCG. A query with no relevant item scores 0.
pub fn ndcg(relevance: &[bool], ranking: &Permutation) -> Result<f64> {
    let gain = dcg(relevance, ranking)?;
    let z = ideal_dcg(relevance.iter().filter(|&&r| r).count());
    if z == 0.0 {
        return Ok(0.0);
    }
    Ok(gain / z)
}

/// `q^T P v`.
pub fn expected_utility(
    p: &DoublyStochasticMatrix,
    q: &AdversaryBelief,
    bias: &PositionBias,
) -> Result<f64> {
    ensure_len("belief", p.dim(), q.len())?;
    let exposure = p.item_exposure(bias)?;
    Ok(q.values().iter().zip(&exposure).map(|(a, b)| a * b).sum())
}

/// `|Exposure(G_0) - Exposure(G_1)|`, or `None` when fewer than two groups
/// appear among the items (disparity is undefined for that query).
pub fn dp_violation<R: ItemExposure + ?Sized>(
    ranking: &R,
    groups: &[GroupId],
    bias: &PositionBias,
) -> Result<Option<f64>> {
    ensure_len("groups", ranking.num_items(), groups.len())?;
    let Some((g0, g1)) = two_groups(groups)? else {
        return Ok(None);
    };
    let exposure = ranking.item_exposure(bias)?;
    let mean_of = |g: GroupId| {
        let (sum, n) = exposure
            .iter()
            .zip(groups)
            .filter(|(_, &s)| s == g)
            .fold((0.0, 0usize), |(s, n), (e, _)| (s + e, n + 1));
        sum / n as f64
    };
    Ok(Some((mean_of(g0) - mean_of(g1)).abs()))
}

/// The two distinct labels present, smallest first. `None` if only one label
/// appears; an error if more than two do.
pub(crate) fn two_groups(groups: &[GroupId]) -> Result<Option<(GroupId, GroupId)>> {
    let mut labels: Vec<GroupId> = groups.to_vec();
    labels.sort_unstable();
    labels.dedup();
    match labels.as_slice() {
        [] | [_] => Ok(None),
        [a, b] => Ok(Some((*a, *b))),
        _ => Err(Error::invalid(format!(
            "exposure disparity supports two groups, found {}",
            labels.len()
        ))),
    }
}
