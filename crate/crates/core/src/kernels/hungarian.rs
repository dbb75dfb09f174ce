//! Maximum-score linear assignment.
//!
//! The O(n³) shortest-augmenting-path Hungarian method runs on `−score` and
//! yields optimal dual potentials. Every optimal assignment is a perfect
//! matching in the graph of edges with zero reduced cost, so ties are resolved
//! by picking the lexicographically smallest perfect matching of that graph.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::Permutation;

/// The permutation `π` maximizing `Σ_j score[j, π_j]`. Among optimal
/// assignments the one with the lexicographically smallest position vector
/// is returned, so all-equal scores give the identity.
pub fn hungarian_max(score: &DMatrix<f64>) -> Result<Permutation> {
    if !score.is_square() {
        return Err(Error::invalid(format!(
            "assignment needs a square score matrix, got {}x{}",
            score.nrows(),
            score.ncols()
        )));
    }
    if score.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("assignment scores"));
    }
    let n = score.nrows();
    if n == 0 {
        return Ok(Permutation::identity(0));
    }

    let (u, v) = dual_potentials(score);
    let scale = score.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    let eps = 1e-9 * scale;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| -score[(i, j)] - u[i] - v[j] <= eps).collect())
        .collect();

    let positions = lexicographic_matching(&tight)
        .ok_or_else(|| Error::invalid("no perfect matching on the tight graph"))?;
    Permutation::from_positions(positions)
}

/// Optimal row/column potentials for minimizing `−score`.
fn dual_potentials(score: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = score.nrows();
    let cost = |i: usize, j: usize| -score[(i, j)];
    // 1-based with a sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (u[1..].to_vec(), v[1..].to_vec())
}

/// Greedily fixes row `i` to its smallest admissible column such that the
/// remaining rows can still be perfectly matched.
fn lexicographic_matching(adj: &[Vec<bool>]) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut fixed = vec![usize::MAX; n];
    let mut col_taken = vec![false; n];
    for i in 0..n {
        let mut chosen = None;
        for j in 0..n {
            if !adj[i][j] || col_taken[j] {
                continue;
            }
            col_taken[j] = true;
            if has_perfect_matching(adj, i + 1, &col_taken) {
                chosen = Some(j);
                break;
            }
            col_taken[j] = false;
        }
        fixed[i] = chosen?;
    }
    Some(fixed)
}

/// Whether rows `from..n` can be matched into the untaken columns (Kuhn).
fn has_perfect_matching(adj: &[Vec<bool>], from: usize, col_taken: &[bool]) -> bool {
    let n = adj.len();
    let mut match_col: Vec<Option<usize>> = vec![None; n];

    fn augment(
        row: usize,
        adj: &[Vec<bool>],
        col_taken: &[bool],
        seen: &mut [bool],
        match_col: &mut [Option<usize>],
    ) -> bool {
        for j in 0..adj.len() {
            if !adj[row][j] || col_taken[j] || seen[j] {
                continue;
            }
            seen[j] = true;
            let free = match match_col[j] {
                None => true,
                Some(other) => augment(other, adj, col_taken, seen, match_col),
            };
            if free {
                match_col[j] = Some(row);
                return true;
            }
        }
        false
    }

    (from..n).all(|row| {
        let mut seen = vec![false; n];
        augment(row, adj, col_taken, &mut seen, &mut match_col)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total(score: &DMatrix<f64>, p: &Permutation) -> f64 {
        (0..p.len()).map(|j| score[(j, p.position(j))]).sum()
    }

    /// Best total over all permutations, first in lexicographic order on ties.
    fn brute_force(score: &DMatrix<f64>) -> (f64, Vec<usize>) {
        let n = score.nrows();
        let mut best = (f64::NEG_INFINITY, Vec::new());
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            let val: f64 = (0..n).map(|j| score[(j, perm[j])]).sum();
            if val > best.0 + 1e-12 {
                best = (val, perm.clone());
            }
            // next lexicographic permutation
            let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else {
                break;
            };
            let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
            perm.swap(i, j);
            perm[i + 1..].reverse();
        }
        best
    }

    #[test]
    fn diagonal_dominance() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_eq!(hungarian_max(&s).unwrap(), Permutation::identity(2));
    }

    #[test]
    fn all_equal_scores_give_identity() {
        for n in 1..8 {
            let s = DMatrix::from_element(n, n, 0.3);
            assert_eq!(hungarian_max(&s).unwrap(), Permutation::identity(n));
        }
    }

    #[test]
    fn partial_ties_resolve_lexicographically() {
        // items 0 and 1 are interchangeable; item 2 must take position 0
        let s = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 5.0, 0.0, 0.0]);
        assert_eq!(hungarian_max(&s).unwrap().positions(), &[1, 2, 0]);
    }

    #[test]
    fn rejects_non_square() {
        assert!(hungarian_max(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn random_five_by_five_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = DMatrix::from_fn(5, 5, |_, _| rng.gen::<f64>());
            let p = hungarian_max(&s).unwrap();
            let (best, perm) = brute_force(&s);
            assert!((total(&s, &p) - best).abs() < 1e-12);
            assert_eq!(p.positions(), perm.as_slice());
        }
    }

    #[test]
    fn integer_scores_with_ties_match_lexicographic_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=6 {
            for _ in 0..20 {
                let s = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0..3) as f64);
                let (_, perm) = brute_force(&s);
                assert_eq!(hungarian_max(&s).unwrap().positions(), perm.as_slice());
            }
        }
    }
}
