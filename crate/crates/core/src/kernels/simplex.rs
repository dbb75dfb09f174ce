use crate::error::{Error, Result};

/// Euclidean projection of `x` onto the probability simplex
/// `{p : p >= 0, sum(p) = 1}` by the sort-and-threshold method.
pub fn simplex_project(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("cannot project an empty vector onto the simplex"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simplex projection input"));
    }
    let mut out = x.to_vec();
    let mut scratch = Vec::with_capacity(x.len());
    project_simplex_strided(&mut out, 0, 1, x.len(), &mut scratch);
    Ok(out)
}

/// In-place projection of the `len` elements `data[start + i * stride]`.
/// `scratch` is reused across calls to avoid allocation in the ADMM loop.
pub(crate) fn project_simplex_strided(
    data: &mut [f64],
    start: usize,
    stride: usize,
    len: usize,
    scratch: &mut Vec<f64>,
) {
    scratch.clear();
    scratch.extend((0..len).map(|i| data[start + i * stride]));
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        // u_i - t > 0 holds for a prefix of the sorted sequence
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    for i in 0..len {
        let x = &mut data[start + i * stride];
        *x = (*x - tau).max(0.0);
    }
}
