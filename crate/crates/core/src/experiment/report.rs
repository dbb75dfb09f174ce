use std::collections::BTreeMap;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::Method;
use super::sweep::ResultRow;
use crate::error::{Error, Result};

/// DP below this counts as fair when picking the best-utility row.
pub const DP_THRESHOLD: f64 = 0.1;

/// Mean and 95% half-width `t_{n−1, 0.975} s / √n` with the sample standard
/// deviation `s`.
pub fn aggregate_ci(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!("a confidence interval needs at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::invalid(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((mean, t * var.sqrt() / (n as f64).sqrt()))
}

/// Mean with its CI half-width; the half-width is absent below two values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub halfwidth: Option<f64>,
}

impl Estimate {
    fn of(values: &[f64]) -> Self {
        match aggregate_ci(values) {
            Ok((mean, hw)) => Self {
                mean,
                halfwidth: Some(hw),
            },
            Err(_) => Self {
                mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
                halfwidth: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub lambda: f64,
    pub repeats: usize,
    pub ndcg: Estimate,
    pub dp: Estimate,
    pub dp_expected: Estimate,
}

/// One summary row per `(method, λ)` cell, in method then λ order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(Method, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        // λ ≥ 0, so the bit pattern orders like the value
        cells.entry((r.method, r.lambda.to_bits())).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((method, bits), rs)| {
            let col = |f: fn(&ResultRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            SummaryRow {
                method,
                lambda: f64::from_bits(bits),
                repeats: rs.len(),
                ndcg: Estimate::of(&col(|r| r.ndcg)),
                dp: Estimate::of(&col(|r| r.dp)),
                dp_expected: Estimate::of(&col(|r| r.dp_expected)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairestPoint {
    pub method: Method,
    /// The λ with the smallest mean DP.
    pub fairest: SummaryRow,
    /// Highest mean NDCG among the rows with mean DP under [`DP_THRESHOLD`].
    pub best_under_threshold: Option<SummaryRow>,
}

/// Per method, the λ minimizing mean DP (ties to the smaller λ).
pub fn fairest_point(summary: &[SummaryRow]) -> Result<Vec<FairestPoint>> {
    if summary.is_empty() {
        return Err(Error::invalid("no results to report"));
    }
    let mut by_method: BTreeMap<Method, Vec<&SummaryRow>> = BTreeMap::new();
    for s in summary {
        by_method.entry(s.method).or_default().push(s);
    }
    Ok(by_method
        .into_iter()
        .map(|(method, rows)| {
            let fairest = rows
                .iter()
                .copied()
                .reduce(|a, b| if b.dp.mean < a.dp.mean { b } else { a })
                .expect("non-empty group")
                .clone();
            let best_under_threshold = rows
                .iter()
                .copied()
                .filter(|r| r.dp.mean < DP_THRESHOLD)
                .reduce(|a, b| if b.ndcg.mean > a.ndcg.mean { b } else { a })
                .cloned();
            FairestPoint {
                method,
                fairest,
                best_under_threshold,
            }
        })
        .collect())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn write_summary(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "lambda",
        "repeats",
        "ndcg_mean",
        "ndcg_ci",
        "dp_mean",
        "dp_ci",
        "dp_expected_mean",
        "dp_expected_ci",
    ])?;
    for s in summary {
        w.write_record([
            s.method.name().to_string(),
            s.lambda.to_string(),
            s.repeats.to_string(),
            s.ndcg.mean.to_string(),
            opt(s.ndcg.halfwidth),
            s.dp.mean.to_string(),
            opt(s.dp.halfwidth),
            s.dp_expected.mean.to_string(),
            opt(s.dp_expected.halfwidth),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Schema(format!("summary row has no valid {what}")))
}

fn estimate(rec: &csv::StringRecord, i: usize, what: &str) -> Result<Estimate> {
    Ok(Estimate {
        mean: field(rec, i, what)?,
        halfwidth: rec.get(i + 1).and_then(|s| s.parse().ok()),
    })
}

/// Reads a file written by [`write_summary`].
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(SummaryRow {
            method: rec.get(0).unwrap_or("").parse()?,
            lambda: field(&rec, 1, "lambda")?,
            repeats: field(&rec, 2, "repeats")?,
            ndcg: estimate(&rec, 3, "ndcg")?,
            dp: estimate(&rec, 5, "dp")?,
            dp_expected: estimate(&rec, 7, "dp_expected")?,
        });
    }
    Ok(out)
}

fn show(e: &Estimate) -> String {
    match e.halfwidth {
        Some(hw) => format!("{:.3} ± {:.3}", e.mean, hw),
        None => format!("{:.3}", e.mean),
    }
}

/// Plain-text table of [`fairest_point`] rows.
pub fn format_fairest(points: &[FairestPoint]) -> String {
    let mut out = format!(
        "{:<10} {:>7} {:>15} {:>15} {:>15}   best with DP < {DP_THRESHOLD}\n",
        "method", "lambda", "ndcg", "dp", "dp_expected"
    );
    for p in points {
        let f = &p.fairest;
        let best = p
            .best_under_threshold
            .as_ref()
            .map_or_else(|| "none".to_string(), |b| format!("lambda {} (ndcg {:.3})", b.lambda, b.ndcg.mean));
        out += &format!(
            "{:<10} {:>7} {:>15} {:>15} {:>15}   {best}\n",
            p.method.name(),
            f.lambda,
            show(&f.ndcg),
            show(&f.dp),
            show(&f.dp_expected)
        );
    }
    out
}
