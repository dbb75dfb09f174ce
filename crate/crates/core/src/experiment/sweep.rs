use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use super::report::{summarize, write_summary};
use crate::baselines::{post_process_rank, random_rank, ridge_fit};
use crate::dataprep::{load_csv, make_ranking_problems, split, standardize, Schema, TabularDataset};
use crate::error::{Error, Result};
use crate::inference::{infer_batch, BVN_TOL};
use crate::kernels::{bvn_decompose, AdmmOptions};
use crate::metrics::{dp_violation, ndcg, ItemExposure};
use crate::trainer::{cross_validate, train, Hyperparams};
use crate::types::{DoublyStochasticMatrix, OuterOptions, Permutation, PositionBias, RankingProblem};

/// Test metrics of one `(method, λ, repeat)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub lambda: f64,
    pub repeat: usize,
    /// Mean NDCG over the test queries.
    pub ndcg: f64,
    /// Mean DP violation of the served rankings over test queries holding
    /// both groups.
    pub dp: f64,
    /// Mean DP violation of the ranking distribution `P` itself. Equals `dp`
    /// for a method that serves one fixed permutation per query; the random
    /// ranker's distribution is uniform, so its value is zero.
    pub dp_expected: f64,
    /// Hyperparameters chosen by cross validation (robust method only).
    pub gamma: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub method: Method,
    pub lambda: f64,
    pub repeat: usize,
    pub message: String,
}

/// Solver health of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDiagnostics {
    pub method: Method,
    pub lambda: f64,
    pub repeat: usize,
    pub train_iterations: Option<usize>,
    pub train_converged: Option<bool>,
    pub infer_unconverged: usize,
    /// Worst row/column sum deviation over every matrix the cell produced.
    pub max_marginal_violation: f64,
    pub min_entry: f64,
    /// Worst `|Σ weights − 1|` over the test decompositions.
    pub bvn_weight_error: f64,
    /// Worst entrywise reconstruction error over the test decompositions.
    pub bvn_reconstruction_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Canonical order: method, then λ in grid order, then repeat.
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
    pub diagnostics: Vec<CellDiagnostics>,
}

struct RepeatSeeds {
    split: u64,
    train_tasks: u64,
    test_tasks: u64,
    folds: u64,
    random: u64,
}

fn repeat_seeds(seed: u64, repeat: usize) -> RepeatSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    RepeatSeeds {
        split: rng.next_u64(),
        train_tasks: rng.next_u64(),
        test_tasks: rng.next_u64(),
        folds: rng.next_u64(),
        random: rng.next_u64(),
    }
}

struct Evaluated {
    ndcg: f64,
    dp: f64,
    dp_expected: f64,
}

/// Averages NDCG over all queries and DP over the queries with two groups.
fn evaluate(problems: &[RankingProblem], rankings: &[Permutation], policies: &[DoublyStochasticMatrix]) -> Result<Evaluated> {
    let bias = PositionBias::new(problems[0].len());
    let (mut nd, mut dp, mut dpe, mut counted) = (0.0, 0.0, 0.0, 0usize);
    for ((p, r), pol) in problems.iter().zip(rankings).zip(policies) {
        nd += ndcg(&p.relevance, r)?;
        if let Some(d) = dp_violation(r, &p.groups, &bias)? {
            dp += d;
            dpe += dp_violation(pol as &dyn ItemExposure, &p.groups, &bias)?.unwrap_or(0.0);
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::invalid("no test query contains both groups"));
    }
    Ok(Evaluated {
        ndcg: nd / problems.len() as f64,
        dp: dp / counted as f64,
        dp_expected: dpe / counted as f64,
    })
}

struct Feasibility {
    violation: f64,
    min_entry: f64,
    bvn_weight: f64,
    bvn_reconstruction: f64,
}

impl Feasibility {
    fn new() -> Self {
        Self {
            violation: 0.0,
            min_entry: f64::INFINITY,
            bvn_weight: 0.0,
            bvn_reconstruction: 0.0,
        }
    }

    fn check(&mut self, p: &DoublyStochasticMatrix) {
        self.violation = self.violation.max(p.marginal_violation());
        self.min_entry = self.min_entry.min(p.min_entry());
    }

    fn check_bvn(&mut self, p: &DoublyStochasticMatrix) -> Result<()> {
        let d = bvn_decompose(p, BVN_TOL)?;
        self.bvn_weight = self.bvn_weight.max((d.total_weight() - 1.0).abs());
        self.bvn_reconstruction = self
            .bvn_reconstruction
            .max((d.reconstruct() - p.as_matrix()).amax());
        Ok(())
    }
}

struct Split {
    train: Vec<RankingProblem>,
    test: Vec<RankingProblem>,
}

fn prepare(cfg: &ExperimentConfig, data: &TabularDataset, seeds: &RepeatSeeds) -> Result<Split> {
    let (train_rows, test_rows) = split(data, cfg.test_fraction, seeds.split)?;
    let (train_z, mut others, _) = standardize(&train_rows, &[&test_rows])?;
    let test_z = others.remove(0);
    let m = cfg.items_per_query;
    Ok(Split {
        train: make_ranking_problems(&train_z, cfg.n_train, m, cfg.p_rel, seeds.train_tasks)?.problems,
        test: make_ranking_problems(&test_z, cfg.n_test, m, cfg.p_rel, seeds.test_tasks)?.problems,
    })
}

fn hyperparams(cfg: &ExperimentConfig, lambda: f64, gamma: f64, mu: f64) -> Hyperparams {
    Hyperparams {
        lambda,
        gamma,
        mu,
        admm: AdmmOptions {
            tol_abs: cfg.admm_tol_abs,
            tol_rel: cfg.admm_tol_rel,
            max_iter: cfg.admm_max_iter,
            ..AdmmOptions::default()
        },
        outer: OuterOptions {
            tol: cfg.outer_tol,
            max_iter: cfg.outer_max_iter,
            ..OuterOptions::default()
        },
    }
}

type CellOutput = Result<(ResultRow, CellDiagnostics)>;

fn robust_cell(cfg: &ExperimentConfig, s: &Split, lambda: f64, gamma: f64, mu: f64, repeat: usize) -> CellOutput {
    let outcome = train(&s.train, hyperparams(cfg, lambda, gamma, mu))?;
    let mut feas = Feasibility::new();
    outcome.state.p_star.iter().for_each(|p| feas.check(p));
    let unlabeled: Vec<_> = s.test.iter().map(RankingProblem::unlabeled).collect();
    let results = infer_batch(&unlabeled, &outcome.params)?;
    for r in &results {
        feas.check(&r.p_star);
        feas.check_bvn(&r.p_star)?;
    }
    let rankings: Vec<Permutation> = results.iter().map(|r| r.ranking.clone()).collect();
    let policies: Vec<DoublyStochasticMatrix> = results.iter().map(|r| r.p_star.clone()).collect();
    let e = evaluate(&s.test, &rankings, &policies)?;
    Ok((
        ResultRow {
            method: Method::Robust,
            lambda,
            repeat,
            ndcg: e.ndcg,
            dp: e.dp,
            dp_expected: e.dp_expected,
            gamma: Some(gamma),
            mu: Some(mu),
        },
        CellDiagnostics {
            method: Method::Robust,
            lambda,
            repeat,
            train_iterations: Some(outcome.diagnostics.iterations),
            train_converged: Some(outcome.diagnostics.converged),
            infer_unconverged: results.iter().filter(|r| !r.diagnostics.converged).count(),
            max_marginal_violation: feas.violation,
            min_entry: feas.min_entry,
            bvn_weight_error: feas.bvn_weight,
            bvn_reconstruction_error: feas.bvn_reconstruction,
        },
    ))
}

fn post_proc_cell(cfg: &ExperimentConfig, s: &Split, lambda: f64, repeat: usize) -> CellOutput {
    let model = ridge_fit(&s.train, cfg.ridge)?;
    let bias = PositionBias::new(cfg.items_per_query);
    let mut feas = Feasibility::new();
    let results = s
        .test
        .par_iter()
        .map(|p| post_process_rank(&model.predict(&p.features)?, &p.groups, lambda, cfg.post_proc_mu, &bias))
        .collect::<Result<Vec<_>>>()?;
    results.iter().for_each(|r| feas.check(&r.p_star));
    let rankings: Vec<Permutation> = results.iter().map(|r| r.ranking.clone()).collect();
    // the served ranking is deterministic
    let policies: Vec<DoublyStochasticMatrix> = rankings.iter().map(DoublyStochasticMatrix::from_permutation).collect();
    let e = evaluate(&s.test, &rankings, &policies)?;
    Ok((
        ResultRow {
            method: Method::PostProc,
            lambda,
            repeat,
            ndcg: e.ndcg,
            dp: e.dp,
            dp_expected: e.dp_expected,
            gamma: None,
            mu: None,
        },
        CellDiagnostics {
            method: Method::PostProc,
            lambda,
            repeat,
            train_iterations: None,
            train_converged: None,
            infer_unconverged: 0,
            max_marginal_violation: feas.violation,
            min_entry: feas.min_entry,
            bvn_weight_error: 0.0,
            bvn_reconstruction_error: 0.0,
        },
    ))
}

fn random_cell(cfg: &ExperimentConfig, s: &Split, seed: u64, repeat: usize) -> CellOutput {
    let m = cfg.items_per_query;
    let rankings: Vec<Permutation> = (0..s.test.len())
        .map(|q| random_rank(m, seed.wrapping_add(q as u64)))
        .collect();
    let policies = vec![DoublyStochasticMatrix::uniform(m); s.test.len()];
    let e = evaluate(&s.test, &rankings, &policies)?;
    Ok((
        ResultRow {
            method: Method::Random,
            lambda: 0.0,
            repeat,
            ndcg: e.ndcg,
            dp: e.dp,
            dp_expected: e.dp_expected,
            gamma: None,
            mu: None,
        },
        CellDiagnostics {
            method: Method::Random,
            lambda: 0.0,
            repeat,
            train_iterations: None,
            train_converged: None,
            infer_unconverged: 0,
            max_marginal_violation: 0.0,
            min_entry: 0.0,
            bvn_weight_error: 0.0,
            bvn_reconstruction_error: 0.0,
        },
    ))
}

struct RepeatOutput {
    cells: Vec<(Method, f64, CellOutput)>,
}

fn run_repeat(cfg: &ExperimentConfig, data: &TabularDataset, repeat: usize) -> RepeatOutput {
    let seeds = repeat_seeds(cfg.seed, repeat);
    let grid: Vec<(Method, f64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.lambdas(m).iter().map(move |&l| (m, l)))
        .collect();
    let fail_all = |e: &Error| RepeatOutput {
        cells: grid
            .iter()
            .map(|&(m, l)| (m, l, Err(Error::invalid(format!("repeat setup failed: {e}")))))
            .collect(),
    };
    let s = match prepare(cfg, data, &seeds) {
        Ok(s) => s,
        Err(e) => return fail_all(&e),
    };

    let selected = if cfg.methods.contains(&Method::Robust) {
        let start = Instant::now();
        let cv = cross_validate(
            &s.train,
            &cfg.gamma_grid,
            &cfg.mu_grid,
            cfg.folds,
            hyperparams(cfg, 0.0, 1.0, 1.0),
            seeds.folds,
        );
        if let Ok(cv) = &cv {
            log::info!(
                "repeat {repeat}: cv chose gamma={} mu={} in {:.1}s",
                cv.gamma,
                cv.mu,
                start.elapsed().as_secs_f64()
            );
        }
        Some(cv.map(|c| (c.gamma, c.mu)).map_err(|e| e.to_string()))
    } else {
        None
    };

    let cells = grid
        .into_iter()
        .map(|(method, lambda)| {
            let start = Instant::now();
            let out = match method {
                Method::Robust => match selected.as_ref().expect("cv ran for the robust method") {
                    Ok((gamma, mu)) => robust_cell(cfg, &s, lambda, *gamma, *mu, repeat),
                    Err(msg) => Err(Error::invalid(format!("cross validation failed: {msg}"))),
                },
                Method::PostProc => post_proc_cell(cfg, &s, lambda, repeat),
                Method::Random => random_cell(cfg, &s, seeds.random, repeat),
            };
            match &out {
                Ok((row, _)) => log::info!(
                    "repeat {repeat} {method} lambda={lambda}: ndcg={:.4} dp={:.4} ({:.1}s)",
                    row.ndcg,
                    row.dp,
                    start.elapsed().as_secs_f64()
                ),
                Err(e) => log::error!("repeat {repeat} {method} lambda={lambda} failed: {e}"),
            }
            (method, lambda, out)
        })
        .collect();
    RepeatOutput { cells }
}

/// Runs every `(method, λ, repeat)` cell on an already loaded dataset. A
/// failing cell is recorded and the sweep carries on.
pub fn run_sweep_on(cfg: &ExperimentConfig, data: &TabularDataset) -> Result<ExperimentResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    let repeats: Vec<RepeatOutput> =
        pool.install(|| (0..cfg.repeats).into_par_iter().map(|r| run_repeat(cfg, data, r)).collect());

    let mut cells: Vec<(Method, usize, usize, CellOutput)> = Vec::new();
    for (repeat, out) in repeats.into_iter().enumerate() {
        for (method, lambda, cell) in out.cells {
            let idx = cfg.lambdas(method).iter().position(|&l| l == lambda).unwrap_or(0);
            cells.push((method, idx, repeat, cell));
        }
    }
    cells.sort_by_key(|(m, idx, r, _)| (*m, *idx, *r));
    let mut result = ExperimentResult {
        rows: Vec::new(),
        failures: Vec::new(),
        diagnostics: Vec::new(),
    };
    for (method, idx, repeat, cell) in cells {
        let lambda = cfg.lambdas(method)[idx];
        match cell {
            Ok((row, diag)) => {
                result.rows.push(row);
                result.diagnostics.push(diag);
            }
            Err(e) => result.failures.push(CellFailure {
                method,
                lambda,
                repeat,
                message: e.to_string(),
            }),
        }
    }
    Ok(result)
}

/// Loads the configured dataset and runs the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let schema = Schema::from_file(&cfg.schema)?;
    let data = load_csv(&cfg.data, &schema)?;
    run_sweep_on(cfg, &data)
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Writes `results.csv`, `summary.csv`, `manifest.txt` and `diagnostics.log`
/// into `dir`.
pub fn write_outputs(result: &ExperimentResult, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["method", "lambda", "repeat", "ndcg", "dp", "dp_expected", "gamma", "mu"])?;
    for r in &result.rows {
        w.write_record([
            r.method.name().to_string(),
            r.lambda.to_string(),
            r.repeat.to_string(),
            r.ndcg.to_string(),
            r.dp.to_string(),
            r.dp_expected.to_string(),
            opt(r.gamma),
            opt(r.mu),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_summary(&summarize(&result.rows), &dir.join("summary.csv"))?;

    let mut manifest = format!("fairrank {}\n", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "rows = {}", result.rows.len());
    let _ = writeln!(manifest, "failed_cells = {}", result.failures.len());
    manifest += "\n# config\n";
    manifest += &cfg.to_text();
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;

    let mut log = String::from(
        "method\tlambda\trepeat\ttrain_iterations\ttrain_converged\tinfer_unconverged\t\
         max_marginal_violation\tmin_entry\tbvn_weight_error\tbvn_reconstruction_error\n",
    );
    for d in &result.diagnostics {
        let _ = writeln!(
            log,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:e}\t{:e}\t{:e}\t{:e}",
            d.method,
            d.lambda,
            d.repeat,
            opt(d.train_iterations),
            opt(d.train_converged),
            d.infer_unconverged,
            d.max_marginal_violation,
            d.min_entry,
            d.bvn_weight_error,
            d.bvn_reconstruction_error
        );
    }
    for f in &result.failures {
        let _ = writeln!(log, "FAILED {} lambda={} repeat={}: {}", f.method, f.lambda, f.repeat, f.message);
    }
    let path = dir.join("diagnostics.log");
    std::fs::write(&path, log).map_err(|e| Error::io(&path, e))
}
