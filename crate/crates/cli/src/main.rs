use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fairrank::dataprep::{load_csv, make_ranking_problems, read_task_set, split, standardize, write_task_set, Schema};
use fairrank::experiment::{
    fairest_point, format_fairest, read_summary, run_sweep, summarize, write_outputs, ExperimentConfig, Method,
};
use fairrank::inference::{infer_batch, rank_stochastic};
use fairrank::kernels::AdmmOptions;
use fairrank::metrics::{dp_violation, ndcg};
use fairrank::trainer::{train, Hyperparams};
use fairrank::{ModelParams, OuterOptions, PositionBias};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod model;

#[derive(Parser)]
#[command(name = "fairrank", version, about = "Fair and robust learning to rank")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (flat key = value file).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Split a CSV, standardize it and write train/test task sets.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// CSV file; the schema defaults to the same path with a .schema extension.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the robust ranker on a task set and write the model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Task-set directory.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank every query of a task set with a trained model.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Sample rankings from the decomposition of P* instead of taking the maximum assignment.
        #[arg(long)]
        stochastic: bool,
        /// Rankings file to write (tab separated).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the repeated λ-sweep described by a config file.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict to these methods (robust, post_proc, random).
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        /// Replace the λ grid of every selected method.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
    },
    /// Print the fairest point per method from a sweep's output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors that mean the run was misconfigured rather than partially failed.
fn is_config_error(e: &anyhow::Error) -> bool {
    use fairrank::Error as E;
    e.chain().any(|c| {
        c.downcast_ref::<clap::Error>().is_some()
            || matches!(
                c.downcast_ref::<E>(),
                Some(E::Config(_) | E::Schema(_) | E::Io { .. } | E::InvalidInput(_) | E::Csv(_))
            )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn set_jobs(jobs: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("cannot configure worker threads")
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

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Prepare {
            common,
            dataset,
            schema,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(d) = dataset {
                cfg.schema = schema.unwrap_or_else(|| d.with_extension("schema"));
                cfg.data = d;
            } else if let Some(s) = schema {
                cfg.schema = s;
            }
            if cfg.data.as_os_str().is_empty() {
                return Err(fairrank::Error::Config("--dataset or a config with data is required".into()).into());
            }
            set_jobs(cfg.jobs)?;
            prepare(&cfg, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            common,
            dataset,
            lambda,
            gamma,
            mu,
            out,
        } => {
            let cfg = load_config(&common)?;
            set_jobs(cfg.jobs)?;
            let set = read_task_set(&dataset)?;
            let outcome = train(&set.problems, hyperparams(&cfg, lambda, gamma, mu))?;
            let d = &outcome.diagnostics;
            log::info!(
                "{} iterations, converged {}, projected gradient {:.3e}",
                d.iterations,
                d.converged,
                d.projected_grad_norm
            );
            model::write(&outcome.params, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Infer {
            common,
            dataset,
            model,
            stochastic,
            out,
        } => {
            let cfg = load_config(&common)?;
            set_jobs(cfg.jobs)?;
            let set = read_task_set(&dataset)?;
            let params = model::read(&model)?;
            infer(&set.problems, &params, stochastic, cfg.seed, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            common,
            dataset,
            out,
            method,
            lambda,
        } => {
            let mut cfg = load_config(&common)?;
            if common.config.is_none() && dataset.is_none() {
                return Err(fairrank::Error::Config("sweep needs --config or --dataset".into()).into());
            }
            if let Some(d) = dataset {
                cfg.schema = d.with_extension("schema");
                cfg.data = d;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if !method.is_empty() {
                cfg.methods = method;
            }
            if !lambda.is_empty() {
                cfg.robust_lambdas = lambda.clone();
                cfg.post_proc_lambdas = lambda;
            }
            cfg.validate()?;
            let result = run_sweep(&cfg)?;
            write_outputs(&result, &cfg, &cfg.out)?;
            print!("{}", format_fairest(&fairest_point(&summarize(&result.rows))?));
            if result.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} cells failed, see diagnostics.log", result.failures.len());
                Ok(ExitCode::from(1))
            }
        }
        Command::Report { out } => {
            let path = if out.is_dir() { out.join("summary.csv") } else { out };
            let summary = read_summary(&path)?;
            print!("{}", format_fairest(&fairest_point(&summary)?));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let schema = Schema::from_file(&cfg.schema)?;
    let data = load_csv(&cfg.data, &schema)?;
    let (train_rows, test_rows) = split(&data, cfg.test_fraction, cfg.seed)?;
    let (train_z, others, _) = standardize(&train_rows, &[&test_rows])?;
    let m = cfg.items_per_query;
    let train_set = make_ranking_problems(&train_z, cfg.n_train, m, cfg.p_rel, cfg.seed)?;
    let test_set = make_ranking_problems(&others[0], cfg.n_test, m, cfg.p_rel, cfg.seed.wrapping_add(1))?;
    write_task_set(&train_set, out.join("train"))?;
    write_task_set(&test_set, out.join("test"))?;
    log::info!(
        "{}: {} rows, {} features; wrote {} train and {} test queries to {}",
        data.name,
        data.len(),
        data.num_features(),
        train_set.len(),
        test_set.len(),
        out.display()
    );
    Ok(())
}

fn infer(
    problems: &[fairrank::RankingProblem],
    params: &ModelParams,
    stochastic: bool,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let Some(first) = problems.first() else {
        bail!("task set has no queries");
    };
    let unlabeled: Vec<_> = problems.iter().map(|p| p.unlabeled()).collect();
    let results = infer_batch(&unlabeled, params)?;
    let bias = PositionBias::new(first.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("query\tranking\tndcg\tdp\n");
    let (mut nd, mut dp, mut counted) = (0.0, 0.0, 0usize);
    for (p, r) in problems.iter().zip(&results) {
        let ranking = if stochastic {
            rank_stochastic(&r.p_star, &mut rng)?
        } else {
            r.ranking.clone()
        };
        let score = ndcg(&p.relevance, &ranking)?;
        let violation = dp_violation(&ranking, &p.groups, &bias)?;
        nd += score;
        if let Some(v) = violation {
            dp += v;
            counted += 1;
        }
        let order: Vec<String> = ranking.order().iter().map(ToString::to_string).collect();
        let _ = writeln!(
            text,
            "{}\t{}\t{score}\t{}",
            p.query_id,
            order.join(","),
            violation.map_or_else(String::new, |v| v.to_string())
        );
    }
    std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "queries {}  mean ndcg {:.4}  mean dp {:.4}",
        problems.len(),
        nd / problems.len() as f64,
        if counted > 0 { dp / counted as f64 } else { 0.0 }
    );
    Ok(())
}
