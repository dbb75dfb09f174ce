use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// A ranking method the sweep can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// The adversarial minimax ranker.
    Robust,
    /// Ridge regression plus the penalized re-ranker.
    PostProc,
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Robust, Method::PostProc, Method::Random];

    pub fn name(self) -> &'static str {
        match self {
            Method::Robust => "robust",
            Method::PostProc => "post_proc",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected robust, post_proc or random)")))
    }
}

/// Everything a sweep needs. Config files are flat `key = value` text with
/// `#` comments; list values are comma separated. Relative paths resolve
/// against the config file's directory.
///
/// | key | default |
/// |---|---|
/// | `data` | required, CSV path |
/// | `schema` | required, schema path |
/// | `out` | `results` |
/// | `seed` | `0` |
/// | `items_per_query` | `10` |
/// | `n_train` | `500` training queries |
/// | `n_test` | `100` test queries |
/// | `repeats` | `10` |
/// | `folds` | `3` |
/// | `p_rel` | `0.4` |
/// | `test_fraction` | `0.2` of rows held out before sampling queries |
/// | `methods` | `robust, post_proc, random` |
/// | `robust_lambdas` | `0, 0.1, 0.5, 1, 2, 5, 10` |
/// | `post_proc_lambdas` | `0, 0.01, 0.05, 0.1, 0.2` |
/// | `gamma_grid` | `0.01, 0.1, 1` |
/// | `mu_grid` | `3, 10, 30, 100` |
/// | `ridge` | `0.001` |
/// | `post_proc_mu` | `0.01` |
/// | `admm_tol_abs` | `1e-6` |
/// | `admm_tol_rel` | `1e-4` |
/// | `admm_max_iter` | `5000` |
/// | `outer_tol` | `1e-4` |
/// | `outer_max_iter` | `300` |
/// | `jobs` | `0`, one worker per core |
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub items_per_query: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub repeats: usize,
    pub folds: usize,
    pub p_rel: f64,
    pub test_fraction: f64,
    pub methods: Vec<Method>,
    pub robust_lambdas: Vec<f64>,
    pub post_proc_lambdas: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    pub ridge: f64,
    pub post_proc_mu: f64,
    pub admm_tol_abs: f64,
    pub admm_tol_rel: f64,
    pub admm_max_iter: usize,
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            schema: PathBuf::new(),
            out: PathBuf::from("results"),
            seed: 0,
            items_per_query: 10,
            n_train: 500,
            n_test: 100,
            repeats: 10,
            folds: 3,
            p_rel: 0.4,
            test_fraction: 0.2,
            methods: Method::ALL.to_vec(),
            robust_lambdas: vec![0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0],
            post_proc_lambdas: vec![0.0, 0.01, 0.05, 0.1, 0.2],
            gamma_grid: vec![0.01, 0.1, 1.0],
            mu_grid: vec![3.0, 10.0, 30.0, 100.0],
            ridge: 1e-3,
            post_proc_mu: 1e-2,
            admm_tol_abs: 1e-6,
            admm_tol_rel: 1e-4,
            admm_max_iter: 5000,
            outer_tol: 1e-4,
            outer_max_iter: 300,
            jobs: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn format_list<T: fmt::Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = Self::default();
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data" => c.data = path(value),
                "schema" => c.schema = path(value),
                "out" => c.out = path(value),
                "seed" => c.seed = parse(key, value)?,
                "items_per_query" => c.items_per_query = parse(key, value)?,
                "n_train" => c.n_train = parse(key, value)?,
                "n_test" => c.n_test = parse(key, value)?,
                "repeats" => c.repeats = parse(key, value)?,
                "folds" => c.folds = parse(key, value)?,
                "p_rel" => c.p_rel = parse(key, value)?,
                "test_fraction" => c.test_fraction = parse(key, value)?,
                "methods" => c.methods = parse_list(key, value)?,
                "robust_lambdas" => c.robust_lambdas = parse_list(key, value)?,
                "post_proc_lambdas" => c.post_proc_lambdas = parse_list(key, value)?,
                "gamma_grid" => c.gamma_grid = parse_list(key, value)?,
                "mu_grid" => c.mu_grid = parse_list(key, value)?,
                "ridge" => c.ridge = parse(key, value)?,
                "post_proc_mu" => c.post_proc_mu = parse(key, value)?,
                "admm_tol_abs" => c.admm_tol_abs = parse(key, value)?,
                "admm_tol_rel" => c.admm_tol_rel = parse(key, value)?,
                "admm_max_iter" => c.admm_max_iter = parse(key, value)?,
                "outer_tol" => c.outer_tol = parse(key, value)?,
                "outer_max_iter" => c.outer_max_iter = parse(key, value)?,
                "jobs" => c.jobs = parse(key, value)?,
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The λ grid a method is swept over. The random ranker ignores λ.
    pub fn lambdas(&self, method: Method) -> &[f64] {
        match method {
            Method::Robust => &self.robust_lambdas,
            Method::PostProc => &self.post_proc_lambdas,
            Method::Random => &[0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.data.as_os_str().is_empty() || self.schema.as_os_str().is_empty() {
            return bad("data and schema paths are required".into());
        }
        for (key, n) in [
            ("items_per_query", self.items_per_query),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("repeats", self.repeats),
            ("outer_max_iter", self.outer_max_iter),
            ("admm_max_iter", self.admm_max_iter),
        ] {
            if n == 0 {
                return bad(format!("{key} must be positive"));
            }
        }
        if self.items_per_query < 2 {
            return bad("items_per_query must be at least 2".into());
        }
        if self.folds < 2 || self.folds > self.n_train {
            return bad(format!("folds must lie in [2, n_train], got {}", self.folds));
        }
        if !(0.0..=1.0).contains(&self.p_rel) {
            return bad(format!("p_rel {} outside [0, 1]", self.p_rel));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        for m in &self.methods {
            if self.lambdas(*m).is_empty() {
                return bad(format!("{m} lambda grid is empty"));
            }
            if self.lambdas(*m).iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return bad(format!("{m} lambda grid has a negative or non-finite entry"));
            }
        }
        for (key, grid) in [("gamma_grid", &self.gamma_grid), ("mu_grid", &self.mu_grid)] {
            if grid.is_empty() || grid.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return bad(format!("{key} must be a non-empty list of positive numbers"));
            }
        }
        for (key, x) in [
            ("post_proc_mu", self.post_proc_mu),
            ("admm_tol_abs", self.admm_tol_abs),
            ("admm_tol_rel", self.admm_tol_rel),
            ("outer_tol", self.outer_tol),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(format!("{key} must be positive"));
            }
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be >= 0".into());
        }
        Ok(())
    }

    /// The config as parseable text with every key spelled out.
    pub fn to_text(&self) -> String {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        [
            format!("data = {}", self.data.display()),
            format!("schema = {}", self.schema.display()),
            format!("out = {}", self.out.display()),
            format!("seed = {}", self.seed),
            format!("items_per_query = {}", self.items_per_query),
            format!("n_train = {}", self.n_train),
            format!("n_test = {}", self.n_test),
            format!("repeats = {}", self.repeats),
            format!("folds = {}", self.folds),
            format!("p_rel = {}", self.p_rel),
            format!("test_fraction = {}", self.test_fraction),
            format!("methods = {}", methods.join(", ")),
            format!("robust_lambdas = {}", format_list(&self.robust_lambdas)),
            format!("post_proc_lambdas = {}", format_list(&self.post_proc_lambdas)),
            format!("gamma_grid = {}", format_list(&self.gamma_grid)),
            format!("mu_grid = {}", format_list(&self.mu_grid)),
            format!("ridge = {}", self.ridge),
            format!("post_proc_mu = {}", self.post_proc_mu),
            format!("admm_tol_abs = {}", self.admm_tol_abs),
            format!("admm_tol_rel = {}", self.admm_tol_rel),
            format!("admm_max_iter = {}", self.admm_max_iter),
            format!("outer_tol = {}", self.outer_tol),
            format!("outer_max_iter = {}", self.outer_max_iter),
            format!("jobs = {}", self.jobs),
        ]
        .join("\n")
            + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!((c.items_per_query, c.n_train, c.n_test, c.repeats, c.folds), (10, 500, 100, 10, 3));
        assert_eq!(c.lambdas(Method::Robust), &[0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0]);
        assert_eq!(c.lambdas(Method::PostProc), &[0.0, 0.01, 0.05, 0.1, 0.2]);
        assert_eq!(c.lambdas(Method::Random), &[0.0]);
    }

    #[test]
    fn parse_resolves_paths_and_round_trips() {
        let c = ExperimentConfig::parse(
            "data = g.csv\nschema = /abs/g.schema # inline\nout = /tmp/o\nmethods = robust\nrobust_lambdas = 0, 2.5\n",
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(c.data, PathBuf::from("/cfg/g.csv"));
        assert_eq!(c.schema, PathBuf::from("/abs/g.schema"));
        assert_eq!(c.methods, vec![Method::Robust]);
        assert_eq!(c.robust_lambdas, vec![0.0, 2.5]);
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_text(), Path::new("/elsewhere")).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(ExperimentConfig::parse("colour = red", Path::new(".")), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("repeats = many", Path::new(".")), Err(Error::Config(_))));
        assert!(ExperimentConfig::parse("methods = deltr", Path::new(".")).is_err());
        let mut c = ExperimentConfig {
            data: "a".into(),
            schema: "b".into(),
            ..Default::default()
        };
        c.validate().unwrap();
        c.mu_grid.clear();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_err());
    }
}
