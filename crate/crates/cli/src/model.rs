//! Model files: flat `key = value` text holding the dual weights and the
//! penalties inference reuses.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use fairrank::kernels::AdmmOptions;
use fairrank::{ModelParams, OuterOptions};
use nalgebra::DVector;

pub fn write(params: &ModelParams, path: &Path) -> Result<()> {
    let theta: Vec<String> = params.theta.iter().map(ToString::to_string).collect();
    let text = format!(
        "format = 1\nlambda = {}\ngamma = {}\nmu = {}\ntheta = {}\n",
        params.lambda,
        params.gamma,
        params.mu,
        theta.join(", ")
    );
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let get = |key: &str| {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
            .ok_or_else(|| fairrank::Error::Config(format!("{}: missing {key}", path.display())))
    };
    let num = |key: &str| -> Result<f64> {
        let v = get(key)?;
        v.parse().map_err(|_| anyhow!(fairrank::Error::Config(format!("{key}: bad number {v:?}"))))
    };
    let theta = get("theta")?
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| fairrank::Error::Config("theta: bad number".into()))?;
    let params = ModelParams {
        theta: DVector::from_vec(theta),
        lambda: num("lambda")?,
        gamma: num("gamma")?,
        mu: num("mu")?,
        admm: AdmmOptions::default(),
        outer: OuterOptions::default(),
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let params = ModelParams {
            theta: DVector::from_column_slice(&[0.25, -1.5e-7, 3.0]),
            lambda: 2.0,
            gamma: 0.1,
            mu: 10.0,
            admm: AdmmOptions::default(),
            outer: OuterOptions::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        write(&params, &path).unwrap();
        assert_eq!(read(&path).unwrap(), params);
        std::fs::write(&path, "lambda = 1\n").unwrap();
        assert!(read(&path).is_err());
    }
}
