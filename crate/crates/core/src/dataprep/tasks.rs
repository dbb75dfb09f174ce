use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::table::TabularDataset;
use crate::error::{Error, Result};
use crate::types::{GroupId, RankingProblem};

/// Default probability that a query slot holds a relevant item.
pub const DEFAULT_P_REL: f64 = 0.4;

const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
    pub items_per_query: usize,
    pub p_rel: f64,
}

/// Synthetic ranking queries drawn from one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTaskSet {
    pub problems: Vec<RankingProblem>,
    pub provenance: Provenance,
}

impl RankingTaskSet {
    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.problems.first().map_or(0, RankingProblem::num_features)
    }
}

/// Builds `n_queries` queries of `m` items. Each slot is relevant with
/// probability `p_rel`, then an item is drawn uniformly with replacement from
/// the rows carrying that label. Query `i` uses its own ChaCha stream of
/// `seed`, so queries can be generated in any order.
pub fn make_ranking_problems(
    data: &TabularDataset,
    n_queries: usize,
    m: usize,
    p_rel: f64,
    seed: u64,
) -> Result<RankingTaskSet> {
    if m < 2 {
        return Err(Error::invalid("queries need at least two items"));
    }
    if !(0.0..=1.0).contains(&p_rel) {
        return Err(Error::invalid(format!("p_rel {p_rel} outside [0, 1]")));
    }
    let pos: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i]).collect();
    let neg: Vec<usize> = (0..data.len()).filter(|&i| !data.labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid(format!(
            "{}: both label classes are needed ({} positive, {} negative rows)",
            data.name,
            pos.len(),
            neg.len()
        )));
    }

    let problems = (0..n_queries)
        .into_par_iter()
        .map(|q| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(q as u64);
            let mut rows = Vec::with_capacity(m);
            let mut relevance = Vec::with_capacity(m);
            for _ in 0..m {
                let relevant = rng.gen_bool(p_rel);
                let pool = if relevant { &pos } else { &neg };
                rows.push(pool[rng.gen_range(0..pool.len())]);
                relevance.push(relevant);
            }
            RankingProblem::new(
                format!("q{q:05}"),
                data.features.select_rows(&rows),
                relevance,
                rows.iter().map(|&r| data.groups[r]).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RankingTaskSet {
        problems,
        provenance: Provenance {
            source: data.name.clone(),
            seed,
            items_per_query: m,
            p_rel,
        },
    })
}

/// Writes `manifest.txt` plus one `<query_id>.tsv` per query into `dir`.
///
/// Each query file has a header `relevance group x0 x1 ...` and one
/// tab-separated line per item. Floats use the shortest representation that
/// reads back to the same value.
pub fn write_task_set(set: &RankingTaskSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = &set.provenance;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "format = {FORMAT_VERSION}");
    let _ = writeln!(manifest, "source = {}", p.source);
    let _ = writeln!(manifest, "seed = {}", p.seed);
    let _ = writeln!(manifest, "n_queries = {}", set.len());
    let _ = writeln!(manifest, "items_per_query = {}", p.items_per_query);
    let _ = writeln!(manifest, "p_rel = {}", p.p_rel);
    let _ = writeln!(manifest, "num_features = {}", set.num_features());
    let queries: Vec<&str> = set.problems.iter().map(|q| q.query_id.as_str()).collect();
    let _ = writeln!(manifest, "queries = {}", queries.join(","));
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;

    for problem in &set.problems {
        let mut out = String::from("relevance\tgroup");
        for l in 0..problem.num_features() {
            let _ = write!(out, "\tx{l}");
        }
        out.push('\n');
        for j in 0..problem.len() {
            let _ = write!(out, "{}\t{}", u8::from(problem.relevance[j]), problem.groups[j]);
            for x in problem.features.row(j).iter() {
                let _ = write!(out, "\t{x}");
            }
            out.push('\n');
        }
        let path = dir.join(format!("{}.tsv", problem.query_id));
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn manifest_value<'a>(manifest: &'a str, key: &str) -> Result<&'a str> {
    manifest
        .lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim())
        .ok_or_else(|| Error::Schema(format!("task-set manifest lacks {key}")))
}

fn parse_field<T: std::str::FromStr>(value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Schema(format!("cannot parse {what} from {value:?}")))
}

/// Reads a directory written by [`write_task_set`].
pub fn read_task_set(dir: impl AsRef<Path>) -> Result<RankingTaskSet> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.txt");
    let manifest = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: usize = parse_field(manifest_value(&manifest, "items_per_query")?, "items_per_query")?;
    let l: usize = parse_field(manifest_value(&manifest, "num_features")?, "num_features")?;
    let provenance = Provenance {
        source: manifest_value(&manifest, "source")?.to_string(),
        seed: parse_field(manifest_value(&manifest, "seed")?, "seed")?,
        items_per_query: m,
        p_rel: parse_field(manifest_value(&manifest, "p_rel")?, "p_rel")?,
    };
    let ids: Vec<&str> = manifest_value(&manifest, "queries")?
        .split(',')
        .filter(|s| !s.is_empty())
        .collect();
    let expected: usize = parse_field(manifest_value(&manifest, "n_queries")?, "n_queries")?;
    if ids.len() != expected {
        return Err(Error::Schema(format!("manifest lists {} queries, expected {expected}", ids.len())));
    }

    let mut problems = Vec::with_capacity(ids.len());
    for id in ids {
        let path = dir.join(format!("{id}.tsv"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().skip(1);
        let mut features = DMatrix::zeros(m, l);
        let mut relevance = Vec::with_capacity(m);
        let mut groups = Vec::with_capacity(m);
        for j in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::Schema(format!("{}: expected {m} items", path.display())))?;
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != l + 2 {
                return Err(Error::Schema(format!("{}: item {j} has {} cells", path.display(), cells.len())));
            }
            relevance.push(parse_field::<u8>(cells[0], "relevance")? == 1);
            groups.push(parse_field::<GroupId>(cells[1], "group")?);
            for c in 0..l {
                features[(j, c)] = parse_field(cells[c + 2], "feature")?;
            }
        }
        problems.push(RankingProblem::new(id, features, relevance, groups)?);
    }
    Ok(RankingTaskSet { problems, provenance })
}
