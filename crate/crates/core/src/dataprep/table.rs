use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schema::Schema;
use crate::error::{ensure_len, Error, Result};
use crate::types::GroupId;

/// Encoded rows of a classification dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub feature_names: Vec<String>,
    /// `n x L`, one row per record.
    pub features: DMatrix<f64>,
    pub labels: Vec<bool>,
    /// 1 for the schema's `protected_value`, 0 otherwise.
    pub groups: Vec<GroupId>,
}

impl TabularDataset {
    pub fn new(
        name: impl Into<String>,
        feature_names: Vec<String>,
        features: DMatrix<f64>,
        labels: Vec<bool>,
        groups: Vec<GroupId>,
    ) -> Result<Self> {
        let n = features.nrows();
        ensure_len("feature names", features.ncols(), feature_names.len())?;
        ensure_len("labels", n, labels.len())?;
        ensure_len("groups", n, groups.len())?;
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Self {
            name: name.into(),
            feature_names,
            features,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// The given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            groups: rows.iter().map(|&i| self.groups[i]).collect(),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "?"
}

enum Encoding {
    Numeric,
    OneHot(Vec<String>),
    Ordinal(BTreeMap<String, usize>),
}

/// Reads a CSV with a header row and encodes it according to `schema`.
///
/// Rows with an empty or `?` cell in any column are dropped. Categories are
/// collected from the surviving rows and ordered lexicographically. Feature
/// columns keep the file's column order, one-hot columns expanding in place
/// as `column=value`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<TabularDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for col in schema.referenced_columns() {
        if !header.contains(col) {
            return Err(Error::Schema(format!("{}: column {col:?} not found", path.display())));
        }
    }
    let index = |name: &str| header.iter().position(|h| h == name).expect("checked above");
    let label_col = index(&schema.label);
    let protected_col = index(&schema.protected);

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != header.len() || record.iter().any(is_missing) {
            continue;
        }
        rows.push(record.iter().map(|c| c.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut encodings: Vec<(usize, Encoding)> = Vec::new();
    let mut feature_names = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if c == label_col || c == protected_col || schema.ignore.contains(name) {
            continue;
        }
        let categories = || rows.iter().map(|r| r[c].clone()).collect::<BTreeSet<_>>();
        let enc = if schema.categorical.contains(name) {
            let cats: Vec<String> = categories().into_iter().collect();
            feature_names.extend(cats.iter().map(|v| format!("{name}={v}")));
            Encoding::OneHot(cats)
        } else if schema.ordinal.contains(name) {
            feature_names.push(name.clone());
            Encoding::Ordinal(categories().into_iter().enumerate().map(|(i, v)| (v, i)).collect())
        } else {
            feature_names.push(name.clone());
            Encoding::Numeric
        };
        encodings.push((c, enc));
    }
    if let Some(expected) = schema.expected_features {
        if expected != feature_names.len() {
            return Err(Error::Schema(format!(
                "{}: schema expects {expected} features, encoding produced {}",
                path.display(),
                feature_names.len()
            )));
        }
    }

    let n = rows.len();
    let l = feature_names.len();
    let mut features = DMatrix::zeros(n, l);
    for (i, row) in rows.iter().enumerate() {
        let mut k = 0;
        for (c, enc) in &encodings {
            let cell = &row[*c];
            match enc {
                Encoding::Numeric => {
                    features[(i, k)] = cell.parse::<f64>().map_err(|_| {
                        Error::Schema(format!("column {:?}: {cell:?} is not numeric", header[*c]))
                    })?;
                    k += 1;
                }
                Encoding::OneHot(cats) => {
                    let hit = cats.iter().position(|v| v == cell).expect("category collected");
                    features[(i, k + hit)] = 1.0;
                    k += cats.len();
                }
                Encoding::Ordinal(codes) => {
                    features[(i, k)] = codes[cell] as f64;
                    k += 1;
                }
            }
        }
    }
    let labels = rows.iter().map(|r| r[label_col] == schema.positive_label).collect();
    let groups = rows
        .iter()
        .map(|r| GroupId::from(r[protected_col] == schema.protected_value))
        .collect();
    let name = if schema.name.is_empty() {
        path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    } else {
        schema.name.clone()
    };
    TabularDataset::new(name, feature_names, features, labels, groups)
}

/// Seeded row-level split. The test part holds `round(n · test_fraction)`
/// rows; both parts keep the original row order.
pub fn split(data: &TabularDataset, test_fraction: f64, seed: u64) -> Result<(TabularDataset, TabularDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n = data.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::invalid(format!("fraction {test_fraction} leaves an empty split of {n} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = idx.split_at_mut(n_test);
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.select(train), data.select(test)))
}

/// Per-feature z-score transform fitted on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: DVector<f64>,
    /// Population standard deviation; 0 marks a constant feature.
    pub std: DVector<f64>,
}

impl Scaler {
    pub fn fit(features: &DMatrix<f64>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let l = features.ncols();
        let mut mean = DVector::zeros(l);
        let mut std = DVector::zeros(l);
        for c in 0..l {
            let col = features.column(c);
            let mu = col.sum() / n as f64;
            let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            mean[c] = mu;
            std[c] = if sd > 1e-12 * (1.0 + mu.abs()) { sd } else { 0.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_len("scaler features", self.mean.len(), features.ncols())?;
        Ok(DMatrix::from_fn(features.nrows(), features.ncols(), |i, c| {
            if self.std[c] == 0.0 {
                0.0
            } else {
                (features[(i, c)] - self.mean[c]) / self.std[c]
            }
        }))
    }

    /// Constant features come back as their training value.
    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_len("scaler features", self.mean.len(), z.ncols())?;
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, c| z[(i, c)] * self.std[c] + self.mean[c]))
    }

    pub fn apply(&self, data: &TabularDataset) -> Result<TabularDataset> {
        Ok(TabularDataset {
            features: self.transform(&data.features)?,
            ..data.clone()
        })
    }
}

/// Fits a scaler on `train` and applies it to `train` and every dataset in `others`.
pub fn standardize(
    train: &TabularDataset,
    others: &[&TabularDataset],
) -> Result<(TabularDataset, Vec<TabularDataset>, Scaler)> {
    let scaler = Scaler::fit(&train.features)?;
    let train_z = scaler.apply(train)?;
    let others_z = others.iter().map(|d| scaler.apply(d)).collect::<Result<_>>()?;
    Ok((train_z, others_z, scaler))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn toy_schema() -> Schema {
        Schema::parse(
            "name = toy\nlabel = y\npositive_label = yes\nprotected = g\nprotected_value = b\n\
             categorical = color\nordinal = size\nignore = id\n",
        )
        .unwrap()
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn encodes_and_drops_missing_rows() {
        let f = write_csv(
            "id,x,color,size,g,y\n\
             1,0.5,red,M,a,yes\n\
             2,1.5,blue,S,b,no\n\
             3,?,red,L,a,yes\n\
             4,2.0,green,,b,no\n\
             5,-1,red,L,b,yes\n",
        );
        let d = load_csv(f.path(), &toy_schema()).unwrap();
        assert_eq!(d.name, "toy");
        assert_eq!(d.len(), 3);
        assert_eq!(d.feature_names, vec!["x", "color=blue", "color=red", "size"]);
        // sizes present after dropping: L, M, S
        assert_eq!(d.features.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0, 1.0, 1.0]);
        assert_eq!(d.features.row(1).iter().copied().collect::<Vec<_>>(), vec![1.5, 1.0, 0.0, 2.0]);
        assert_eq!(d.features.row(2).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(d.labels, vec![true, false, true]);
        assert_eq!(d.groups, vec![0, 1, 1]);
    }

    #[test]
    fn missing_label_column_is_a_schema_error() {
        let f = write_csv("id,x,color,size,g\n1,0.5,red,M,a\n");
        assert!(matches!(load_csv(f.path(), &toy_schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn feature_count_mismatch_is_a_schema_error() {
        let f = write_csv("id,x,color,size,g,y\n1,0.5,red,M,a,yes\n");
        let mut s = toy_schema();
        s.expected_features = Some(7);
        assert!(matches!(load_csv(f.path(), &s), Err(Error::Schema(_))));
    }

    #[test]
    fn non_numeric_cell_is_a_schema_error() {
        let f = write_csv("id,x,color,size,g,y\n1,abc,red,M,a,yes\n");
        assert!(matches!(load_csv(f.path(), &toy_schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn zero_rows_and_missing_file() {
        let f = write_csv("id,x,color,size,g,y\n1,?,red,M,a,yes\n");
        assert!(matches!(load_csv(f.path(), &toy_schema()), Err(Error::EmptyDataset)));
        assert!(matches!(load_csv("/nonexistent/file.csv", &toy_schema()), Err(Error::Io { .. })));
    }

    fn numbered(n: usize) -> TabularDataset {
        TabularDataset::new(
            "n",
            vec!["i".into()],
            DMatrix::from_fn(n, 1, |i, _| i as f64),
            vec![false; n],
            vec![0; n],
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_partition() {
        let d = numbered(1000);
        let (train, test) = split(&d, 0.2, 9).unwrap();
        assert_eq!((train.len(), test.len()), (800, 200));
        let mut all: Vec<usize> = train.features.iter().chain(test.features.iter()).map(|&x| x as usize).collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(split(&d, 0.2, 9).unwrap(), (train, test.clone()));
        assert_ne!(split(&d, 0.2, 10).unwrap().1, test);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let d = numbered(10);
        for frac in [0.0, 1.0, -0.5, 0.01, 0.99, f64::NAN] {
            assert!(split(&d, frac, 0).is_err(), "{frac}");
        }
    }

    #[test]
    fn standardize_examples() {
        let x = DMatrix::from_row_slice(4, 3, &[
            3.0, -1.0, 2.0,
            3.0, 1.0, 4.0,
            3.0, -1.0, 6.0,
            3.0, 1.0, 8.0,
        ]);
        let d = TabularDataset::new("t", vec!["a".into(), "b".into(), "c".into()], x.clone(), vec![true; 4], vec![0; 4]).unwrap();
        let (z, others, scaler) = standardize(&d, &[&d]).unwrap();
        // constant column maps to zero, unit column stays
        assert!(z.features.column(0).iter().all(|&v| v == 0.0));
        assert_eq!(z.features.column(1), x.column(1));
        assert_eq!(others[0], z);
        let back = scaler.inverse_transform(&z.features).unwrap();
        assert!((back - x).abs().max() < 1e-12);
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-1e3f64..1e3, 12..40)) {
            let n = values.len() / 3;
            let x = DMatrix::from_row_slice(n, 3, &values[..n * 3]);
            let scaler = Scaler::fit(&x).unwrap();
            let z = scaler.transform(&x).unwrap();
            let back = scaler.inverse_transform(&z).unwrap();
            for c in 0..3 {
                if scaler.std[c] > 0.0 {
                    let col = z.column(c);
                    prop_assert!((col.sum() / n as f64).abs() < 1e-9);
                    prop_assert!((back.column(c) - x.column(c)).abs().max() < 1e-10 * (1.0 + x.column(c).abs().max()));
                }
            }
        }
    }
}
