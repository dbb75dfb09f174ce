//! Loading the shipped CSVs with their schema files.

use std::path::PathBuf;

use fairrank::dataprep::{load_csv, make_ranking_problems, split, standardize, Schema, DEFAULT_P_REL};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn load(name: &str) -> fairrank::dataprep::TabularDataset {
    let dir = data_dir();
    let schema = Schema::from_file(dir.join(format!("{name}.schema"))).unwrap();
    load_csv(dir.join(format!("{name}.csv")), &schema).unwrap()
}

#[test]
fn table_one_counts() {
    for (name, rows, features) in [("german", 1000, 20), ("compas", 6167, 10), ("adult", 45222, 12)] {
        let d = load(name);
        assert_eq!((d.len(), d.num_features()), (rows, features), "{name}");
        assert!(d.groups.iter().any(|&g| g == 0) && d.groups.iter().any(|&g| g == 1));
        assert!(d.labels.iter().any(|&l| l) && d.labels.iter().any(|&l| !l));
    }
}

#[test]
fn protected_attribute_is_not_a_feature() {
    assert!(!load("german").feature_names.iter().any(|n| n == "sex"));
    assert!(!load("compas").feature_names.iter().any(|n| n == "race"));
}

#[test]
fn protocol_task_sets() {
    let d = load("german");
    let (train, test) = split(&d, 0.2, 1).unwrap();
    let (train, others, _) = standardize(&train, &[&test]).unwrap();
    assert!(train.features.iter().all(|x| x.is_finite()));
    let tr = make_ranking_problems(&train, 500, 10, DEFAULT_P_REL, 2).unwrap();
    let te = make_ranking_problems(&others[0], 100, 10, DEFAULT_P_REL, 3).unwrap();
    assert_eq!((tr.len(), te.len()), (500, 100));
    assert!(tr.problems.iter().chain(&te.problems).all(|p| p.len() == 10));
    let mean = tr.problems.iter().map(|p| p.num_relevant()).sum::<usize>() as f64 / 500.0;
    assert!((mean - 4.0).abs() <= 0.2, "{mean}");
}
