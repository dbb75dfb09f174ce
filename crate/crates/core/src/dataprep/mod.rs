//! Classification CSVs to synthetic ranking queries: schema-driven loading,
//! row splits, z-scoring and query sampling.

mod schema;
mod table;
mod tasks;

pub use schema::Schema;
pub use table::{load_csv, split, standardize, Scaler, TabularDataset};
pub use tasks::{
    make_ranking_problems, read_task_set, write_task_set, Provenance, RankingTaskSet, DEFAULT_P_REL,
};
