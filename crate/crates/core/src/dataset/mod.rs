//! Loading, cleaning, balancing, encoding and splitting of the packet CSVs.

mod cache;
mod encoded;
mod preprocess;
mod schema;
mod table;
mod vocab;

pub use cache::{load_cache, save_cache, sidecar_path, CacheMeta};
pub use encoded::{encode, split, split_indices, stratified_indices, Batch, EncodedDataset, FeatureSet, SplitSpec};
pub use preprocess::{
    apply_normalization, balance_files, fit_normalization, impute_missing, plan_balance, BalancePlan, ColumnMean,
    ColumnScale, ImputationStats, NormalizationStats,
};
pub use schema::{ColumnKind, ColumnSpec, Schema, DEFAULT_SCHEMA};
pub use table::{load_csv, CategoricalColumn, ColumnData, DatasetTable, UNK_TOKEN};
pub use vocab::{build_vocabulary, ColumnVocab, Vocabulary};
