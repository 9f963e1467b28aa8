//! Interaction logs: CSV I/O, preprocessing, splitting and synthetic worlds.

mod dataset;
mod manifest;
mod record;
mod split;
pub mod synth;

pub use dataset::{
    percentile, preprocess, Dataset, DenseStats, Example, PreprocessConfig, Transform, Vocabulary, DURATION_FIELD,
    USER_FIELD, VIDEO_FIELD,
};
pub use manifest::{DatasetManifest, SplitConfig};
pub use record::{load_csv, read_csv, write_csv, write_records, ColumnMapping, FeatureRecord, LoadedCsv, RowError};
pub use split::{split, SplitMode};
pub use synth::{generate_synthetic, oracle_params, Oracle, SyntheticWorldConfig};
