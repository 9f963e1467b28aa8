//! TOML dataset manifest: column mapping, preprocessing and split settings.
//!
//! ```toml
//! max_row_errors = 100
//!
//! [columns]
//! user = "user_id"
//! video = "video_id"
//! duration = "duration"
//! watch_time = "watch_time"
//! timestamp = "ts"
//! context = ["hour"]
//!
//! [preprocess]
//! clip_percentile = 99.9
//!
//! [split]
//! mode = "temporal"
//! train_fraction = 0.8
//! seed = 1
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::PreprocessConfig;
use super::record::ColumnMapping;
use super::split::SplitMode;
use crate::error::{EgmnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            mode: SplitMode::Random,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetManifest {
    pub columns: ColumnMapping,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub max_row_errors: usize,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            columns: ColumnMapping::default(),
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            max_row_errors: 100,
        }
    }
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| EgmnError::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let m = DatasetManifest::parse(
            r#"
            max_row_errors = 5
            [columns]
            video = "item"
            timestamp = "ts"
            context = ["hour"]
            [split]
            mode = "temporal"
            "#,
        )
        .unwrap();
        assert_eq!(m.columns.video, "item");
        assert_eq!(m.columns.user, "user_id");
        assert_eq!(m.columns.timestamp.as_deref(), Some("ts"));
        assert_eq!(m.split.mode, SplitMode::Temporal);
        assert_eq!(m.split.train_fraction, 0.8);
        assert_eq!(m.preprocess.clip_percentile, 99.9);
        assert_eq!(m.max_row_errors, 5);
    }

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let m = DatasetManifest::default();
        assert_eq!(DatasetManifest::parse(&m.to_toml()).unwrap(), m);
        assert!(matches!(DatasetManifest::parse("bogus = 1"), Err(EgmnError::Config(_))));
    }
}
