//! Encoded datasets and the train-fitted preprocessing transform.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::FeatureRecord;
use crate::error::{EgmnError, Result};
use crate::network::{CategoricalField, DenseField, EncodedFeatures, FeatureSchema, DEFAULT_EMBEDDING_DIM};

pub const USER_FIELD: &str = "user";
pub const VIDEO_FIELD: &str = "video";
pub const DURATION_FIELD: &str = "duration";
pub const TRANSFORM_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Labels above this percentile of the training labels are clipped.
    pub clip_percentile: f64,
    pub embedding_dim: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            clip_percentile: 99.9,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

/// One encoded training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: EncodedFeatures,
    /// Watch time after clipping.
    pub label: f64,
}

/// Records plus, once transformed, their encoded examples.
///
/// A dataset is either raw or transformed; a transform is applied exactly
/// once.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<FeatureRecord>,
    examples: Vec<Example>,
    transformed: bool,
}

impl Dataset {
    pub fn from_records(records: Vec<FeatureRecord>) -> Self {
        Dataset {
            records,
            examples: Vec::new(),
            transformed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_transformed(&self) -> bool {
        self.transformed
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    /// Encoded examples; empty until transformed.
    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// Clipped labels of a transformed dataset.
    pub fn labels(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub(crate) fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            examples: if self.transformed {
                idx.iter().map(|&i| self.examples[i].clone()).collect()
            } else {
                Vec::new()
            },
            transformed: self.transformed,
        }
    }
}

/// Frozen vocabulary of one categorical field. Index 0 is out-of-vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub field: String,
    pub values: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn new(field: String, values: Vec<String>) -> Self {
        let index = values.iter().enumerate().map(|(i, v)| (v.clone(), i + 1)).collect();
        Vocabulary { field, values, index }
    }

    fn rebuild(&mut self) {
        self.index = self.values.iter().enumerate().map(|(i, v)| (v.clone(), i + 1)).collect();
    }

    pub fn encode(&self, value: &str) -> usize {
        self.index.get(value).copied().unwrap_or(0)
    }

    /// Size including the out-of-vocabulary slot.
    pub fn size(&self) -> usize {
        self.values.len() + 1
    }
}

/// Mean/standard deviation of a dense feature on the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseStats {
    pub field: String,
    pub mean: f64,
    pub std: f64,
}

impl DenseStats {
    pub fn normalize(&self, v: f64) -> f64 {
        if self.std > 0.0 {
            (v - self.mean) / self.std
        } else {
            0.0
        }
    }
}

/// Preprocessing state fitted on training records only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub version: u32,
    pub clip_percentile: f64,
    /// Upper label bound; labels are clipped to `[0, label_clip]`.
    pub label_clip: f64,
    /// Mean of the clipped training labels.
    pub label_mean: f64,
    pub embedding_dim: usize,
    /// user, video, then context fields in name order.
    pub categorical: Vec<Vocabulary>,
    /// duration, then extra dense fields in name order.
    pub dense: Vec<DenseStats>,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, pct)
}

pub(crate) fn percentile_sorted(v: &[f64], pct: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Transform {
    pub fn fit(train: &[FeatureRecord], config: &PreprocessConfig) -> Result<Transform> {
        if train.is_empty() {
            return Err(EgmnError::Data("cannot fit preprocessing on zero records".into()));
        }
        if config.embedding_dim == 0 {
            return Err(EgmnError::Config("embedding_dim must be >= 1".into()));
        }
        if !(config.clip_percentile > 0.0 && config.clip_percentile <= 100.0) {
            return Err(EgmnError::Config(format!(
                "clip percentile {} outside (0, 100]",
                config.clip_percentile
            )));
        }
        let labels: Vec<f64> = train.iter().map(|r| r.watch_time.max(0.0)).collect();
        let label_clip = percentile(&labels, config.clip_percentile);
        let label_mean = labels.iter().map(|l| l.min(label_clip)).sum::<f64>() / labels.len() as f64;

        let vocab = |field: &str, get: &dyn Fn(&FeatureRecord) -> Option<&str>| {
            let values: BTreeSet<&str> = train.iter().filter_map(get).collect();
            Vocabulary::new(field.to_string(), values.into_iter().map(str::to_string).collect())
        };
        let mut categorical = vec![
            vocab(USER_FIELD, &|r| Some(r.user_id.as_str())),
            vocab(VIDEO_FIELD, &|r| Some(r.video_id.as_str())),
        ];
        let context_keys: BTreeSet<&String> = train.iter().flat_map(|r| r.context.keys()).collect();
        for key in context_keys {
            categorical.push(vocab(key, &|r| r.context.get(key).map(String::as_str)));
        }

        let stats = |field: &str, xs: Vec<f64>| {
            let (mean, std) = mean_std(xs.iter().copied());
            if std == 0.0 {
                log::warn!("dense feature {field:?} has zero variance; it is normalized to 0");
            }
            DenseStats {
                field: field.to_string(),
                mean,
                std,
            }
        };
        let mut dense = vec![stats(DURATION_FIELD, train.iter().map(|r| r.duration).collect())];
        let dense_keys: BTreeSet<&String> = train.iter().flat_map(|r| r.dense.keys()).collect();
        for key in dense_keys {
            let xs = train.iter().map(|r| r.dense.get(key).copied().unwrap_or(0.0)).collect();
            dense.push(stats(key, xs));
        }
        Ok(Transform {
            version: TRANSFORM_VERSION,
            clip_percentile: config.clip_percentile,
            label_clip,
            label_mean,
            embedding_dim: config.embedding_dim,
            categorical,
            dense,
        })
    }

    /// Network input schema implied by this transform.
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            categorical: self
                .categorical
                .iter()
                .map(|v| CategoricalField {
                    name: v.field.clone(),
                    vocab_size: v.size(),
                    embedding_dim: self.embedding_dim,
                })
                .collect(),
            dense: self.dense.iter().map(|d| DenseField { name: d.field.clone() }).collect(),
        }
    }

    pub fn clip_label(&self, t: f64) -> f64 {
        t.clamp(0.0, self.label_clip)
    }

    /// Encodes one record; unknown categorical values map to index 0.
    pub fn encode(&self, r: &FeatureRecord) -> EncodedFeatures {
        let categorical = self
            .categorical
            .iter()
            .map(|v| match v.field.as_str() {
                USER_FIELD => v.encode(&r.user_id),
                VIDEO_FIELD => v.encode(&r.video_id),
                key => r.context.get(key).map_or(0, |x| v.encode(x)),
            })
            .collect();
        let dense = self
            .dense
            .iter()
            .map(|s| {
                let raw = if s.field == DURATION_FIELD {
                    r.duration
                } else {
                    r.dense.get(&s.field).copied().unwrap_or(s.mean)
                };
                s.normalize(raw)
            })
            .collect();
        EncodedFeatures { categorical, dense }
    }

    /// Encodes a raw dataset. Applying to an already transformed dataset is
    /// an error.
    pub fn apply(&self, ds: Dataset) -> Result<Dataset> {
        if ds.transformed {
            return Err(EgmnError::Consistency("dataset is already transformed".into()));
        }
        let examples = ds
            .records
            .iter()
            .map(|r| Example {
                features: self.encode(r),
                label: self.clip_label(r.watch_time),
            })
            .collect();
        Ok(Dataset {
            records: ds.records,
            examples,
            transformed: true,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Transform> {
        let mut t: Transform = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if t.version != TRANSFORM_VERSION {
            return Err(EgmnError::Data(format!("unsupported transform version {}", t.version)));
        }
        t.categorical.iter_mut().for_each(Vocabulary::rebuild);
        Ok(t)
    }

    /// Per-field vocabulary sizes, for diagnostics.
    pub fn vocab_sizes(&self) -> BTreeMap<String, usize> {
        self.categorical.iter().map(|v| (v.field.clone(), v.size())).collect()
    }
}

/// Fits a transform on all `records` and applies it.
pub fn preprocess(records: Vec<FeatureRecord>, config: &PreprocessConfig) -> Result<(Transform, Dataset)> {
    let t = Transform::fit(&records, config)?;
    let ds = t.apply(Dataset::from_records(records))?;
    Ok((t, ds))
}
