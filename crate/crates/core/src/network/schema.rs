use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{EgmnError, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 16;

/// A categorical input. Index 0 of every vocabulary is reserved for
/// out-of-vocabulary values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalField {
    pub name: String,
    pub vocab_size: usize,
    pub embedding_dim: usize,
}

/// A real-valued input, already z-normalized by the data transform.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseField {
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub categorical: Vec<CategoricalField>,
    pub dense: Vec<DenseField>,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.categorical {
            if f.vocab_size == 0 || f.embedding_dim == 0 {
                return Err(EgmnError::Schema(format!(
                    "field {:?} needs vocab_size >= 1 and embedding_dim >= 1",
                    f.name
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(EgmnError::Schema(format!("duplicate field name {:?}", f.name)));
            }
        }
        for f in &self.dense {
            if !seen.insert(f.name.as_str()) {
                return Err(EgmnError::Schema(format!("duplicate field name {:?}", f.name)));
            }
        }
        if self.input_dim() == 0 {
            return Err(EgmnError::Schema("schema has no inputs".into()));
        }
        Ok(())
    }

    /// Width of the concatenated embedding + dense input vector.
    pub fn input_dim(&self) -> usize {
        self.categorical.iter().map(|f| f.embedding_dim).sum::<usize>() + self.dense.len()
    }

    /// Checks that `x` conforms to this schema.
    pub fn check(&self, x: &EncodedFeatures) -> Result<()> {
        if x.categorical.len() != self.categorical.len() || x.dense.len() != self.dense.len() {
            return Err(EgmnError::Shape(format!(
                "expected {} categorical / {} dense inputs, got {} / {}",
                self.categorical.len(),
                self.dense.len(),
                x.categorical.len(),
                x.dense.len()
            )));
        }
        for (f, &id) in self.categorical.iter().zip(&x.categorical) {
            if id >= f.vocab_size {
                return Err(EgmnError::Shape(format!(
                    "id {id} out of range for field {:?} (vocab {})",
                    f.name, f.vocab_size
                )));
            }
        }
        if let Some(v) = x.dense.iter().find(|v| !v.is_finite()) {
            return Err(EgmnError::numeric("input", format!("non-finite dense value {v}")));
        }
        Ok(())
    }
}

/// One encoded user-video interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedFeatures {
    pub categorical: Vec<usize>,
    pub dense: Vec<f64>,
}
