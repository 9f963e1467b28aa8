use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::FeatureSchema;
use crate::error::{EgmnError, Result};

/// Affine map `y = W x + b` with a row-major `out_dim x in_dim` matrix.
///
/// The same layout doubles as the container for gradients and optimizer
/// accumulators of a layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Linear {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weight[r * self.in_dim..(r + 1) * self.in_dim]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(self.bias[r], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }

    /// Accumulates `dy x^T` into `self` (as a gradient) and adds `W^T dy`
    /// into `dx`, where `weights` supplies `W`.
    pub(crate) fn backprop(&mut self, weights: &Linear, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.bias[r] += d;
            let g = &mut self.weight[r * self.in_dim..(r + 1) * self.in_dim];
            for (g, v) in g.iter_mut().zip(x) {
                *g += d * v;
            }
        }
        if let Some(dx) = dx {
            for (r, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (o, w) in dx.iter_mut().zip(weights.row(r)) {
                    *o += d * w;
                }
            }
        }
    }

    fn same_shape(&self, other: &Linear) -> bool {
        self.in_dim == other.in_dim && self.out_dim == other.out_dim
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }
}

/// The four parameter heads reading the shared hidden representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    /// 1 row: exponential rate.
    pub rate: Linear,
    /// K rows: Gaussian mean offsets above the exponential mean.
    pub mean: Linear,
    /// K rows: Gaussian variances.
    pub var: Linear,
    /// K+1 rows (K when the exponential is disabled): mixture logits.
    pub mix: Linear,
}

/// Network shape and output configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Widths of the ReLU backbone layers.
    pub hidden: Vec<usize>,
    /// Gaussian component count.
    pub k: usize,
    /// False for the "no exponential component" ablation: `w_0` is pinned
    /// to zero and the mixture softmax runs over the K Gaussians only.
    pub exponential: bool,
    /// Seconds per model time unit. Heads produce parameters in model units;
    /// the emitted distribution is rescaled to seconds.
    pub time_scale: f64,
}

impl Architecture {
    pub fn new(hidden: Vec<usize>, k: usize) -> Self {
        Architecture {
            hidden,
            k,
            exponential: true,
            time_scale: 1.0,
        }
    }

    pub fn mix_rows(&self) -> usize {
        if self.exponential {
            self.k + 1
        } else {
            self.k
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.exponential && self.k == 0 {
            return Err(EgmnError::Config(
                "disabling the exponential needs at least one Gaussian".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(EgmnError::Config("backbone widths must be >= 1".into()));
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(EgmnError::Config(format!("time_scale must be > 0, got {}", self.time_scale)));
        }
        Ok(())
    }
}

/// All trainable state of the parameter network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub schema: FeatureSchema,
    pub arch: Architecture,
    pub seed: u64,
    /// One row-major `vocab_size x embedding_dim` table per categorical field.
    pub embeddings: Vec<Vec<f64>>,
    pub backbone: Vec<Linear>,
    pub heads: Heads,
}

/// Addresses one scalar inside [`NetworkWeights`] / [`WeightGradients`].
///
/// Dense blocks are numbered backbone layers first, then the rate, mean,
/// variance and mixture heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamCoord {
    Embedding { field: usize, row: usize, col: usize },
    Weight { block: usize, index: usize },
    Bias { block: usize, index: usize },
}

/// Builds a freshly initialized network: embeddings ~ U(-0.01, 0.01), affine
/// weights Glorot-uniform, biases zero.
pub fn init_weights(schema: &FeatureSchema, arch: &Architecture, seed: u64) -> Result<NetworkWeights> {
    schema.validate()?;
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeddings = schema
        .categorical
        .iter()
        .map(|f| {
            (0..f.vocab_size * f.embedding_dim)
                .map(|_| rng.random_range(-0.01..0.01))
                .collect()
        })
        .collect();
    let mut backbone = Vec::with_capacity(arch.hidden.len());
    let mut width = schema.input_dim();
    for &h in &arch.hidden {
        backbone.push(Linear::glorot(width, h, &mut rng));
        width = h;
    }
    let heads = Heads {
        rate: Linear::glorot(width, 1, &mut rng),
        mean: Linear::glorot(width, arch.k, &mut rng),
        var: Linear::glorot(width, arch.k, &mut rng),
        mix: Linear::glorot(width, arch.mix_rows(), &mut rng),
    };
    Ok(NetworkWeights {
        schema: schema.clone(),
        arch: arch.clone(),
        seed,
        embeddings,
        backbone,
        heads,
    })
}

pub(crate) const HEAD_NAMES: [&str; 4] = ["head.rate", "head.mean", "head.var", "head.mix"];

impl NetworkWeights {
    /// Width of the shared hidden representation.
    pub fn hidden_dim(&self) -> usize {
        self.backbone
            .last()
            .map_or(self.schema.input_dim(), |l| l.out_dim)
    }

    pub fn blocks(&self) -> Vec<&Linear> {
        let h = &self.heads;
        self.backbone
            .iter()
            .chain([&h.rate, &h.mean, &h.var, &h.mix])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Linear> {
        let h = &mut self.heads;
        self.backbone
            .iter_mut()
            .chain([&mut h.rate, &mut h.mean, &mut h.var, &mut h.mix])
            .collect()
    }

    /// Human-readable name of a dense block index.
    pub fn block_name(&self, block: usize) -> String {
        let l = self.backbone.len();
        if block < l {
            format!("backbone.{block}")
        } else {
            HEAD_NAMES[block - l].to_string()
        }
    }

    /// Index of the rate head in [`Self::blocks`].
    pub fn rate_block(&self) -> usize {
        self.backbone.len()
    }

    pub fn get(&self, c: ParamCoord) -> f64 {
        match c {
            ParamCoord::Embedding { field, row, col } => {
                let d = self.schema.categorical[field].embedding_dim;
                self.embeddings[field][row * d + col]
            }
            ParamCoord::Weight { block, index } => self.blocks()[block].weight[index],
            ParamCoord::Bias { block, index } => self.blocks()[block].bias[index],
        }
    }

    pub fn get_mut(&mut self, c: ParamCoord) -> &mut f64 {
        match c {
            ParamCoord::Embedding { field, row, col } => {
                let d = self.schema.categorical[field].embedding_dim;
                &mut self.embeddings[field][row * d + col]
            }
            ParamCoord::Weight { block, index } => &mut self.blocks_mut().swap_remove(block).weight[index],
            ParamCoord::Bias { block, index } => &mut self.blocks_mut().swap_remove(block).bias[index],
        }
    }

    /// Every coordinate of the dense blocks (embeddings excluded).
    pub fn dense_coords(&self) -> Vec<ParamCoord> {
        let mut out = Vec::new();
        for (block, l) in self.blocks().into_iter().enumerate() {
            out.extend((0..l.weight.len()).map(|index| ParamCoord::Weight { block, index }));
            out.extend((0..l.bias.len()).map(|index| ParamCoord::Bias { block, index }));
        }
        out
    }

    /// Coordinates of one embedding row.
    pub fn embedding_row_coords(&self, field: usize, row: usize) -> Vec<ParamCoord> {
        (0..self.schema.categorical[field].embedding_dim)
            .map(|col| ParamCoord::Embedding { field, row, col })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.iter().flatten().all(|v| v.is_finite())
            && self.blocks().iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    /// Total number of scalars.
    pub fn num_parameters(&self) -> usize {
        self.embeddings.iter().map(Vec::len).sum::<usize>()
            + self
                .blocks()
                .iter()
                .map(|l| l.weight.len() + l.bias.len())
                .sum::<usize>()
    }
}

/// Gradient of a scalar loss with respect to [`NetworkWeights`].
///
/// Embedding gradients are sparse: only rows touched by the batch appear.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightGradients {
    pub embeddings: Vec<BTreeMap<usize, Vec<f64>>>,
    pub backbone: Vec<Linear>,
    pub heads: Heads,
}

impl WeightGradients {
    pub fn zeros_like(w: &NetworkWeights) -> Self {
        let z = |l: &Linear| Linear::zeros(l.in_dim, l.out_dim);
        WeightGradients {
            embeddings: vec![BTreeMap::new(); w.embeddings.len()],
            backbone: w.backbone.iter().map(z).collect(),
            heads: Heads {
                rate: z(&w.heads.rate),
                mean: z(&w.heads.mean),
                var: z(&w.heads.var),
                mix: z(&w.heads.mix),
            },
        }
    }

    pub fn blocks(&self) -> Vec<&Linear> {
        let h = &self.heads;
        self.backbone
            .iter()
            .chain([&h.rate, &h.mean, &h.var, &h.mix])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Linear> {
        let h = &mut self.heads;
        self.backbone
            .iter_mut()
            .chain([&mut h.rate, &mut h.mean, &mut h.var, &mut h.mix])
            .collect()
    }

    pub fn get(&self, c: ParamCoord) -> f64 {
        match c {
            ParamCoord::Embedding { field, row, col } => {
                self.embeddings[field].get(&row).map_or(0.0, |r| r[col])
            }
            ParamCoord::Weight { block, index } => self.blocks()[block].weight[index],
            ParamCoord::Bias { block, index } => self.blocks()[block].bias[index],
        }
    }

    /// Adds `g` to embedding row `row` of `field`.
    pub(crate) fn add_embedding_row(&mut self, field: usize, row: usize, g: &[f64]) {
        let entry = self.embeddings[field]
            .entry(row)
            .or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in entry.iter_mut().zip(g) {
            *a += b;
        }
    }

    /// `self += other`, summing in a fixed order.
    pub fn add_assign(&mut self, other: &WeightGradients) -> Result<()> {
        if self.embeddings.len() != other.embeddings.len()
            || !self
                .blocks()
                .iter()
                .zip(other.blocks())
                .all(|(a, b)| a.same_shape(b))
        {
            return Err(EgmnError::Consistency("gradient shapes differ".into()));
        }
        for (field, rows) in other.embeddings.iter().enumerate() {
            for (&row, g) in rows {
                self.add_embedding_row(field, row, g);
            }
        }
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for rows in &mut self.embeddings {
            for g in rows.values_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        for l in self.blocks_mut() {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }

    /// True when every entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.embeddings
            .iter()
            .flat_map(|m| m.values().flatten())
            .all(|v| *v == 0.0)
            && self.blocks().iter().all(|l| l.values().all(|v| *v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings
            .iter()
            .flat_map(|m| m.values().flatten())
            .all(|v| v.is_finite())
            && self.blocks().iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    /// Shapes match the given weights.
    pub fn matches(&self, w: &NetworkWeights) -> bool {
        self.embeddings.len() == w.embeddings.len()
            && self.backbone.len() == w.backbone.len()
            && self
                .blocks()
                .iter()
                .zip(w.blocks())
                .all(|(a, b)| a.same_shape(b))
            && self.embeddings.iter().enumerate().all(|(f, rows)| {
                let d = w.schema.categorical[f].embedding_dim;
                let v = w.schema.categorical[f].vocab_size;
                rows.iter().all(|(&r, g)| r < v && g.len() == d)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::schema::{CategoricalField, DenseField};

    pub(crate) fn small_schema() -> FeatureSchema {
        FeatureSchema {
            categorical: vec![
                CategoricalField { name: "user".into(), vocab_size: 5, embedding_dim: 3 },
                CategoricalField { name: "video".into(), vocab_size: 4, embedding_dim: 2 },
            ],
            dense: vec![DenseField { name: "duration".into() }],
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let arch = Architecture::new(vec![8, 4], 3);
        let a = init_weights(&small_schema(), &arch, 1).unwrap();
        let b = init_weights(&small_schema(), &arch, 1).unwrap();
        let c = init_weights(&small_schema(), &arch, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_ranges_and_zero_biases() {
        let arch = Architecture::new(vec![8, 4], 3);
        let w = init_weights(&small_schema(), &arch, 9).unwrap();
        assert!(w.embeddings.iter().flatten().all(|v| v.abs() < 0.01));
        for l in w.blocks() {
            let limit = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            assert!(l.weight.iter().all(|v| v.abs() <= limit));
            assert!(l.bias.iter().all(|b| *b == 0.0));
        }
        assert_eq!(w.backbone[0].in_dim, 6);
        assert_eq!(w.heads.mix.out_dim, 4);
        assert_eq!(w.heads.mean.out_dim, 3);
    }

    #[test]
    fn ablated_architectures() {
        let mut arch = Architecture::new(vec![4], 2);
        arch.exponential = false;
        let w = init_weights(&small_schema(), &arch, 0).unwrap();
        assert_eq!(w.heads.mix.out_dim, 2);
        arch.k = 0;
        assert!(init_weights(&small_schema(), &arch, 0).is_err());
    }

    #[test]
    fn coords_address_every_dense_scalar() {
        let arch = Architecture::new(vec![8, 4], 3);
        let mut w = init_weights(&small_schema(), &arch, 1).unwrap();
        let coords = w.dense_coords();
        let emb: usize = w.embeddings.iter().map(Vec::len).sum();
        assert_eq!(coords.len() + emb, w.num_parameters());
        let c = coords[17];
        *w.get_mut(c) = 123.0;
        assert_eq!(w.get(c), 123.0);
        let e = ParamCoord::Embedding { field: 1, row: 3, col: 1 };
        *w.get_mut(e) = -4.0;
        assert_eq!(w.embeddings[1][7], -4.0);
        assert_eq!(w.block_name(w.rate_block()), "head.rate");
    }

    #[test]
    fn gradient_accumulation() {
        let arch = Architecture::new(vec![4], 2);
        let w = init_weights(&small_schema(), &arch, 1).unwrap();
        let mut a = WeightGradients::zeros_like(&w);
        assert!(a.is_zero());
        let mut b = WeightGradients::zeros_like(&w);
        b.add_embedding_row(0, 2, &[1.0, 2.0, 3.0]);
        b.heads.rate.bias[0] = 0.5;
        a.add_assign(&b).unwrap();
        a.add_assign(&b).unwrap();
        a.scale(0.5);
        assert_eq!(a.embeddings[0][&2], vec![1.0, 2.0, 3.0]);
        assert_eq!(a.heads.rate.bias[0], 0.5);
        assert!(a.matches(&w));
    }
}
