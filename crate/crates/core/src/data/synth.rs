//! Synthetic interaction world with known per-pair watch-time distributions.
//!
//! Users differ in pickiness (weight and speed of quick skips) and in how
//! much they favour early versus late peaks. Videos have a duration and one,
//! two or three Gaussian peaks: a completion peak near the end, optionally an
//! early drop-off peak and a replay peak past the end.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::{Distribution, Uniform, weighted::WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{ColumnMapping, FeatureRecord};
use crate::dist::{ComponentSampler, EgmParams};
use crate::error::{EgmnError, Result};

pub const ORACLE_FORMAT: &str = "egmn-oracle";
pub const ORACLE_VERSION: u32 = 1;
pub const HOUR_FIELD: &str = "hour";

/// Generator settings. Ranges are `[low, high]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorldConfig {
    pub users: usize,
    pub videos: usize,
    pub seed: u64,
    /// Exponential weight of each user, drawn uniformly.
    pub pickiness: [f64; 2],
    /// Mean quick-skip time in seconds; the pickiest user gets the low end.
    pub quick_skip_mean: [f64; 2],
    /// Video length in seconds.
    pub duration: [f64; 2],
    /// Probabilities of unimodal, bimodal and trimodal videos.
    pub modality_mix: [f64; 3],
    /// Peak standard deviation as a fraction of the duration.
    pub peak_width: f64,
    /// Spread of the per-user preference for late peaks.
    pub affinity_scale: f64,
    /// Number of hour-of-day context values; 0 omits the column.
    pub hours: usize,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            users: 50,
            videos: 50,
            seed: 7,
            pickiness: [0.1, 0.7],
            quick_skip_mean: [0.8, 3.0],
            duration: [10.0, 60.0],
            modality_mix: [0.3, 0.4, 0.3],
            peak_width: 0.08,
            affinity_scale: 1.0,
            hours: 24,
        }
    }
}

impl SyntheticWorldConfig {
    /// Mostly picky users; well over half of all watch times fall below 4 s.
    pub fn skew_heavy() -> Self {
        SyntheticWorldConfig {
            pickiness: [0.55, 0.9],
            ..Default::default()
        }
    }

    /// Every video has exactly an early and a completion peak.
    pub fn bimodal() -> Self {
        SyntheticWorldConfig {
            modality_mix: [0.0, 1.0, 0.0],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EgmnError::Config(m));
        if self.users == 0 || self.videos == 0 {
            return bad("synthetic world needs at least one user and one video".into());
        }
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !range_ok(self.pickiness) || self.pickiness[0] < 0.0 || self.pickiness[1] >= 1.0 {
            return bad(format!("pickiness range {:?} must lie in [0, 1)", self.pickiness));
        }
        if !range_ok(self.quick_skip_mean) || self.quick_skip_mean[0] <= 0.0 {
            return bad(format!("quick-skip range {:?} must be positive", self.quick_skip_mean));
        }
        if !range_ok(self.duration) || self.duration[0] <= 0.0 {
            return bad(format!("duration range {:?} must be positive", self.duration));
        }
        if self.modality_mix.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || self.modality_mix.iter().sum::<f64>() <= 0.0
        {
            return bad(format!("invalid modality mix {:?}", self.modality_mix));
        }
        if !(self.peak_width > 0.0 && self.peak_width.is_finite()) {
            return bad(format!("peak width {} must be positive", self.peak_width));
        }
        if !(self.affinity_scale >= 0.0 && self.affinity_scale.is_finite()) {
            return bad(format!("affinity scale {} must be non-negative", self.affinity_scale));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Unimodal,
    Bimodal,
    Trimodal,
}

impl Modality {
    /// Peak positions as fractions of the duration, with base weights.
    fn peaks(self) -> &'static [(f64, f64)] {
        match self {
            Modality::Unimodal => &[(0.95, 1.0)],
            Modality::Bimodal => &[(0.45, 0.5), (0.95, 0.5)],
            Modality::Trimodal => &[(0.4, 0.3), (0.95, 0.5), (1.9, 0.2)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub pickiness: f64,
    pub quick_skip_mean: f64,
    pub affinity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoProfile {
    pub duration: f64,
    pub modality: Modality,
}

/// Ground truth of a synthetic world.
#[derive(Clone, Debug, PartialEq)]
pub struct Oracle {
    pub config: SyntheticWorldConfig,
    pub users: Vec<UserProfile>,
    pub videos: Vec<VideoProfile>,
}

pub fn user_id(i: usize) -> String {
    format!("u{i}")
}

pub fn video_id(j: usize) -> String {
    format!("v{j}")
}

fn parse_id(id: &str, prefix: char, n: usize) -> Result<usize> {
    id.strip_prefix(prefix)
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&i| i < n && format!("{prefix}{i}") == id)
        .ok_or_else(|| EgmnError::Domain(format!("id {id:?} is not part of the synthetic world")))
}

/// Builds the world: user and video profiles drawn from `config.seed`.
pub fn build_world(config: &SyntheticWorldConfig) -> Result<Oracle> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let span = |r: [f64; 2]| r[1] - r[0];
    let users = (0..config.users)
        .map(|_| {
            let u: f64 = rng.random();
            let pickiness = config.pickiness[0] + u * span(config.pickiness);
            // pickier users skip faster
            let quick_skip_mean = config.quick_skip_mean[1] - u * span(config.quick_skip_mean);
            let affinity = config.affinity_scale * (2.0 * rng.random::<f64>() - 1.0);
            UserProfile {
                pickiness,
                quick_skip_mean,
                affinity,
            }
        })
        .collect();
    let modality = WeightedIndex::new(config.modality_mix).map_err(|e| EgmnError::Config(e.to_string()))?;
    let videos = (0..config.videos)
        .map(|_| VideoProfile {
            duration: config.duration[0] + rng.random::<f64>() * span(config.duration),
            modality: [Modality::Unimodal, Modality::Bimodal, Modality::Trimodal][modality.sample(&mut rng)],
        })
        .collect();
    Ok(Oracle {
        config: config.clone(),
        users,
        videos,
    })
}

impl Oracle {
    /// True distribution for a user/video index pair.
    pub fn params_at(&self, user: usize, video: usize) -> EgmParams {
        let u = &self.users[user];
        let v = &self.videos[video];
        let peaks = v.modality.peaks();
        let shift: Vec<f64> = peaks.iter().map(|&(pos, w)| w * (u.affinity * (pos - 0.95)).exp()).collect();
        let total: f64 = shift.iter().sum();
        let mut means = Vec::with_capacity(peaks.len());
        let mut variances = Vec::with_capacity(peaks.len());
        let mut weights = vec![u.pickiness];
        for (&(pos, _), s) in peaks.iter().zip(&shift) {
            let mu = pos * v.duration;
            // at most 3.5 sd from zero keeps the truncated mass below 0.03%
            let sd = (self.config.peak_width * v.duration).min(mu / 3.5);
            means.push(mu);
            variances.push(sd * sd);
            weights.push((1.0 - u.pickiness) * s / total);
        }
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        EgmParams::new(1.0 / u.quick_skip_mean, means, variances, weights).expect("oracle parameters are valid")
    }

    /// True distribution for a pair of string ids.
    pub fn params(&self, user: &str, video: &str) -> Result<EgmParams> {
        let i = parse_id(user, 'u', self.users.len())?;
        let j = parse_id(video, 'v', self.videos.len())?;
        Ok(self.params_at(i, j))
    }

    /// Draws `n` interactions with uniformly chosen pairs.
    ///
    /// Negative Gaussian draws are redrawn from the same pair, never clamped.
    pub fn generate(&self, n: usize) -> Vec<FeatureRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        let pick_user = Uniform::new(0, self.users.len()).expect("users >= 1");
        let pick_video = Uniform::new(0, self.videos.len()).expect("videos >= 1");
        let mut samplers: BTreeMap<(usize, usize), ComponentSampler> = BTreeMap::new();
        (0..n)
            .map(|idx| {
                let (i, j) = (pick_user.sample(&mut rng), pick_video.sample(&mut rng));
                let sampler = samplers.entry((i, j)).or_insert_with(|| ComponentSampler::new(&self.params_at(i, j)));
                let watch_time = loop {
                    let t = sampler.draw(&mut rng);
                    if t >= 0.0 {
                        break t;
                    }
                };
                let mut context = BTreeMap::new();
                if self.config.hours > 0 {
                    context.insert(HOUR_FIELD.to_string(), format!("h{}", rng.random_range(0..self.config.hours)));
                }
                FeatureRecord {
                    user_id: user_id(i),
                    video_id: video_id(j),
                    duration: self.videos[j].duration,
                    context,
                    dense: BTreeMap::new(),
                    timestamp: Some(idx as i64),
                    watch_time,
                }
            })
            .collect()
    }

    /// Column layout of generated records.
    pub fn mapping(&self) -> ColumnMapping {
        ColumnMapping {
            timestamp: Some("timestamp".into()),
            context: if self.config.hours > 0 {
                vec![HOUR_FIELD.into()]
            } else {
                vec![]
            },
            ..Default::default()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let pairs = (0..self.users.len())
            .flat_map(|i| (0..self.videos.len()).map(move |j| (i, j)))
            .map(|(i, j)| {
                let p = self.params_at(i, j);
                OraclePair {
                    user: user_id(i),
                    video: video_id(j),
                    rate: p.rate(),
                    means: p.means().to_vec(),
                    variances: p.variances().to_vec(),
                    weights: p.weights().to_vec(),
                }
            })
            .collect();
        let file = OracleFile {
            format: ORACLE_FORMAT.into(),
            version: ORACLE_VERSION,
            config: self.config.clone(),
            users: self.users.clone(),
            videos: self.videos.clone(),
            pairs,
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    /// Reads a sidecar and checks its stored pairs against the profiles.
    pub fn load(path: &Path) -> Result<Oracle> {
        let file: OracleFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.format != ORACLE_FORMAT || file.version != ORACLE_VERSION {
            return Err(EgmnError::Data(format!(
                "not an oracle file (format {:?}, version {})",
                file.format, file.version
            )));
        }
        file.config.validate()?;
        let oracle = Oracle {
            config: file.config,
            users: file.users,
            videos: file.videos,
        };
        for pair in &file.pairs {
            let p = oracle.params(&pair.user, &pair.video)?;
            if p.rate() != pair.rate || p.means() != pair.means || p.variances() != pair.variances || p.weights() != pair.weights {
                return Err(EgmnError::Consistency(format!(
                    "stored parameters of ({}, {}) disagree with the world profiles",
                    pair.user, pair.video
                )));
            }
        }
        Ok(oracle)
    }
}

#[derive(Serialize, Deserialize)]
struct OraclePair {
    user: String,
    video: String,
    rate: f64,
    means: Vec<f64>,
    variances: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OracleFile {
    format: String,
    version: u32,
    config: SyntheticWorldConfig,
    users: Vec<UserProfile>,
    videos: Vec<VideoProfile>,
    pairs: Vec<OraclePair>,
}

/// Builds a world and draws `n_samples` interactions from it.
pub fn generate_synthetic(config: &SyntheticWorldConfig, n_samples: usize) -> Result<(Vec<FeatureRecord>, Oracle)> {
    let oracle = build_world(config)?;
    Ok((oracle.generate(n_samples), oracle))
}

/// Convenience wrapper over [`Oracle::params`].
pub fn oracle_params(oracle: &Oracle, user: &str, video: &str) -> Result<EgmParams> {
    oracle.params(user, video)
}
