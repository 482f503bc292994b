//! Synthetic heterogeneous-complexity dataset generation, anomaly injection
//! by random erasure, contamination control, patch extraction and portable
//! image I/O.

mod crops;
mod manifest;
mod pgm;

pub use crops::{random_crop, sliding_crops, PatchGrid};
pub use manifest::{load_dataset, save_dataset, SplitDescriptor};
pub use pgm::{read_pgm, write_pgm, PgmDepth};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Gray level written into erased blocks.
pub const ERASURE_FILL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

/// A grayscale image with its anomaly label, complexity-cluster id and,
/// for generated anomalies, the ground-truth erasure mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[H, W]`, values in [0, 1].
    pub pixels: Tensor,
    pub label: Label,
    pub cluster_id: usize,
    /// Row-major boolean grid matching `pixels`; `Some` iff ground truth for
    /// an injected anomaly is known.
    pub anomaly_mask: Option<Vec<bool>>,
}

impl LabeledImage {
    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// Training set with contamination ratio ρ plus a balanced test set built by
/// duplicating held-out normals and corrupting one copy of each.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

/// One sinusoidal component of a texture pattern: frequency in cycles per
/// image along the row axis, and its amplitude relative to the drawn
/// per-image amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternComponent {
    pub freq: f64,
    pub rel_amplitude: f64,
}

/// A candidate multi-frequency pattern, drawn per image with probability
/// proportional to `weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub weight: f64,
    pub components: Vec<PatternComponent>,
}

/// Complexity parameters of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub name: String,
    /// Samples generated for this cluster.
    pub count: usize,
    /// Mean pixel intensity and its per-image uniform jitter.
    pub base: f64,
    pub base_jitter: f64,
    /// Candidate patterns; empty means a near-constant cluster.
    #[serde(default)]
    pub patterns: Vec<Pattern>,
    /// Log-uniform range for the per-image pattern amplitude; (0, 0)
    /// disables the pattern entirely.
    #[serde(default)]
    pub amplitude: (f64, f64),
    /// Phase jitter in [0, 1]: component phases are drawn U(0, 2π·jitter).
    #[serde(default)]
    pub phase_jitter: f64,
    /// Pixel noise std as a fraction of the drawn amplitude.
    #[serde(default)]
    pub noise_scale: f64,
    /// Absolute pixel noise std, independent of the amplitude.
    #[serde(default)]
    pub noise_abs: f64,
}

/// Full synthetic-dataset recipe. Deterministic given `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub image_size: usize,
    pub seed: u64,
    pub clusters: Vec<ClusterSpec>,
    /// Synthesize three phase-shifted channels and store their luminance.
    /// The pipeline itself stays grayscale.
    #[serde(default)]
    pub rgb: bool,
}

impl SynthSpec {
    /// The two-cluster heterogeneous-complexity benchmark: a tight dark
    /// near-constant cluster and a bright multi-frequency striped cluster
    /// whose amplitude (and pixel noise) vary per image by ~6x.
    pub fn benchmark(seed: u64, flat_count: usize, texture_count: usize) -> Self {
        SynthSpec {
            image_size: 32,
            seed,
            clusters: vec![
                ClusterSpec {
                    name: "flat".into(),
                    count: flat_count,
                    base: 0.17,
                    base_jitter: 0.05,
                    patterns: Vec::new(),
                    amplitude: (0.0, 0.0),
                    phase_jitter: 0.0,
                    noise_scale: 0.0,
                    noise_abs: 0.01,
                },
                ClusterSpec {
                    name: "texture".into(),
                    count: texture_count,
                    base: 0.75,
                    base_jitter: 0.05,
                    patterns: vec![
                        Pattern {
                            weight: 0.4,
                            components: vec![
                                PatternComponent { freq: 2.0, rel_amplitude: 0.8 },
                                PatternComponent { freq: 5.0, rel_amplitude: 0.5 },
                            ],
                        },
                        Pattern {
                            weight: 0.3,
                            components: vec![
                                PatternComponent { freq: 3.0, rel_amplitude: 0.8 },
                                PatternComponent { freq: 7.0, rel_amplitude: 0.5 },
                            ],
                        },
                        Pattern {
                            weight: 0.2,
                            components: vec![
                                PatternComponent { freq: 2.0, rel_amplitude: 0.8 },
                                PatternComponent { freq: 7.0, rel_amplitude: 0.5 },
                            ],
                        },
                        Pattern {
                            weight: 0.1,
                            components: vec![
                                PatternComponent { freq: 3.0, rel_amplitude: 0.8 },
                                PatternComponent { freq: 5.0, rel_amplitude: 0.5 },
                            ],
                        },
                    ],
                    amplitude: (0.06, 0.35),
                    phase_jitter: 1.0,
                    noise_scale: 0.25,
                    noise_abs: 0.0,
                },
            ],
            rgb: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Config("synthetic spec has zero clusters".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        for c in &self.clusters {
            if c.amplitude.0 > c.amplitude.1 || c.amplitude.0 < 0.0 {
                return Err(Error::Config(format!(
                    "cluster {}: bad amplitude range {:?}",
                    c.name, c.amplitude
                )));
            }
            if !c.patterns.is_empty() && c.patterns.iter().all(|p| p.weight <= 0.0) {
                return Err(Error::Config(format!(
                    "cluster {}: pattern weights must be positive",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

/// Generates all clusters of a spec; every image is labeled normal.
/// Deterministic given the spec seed: each image draws from its own derived
/// sub-seed, so generation order cannot change the output.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<LabeledImage>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (cluster_id, cluster) in spec.clusters.iter().enumerate() {
        for index in 0..cluster.count {
            let seed = derive_seed(spec.seed, cluster_id as u64, index as u64);
            out.push(generate_one(spec, cluster, cluster_id, seed));
        }
    }
    Ok(out)
}

fn generate_one(
    spec: &SynthSpec,
    cluster: &ClusterSpec,
    cluster_id: usize,
    seed: u64,
) -> LabeledImage {
    let n = spec.image_size;
    let mut rng = rng_from_seed(seed);
    let channels = if spec.rgb { 3 } else { 1 };
    let mut pixels = vec![0.0f64; n * n];
    // Luminance weights; a single channel gets weight 1.
    let lum = if spec.rgb {
        vec![0.299, 0.587, 0.114]
    } else {
        vec![1.0]
    };
    for &lw in lum.iter().take(channels) {
        let base = if cluster.base_jitter > 0.0 {
            cluster.base + rng.gen_range(-cluster.base_jitter..=cluster.base_jitter)
        } else {
            cluster.base
        };
        let amplitude = if cluster.amplitude.1 > 0.0 {
            (rng.gen_range(cluster.amplitude.0.ln()..=cluster.amplitude.1.ln())).exp()
        } else {
            0.0
        };
        let pattern = pick_pattern(&cluster.patterns, &mut rng);
        let mut profile = vec![base; n];
        if let Some(p) = pattern {
            for comp in &p.components {
                let phase = if cluster.phase_jitter > 0.0 {
                    rng.gen_range(0.0..=cluster.phase_jitter) * std::f64::consts::TAU
                } else {
                    0.0
                };
                for (r, v) in profile.iter_mut().enumerate() {
                    *v += amplitude
                        * comp.rel_amplitude
                        * (std::f64::consts::TAU * comp.freq * r as f64 / n as f64 + phase).sin();
                }
            }
        }
        let noise_std = cluster.noise_scale * amplitude + cluster.noise_abs;
        for r in 0..n {
            for c in 0..n {
                let noise: f64 = if noise_std > 0.0 {
                    noise_std * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                pixels[r * n + c] += lw * (profile[r] + noise);
            }
        }
    }
    for v in pixels.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    LabeledImage {
        pixels: Tensor::from_vec(vec![n, n], pixels).unwrap(),
        label: Label::Normal,
        cluster_id,
        anomaly_mask: None,
    }
}

fn pick_pattern<'a>(patterns: &'a [Pattern], rng: &mut crate::rng::Rng) -> Option<&'a Pattern> {
    if patterns.is_empty() {
        return None;
    }
    let total: f64 = patterns.iter().map(|p| p.weight).sum();
    let mut target = rng.gen_range(0.0..total);
    for p in patterns {
        if target < p.weight {
            return Some(p);
        }
        target -= p.weight;
    }
    patterns.last()
}

/// Overwrites a uniformly random k×k block with mid-gray, marks the label
/// anomalous and records the exact mask.
pub fn inject_erasure(img: &LabeledImage, k: usize, seed: u64) -> Result<LabeledImage> {
    let (h, w) = (img.height(), img.width());
    if k > h || k > w {
        return Err(Error::Config(format!(
            "erasure size {k} exceeds image {h}x{w}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let r0 = rng.gen_range(0..=h - k);
    let c0 = rng.gen_range(0..=w - k);
    let mut pixels = img.pixels.clone();
    let mut mask = vec![false; h * w];
    for r in r0..r0 + k {
        for c in c0..c0 + k {
            pixels.data_mut()[r * w + c] = ERASURE_FILL;
            mask[r * w + c] = true;
        }
    }
    Ok(LabeledImage {
        pixels,
        label: Label::Anomalous,
        cluster_id: img.cluster_id,
        anomaly_mask: Some(mask),
    })
}

/// Splits a pool of normal images into a contaminated training set of
/// `n_train` images (fraction ⌊n·ρ⌋/n corrupted by k×k erasure) and a
/// balanced test set: every held-out normal appears once clean and once
/// with a fresh erasure.
pub fn make_split(
    normals: &[LabeledImage],
    n_train: usize,
    k: usize,
    rho_train: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(0.0..=0.5).contains(&rho_train) {
        return Err(Error::Config(format!(
            "contamination ratio {rho_train} outside [0, 0.5]"
        )));
    }
    if n_train >= normals.len() {
        return Err(Error::Data(format!(
            "need more than {n_train} normals to hold out a test set, got {}",
            normals.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..normals.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let n_corrupt = (n_train as f64 * rho_train).floor() as usize;
    let mut train = Vec::with_capacity(n_train);
    for (slot, &idx) in order[..n_train].iter().enumerate() {
        let img = &normals[idx];
        if slot < n_corrupt {
            train.push(inject_erasure(img, k, derive_seed(seed, 1, slot as u64))?);
        } else {
            train.push(img.clone());
        }
    }
    // Corrupted slots shouldn't be bunched at the front of the file order.
    train.shuffle(&mut rng);

    let mut test = Vec::with_capacity(2 * (normals.len() - n_train));
    for (slot, &idx) in order[n_train..].iter().enumerate() {
        let img = &normals[idx];
        test.push(img.clone());
        test.push(inject_erasure(img, k, derive_seed(seed, 2, slot as u64))?);
    }
    Ok(DatasetSplit { train, test })
}
