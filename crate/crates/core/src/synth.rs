//! Synthetic data with planted structure, used as ground truth for metric
//! ranking, hierarchy recovery and subspace separability checks.
//!
//! Randomness comes from ChaCha8 streams keyed by the seed and a per-item
//! stream id (usually the channel index), so generating items in a
//! different order or in parallel yields the same values.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{CoarseMapping, ConfusionMatrix, MappingMethod};
use crate::tensor_io::{ActivationSet, LogitSet, Manifest, RunBundle};

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Signal,
    Noise,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    /// Gap between consecutive class means, in units of `noise_std`.
    pub separation: f64,
    pub noise_std: f64,
}

impl ChannelSpec {
    pub fn signal(separation: f64) -> Self {
        Self {
            kind: ChannelKind::Signal,
            separation,
            noise_std: 1.0,
        }
    }

    pub fn noise() -> Self {
        Self {
            kind: ChannelKind::Noise,
            separation: 0.0,
            noise_std: 1.0,
        }
    }

    pub fn constant() -> Self {
        Self {
            kind: ChannelKind::Constant,
            separation: 0.0,
            noise_std: 1.0,
        }
    }

    pub fn with_std(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    fn validate(&self, channel: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("channel {channel}: {msg}")));
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return bad("separation must be finite and non-negative");
        }
        match self.kind {
            ChannelKind::Signal if self.separation <= 0.0 => bad("signal channels need separation > 0"),
            ChannelKind::Signal | ChannelKind::Noise if !(self.noise_std.is_finite() && self.noise_std > 0.0) => {
                bad("noise_std must be positive")
            }
            _ => Ok(()),
        }
    }
}

/// Class-major labels: `n_per_class` samples of class 0, then class 1, ...
pub fn class_major_labels(n_per_class: usize, num_classes: usize) -> Vec<usize> {
    (0..num_classes * n_per_class).map(|i| i / n_per_class).collect()
}

/// Fills one channel given the per-sample class mean (in units of the
/// channel's std) for every sample.
#[allow(clippy::needless_range_loop)]
fn fill_channel(
    data: &mut [f64],
    spec: &ChannelSpec,
    class_of: &[usize],
    shape: [usize; 4],
    channel: usize,
    rng: &mut ChaCha8Rng,
) {
    let [n, c, h, w] = shape;
    let hw = h * w;
    for i in 0..n {
        let base = (i * c + channel) * hw;
        let mean = match spec.kind {
            ChannelKind::Signal => class_of[i] as f64 * spec.separation * spec.noise_std,
            _ => 0.0,
        };
        for v in &mut data[base..base + hw] {
            *v = match spec.kind {
                ChannelKind::Constant => 0.0,
                _ => mean + spec.noise_std * Distribution::<f64>::sample(&StandardNormal, rng),
            };
        }
    }
}

/// Channel `k` of class `c` draws from `N(c·sep·std, std²)` for signal
/// channels and `N(0, std²)` for noise channels; constant channels are 0.
/// Maps are `hw × hw`.
pub fn gaussian_channels(
    specs: &[ChannelSpec],
    n_per_class: usize,
    num_classes: usize,
    hw: usize,
    seed: u64,
) -> Result<ActivationSet> {
    if n_per_class < 2 || num_classes < 2 || hw == 0 || specs.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "need n_per_class ≥ 2, classes ≥ 2, hw ≥ 1 and ≥ 1 channel \
             (got {n_per_class}, {num_classes}, {hw}, {})",
            specs.len()
        )));
    }
    for (k, s) in specs.iter().enumerate() {
        s.validate(k)?;
    }
    let labels = class_major_labels(n_per_class, num_classes);
    let shape = [labels.len(), specs.len(), hw, hw];
    let mut data = vec![0.0; shape.iter().product()];
    for (k, spec) in specs.iter().enumerate() {
        fill_channel(&mut data, spec, &labels, shape, k, &mut stream(seed, k as u64));
    }
    ActivationSet::new(data, shape, labels, num_classes)
}

/// A confusion matrix with planted block structure and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfusion {
    pub matrix: ConfusionMatrix,
    /// Block id of every fine class.
    pub blocks: Vec<usize>,
}

/// `intra` counts between classes of the same block (diagonal included),
/// `inter` across blocks. The seed shuffles which fine ids land in which
/// block, so recovery cannot lean on contiguous ids.
pub fn block_confusion(block_sizes: &[usize], intra: u64, inter: u64, seed: u64) -> Result<BlockConfusion> {
    if intra <= inter {
        return Err(Error::InvalidSpec(format!("need intra > inter, got {intra} ≤ {inter}")));
    }
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(Error::InvalidSpec(format!(
            "block sizes must be positive, got {block_sizes:?}"
        )));
    }
    let mut planted: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
        .collect();
    planted.shuffle(&mut stream(seed, 0));
    let f = planted.len();
    let m = DMatrix::from_fn(f, f, |i, j| if planted[i] == planted[j] { intra } else { inter });
    Ok(BlockConfusion {
        matrix: ConfusionMatrix::new(m)?,
        blocks: planted,
    })
}

/// Class centroids drawn around well-separated group centers.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCentroids {
    pub centroids: DMatrix<f64>,
    pub groups: Vec<usize>,
}

/// Group `g` is centered at `separation · e_g` (so group centers are at
/// least `separation` apart); each class centroid adds unit-variance noise
/// per coordinate. Class order is shuffled by the seed.
pub fn planted_centroids(group_sizes: &[usize], dim: usize, separation: f64, seed: u64) -> Result<PlantedCentroids> {
    if group_sizes.is_empty() || group_sizes.contains(&0) {
        return Err(Error::InvalidSpec(format!(
            "group sizes must be positive, got {group_sizes:?}"
        )));
    }
    if dim < group_sizes.len() {
        return Err(Error::InvalidSpec(format!(
            "dimension {dim} cannot hold {} orthogonal group centers",
            group_sizes.len()
        )));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mut groups: Vec<usize> = group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
        .collect();
    groups.shuffle(&mut stream(seed, 0));
    let mut rng = stream(seed, 1);
    let mut centroids = DMatrix::<f64>::zeros(groups.len(), dim);
    for (f, &g) in groups.iter().enumerate() {
        for j in 0..dim {
            let center = if j == g { separation } else { 0.0 };
            centroids[(f, j)] = center + Distribution::<f64>::sample(&StandardNormal, &mut rng);
        }
    }
    Ok(PlantedCentroids { centroids, groups })
}

/// A labeled sample matrix whose class signal hides under larger nuisance
/// variance.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceData {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    /// Distance of each class mean from the origin along its own signal axis.
    pub separation: f64,
    /// Number of high-variance, label-independent directions.
    pub nuisance_dims: usize,
    /// Variance of the nuisance directions relative to the unit
    /// within-class variance of the signal directions.
    pub nuisance_ratio: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            dim: 32,
            n_per_class: 50,
            separation: 3.0,
            nuisance_dims: 8,
            nuisance_ratio: 10.0,
        }
    }
}

/// Class `c` has mean `separation · e_c` on the first Y axes; the next
/// `nuisance_dims` axes carry label-free noise with variance
/// `nuisance_ratio`; the remaining axes unit noise. The whole cloud is then
/// rotated by a seeded random orthogonal matrix.
pub fn nuisance_classes(cfg: &NuisanceConfig, seed: u64) -> Result<NuisanceData> {
    let y = cfg.num_classes;
    if y < 2 || cfg.n_per_class < 2 || cfg.dim < y + cfg.nuisance_dims {
        return Err(Error::InvalidSpec(format!(
            "need ≥ 2 classes, ≥ 2 samples per class and dim ≥ classes + nuisance dims ({cfg:?})"
        )));
    }
    if !(cfg.nuisance_ratio > 0.0 && cfg.nuisance_ratio.is_finite() && cfg.separation.is_finite()) {
        return Err(Error::InvalidSpec(format!("bad nuisance parameters {cfg:?}")));
    }
    let labels = class_major_labels(cfg.n_per_class, y);
    let n = labels.len();
    let mut rng = stream(seed, 0);
    let nuisance_std = cfg.nuisance_ratio.sqrt();
    let z = DMatrix::from_fn(n, cfg.dim, |i, j| {
        let e: f64 = StandardNormal.sample(&mut rng);
        if j < y {
            (if labels[i] == j { cfg.separation } else { 0.0 }) + e
        } else if j < y + cfg.nuisance_dims {
            nuisance_std * e
        } else {
            e
        }
    });
    let mut rot_rng = stream(seed, 1);
    let g = DMatrix::from_fn(cfg.dim, cfg.dim, |_, _| StandardNormal.sample(&mut rot_rng));
    let q = g.qr().q();
    Ok(NuisanceData {
        features: z * q.transpose(),
        labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRunConfig {
    pub num_layers: usize,
    pub fine_classes: usize,
    pub coarse_groups: usize,
    pub n_per_class: usize,
    pub channels: usize,
    pub hw: usize,
    pub seed: u64,
}

impl Default for SynthRunConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            fine_classes: 8,
            coarse_groups: 4,
            n_per_class: 20,
            channels: 8,
            hw: 2,
            seed: 0,
        }
    }
}

/// What `synth_run` planted.
#[derive(Debug, Clone)]
pub struct SynthRun {
    pub bundle: RunBundle,
    pub groups: CoarseMapping,
}

/// Writes a multi-layer run in the bundle layout.
///
/// Fine classes are split into contiguous, equal-sized coarse groups.
/// Layers in the first half carry signal about the coarse group, the rest
/// about the fine class; even channels are signal, odd channels noise.
/// Logits favor the true class and, less strongly, its group, so the
/// confusion matrix has the group structure.
pub fn synth_run(dir: &Path, cfg: &SynthRunConfig) -> Result<SynthRun> {
    let f = cfg.fine_classes;
    let g = cfg.coarse_groups;
    if cfg.num_layers < 2 || g < 2 || f <= g || !f.is_multiple_of(g) || cfg.channels < 2 {
        return Err(Error::InvalidSpec(format!(
            "need ≥ 2 layers, ≥ 2 channels and fine classes a larger multiple of the group count ({cfg:?})"
        )));
    }
    let per_group = f / g;
    let map: Vec<usize> = (0..f).map(|c| c / per_group).collect();
    let groups = CoarseMapping::new(map.clone(), g, MappingMethod::GroundTruth, cfg.seed)?;
    let labels = class_major_labels(cfg.n_per_class, f);
    let n = labels.len();

    let layers: Vec<String> = (1..=cfg.num_layers).map(|l| format!("layer{l}")).collect();
    let bundle = RunBundle::create(
        dir,
        Manifest {
            layers: layers.clone(),
            num_classes: Some(f),
            num_samples: Some(n),
            seed: Some(cfg.seed),
            source: Some("synth".into()),
        },
    )?;
    bundle.write_labels(&labels)?;

    let coarse_of: Vec<usize> = labels.iter().map(|&y| map[y]).collect();
    let shape = [n, cfg.channels, cfg.hw, cfg.hw];
    for (l, name) in layers.iter().enumerate() {
        let target = if l < cfg.num_layers / 2 { &coarse_of } else { &labels };
        let mut data = vec![0.0; shape.iter().product()];
        for k in 0..cfg.channels {
            let spec = if k % 2 == 0 {
                ChannelSpec::signal(0.5 + 0.25 * k as f64)
            } else {
                ChannelSpec::noise()
            };
            let id = (l * cfg.channels + k) as u64;
            fill_channel(&mut data, &spec, target, shape, k, &mut stream(cfg.seed, id));
        }
        bundle.write_layer(name, &ActivationSet::new(data, shape, labels.clone(), f)?)?;
    }

    let mut rng = stream(cfg.seed, (cfg.num_layers * cfg.channels) as u64);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let logits = DMatrix::from_fn(n, f, |i, j| {
        let y = labels[i];
        let mut v = unit.sample(&mut rng);
        if j == y {
            v += 4.0;
        }
        if map[j] == map[y] {
            v += 2.5;
        }
        v
    });
    bundle.write_logits(&LogitSet::new(logits, labels)?)?;
    Ok(SynthRun {
        bundle,
        groups: groups.with_num_samples(n),
    })
}
