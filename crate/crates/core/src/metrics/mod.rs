//! Per-channel class-discriminance scores.
//!
//! The four single-variate metrics (SD, AbsSNR, FDR, Ttest) are generalized
//! to Y classes by averaging their one-vs-all scores over every class. MMD
//! does the same with a kernel two-sample statistic on flattened maps, and
//! DI measures the ridge-regularized discriminant information of the maps.
//!
//! All scorers read a channel through a canonical grouping (class id, then
//! lexicographic map order), so reordering samples never changes a score.

mod binary;
mod kernel;
mod stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dca::{discriminant_information, scatter_matrices};
use crate::error::{Error, Result};
use crate::tensor_io::{ActivationSet, ClassLabels, LabelScheme};

pub use binary::{abssnr_binary, fdr_binary, sd_binary, ttest_binary};
pub use kernel::{mmd_two, rbf_kernel};
pub use stats::{partition_stats, BinaryPartitionStats};

use kernel::mmd_grouped;
use stats::{ChannelMoments, ClassGroups};

pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_RHO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "G-SD")]
    GSd,
    #[serde(rename = "G-AbsSNR")]
    GAbsSnr,
    #[serde(rename = "G-FDR")]
    GFdr,
    #[serde(rename = "G-Ttest")]
    GTtest,
    #[serde(rename = "MMD")]
    Mmd,
    #[serde(rename = "DI")]
    Di,
    #[serde(rename = "Random")]
    Random,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::GSd,
        Metric::GAbsSnr,
        Metric::GFdr,
        Metric::GTtest,
        Metric::Mmd,
        Metric::Di,
        Metric::Random,
    ];

    pub const SCALAR: [Metric; 4] = [Metric::GSd, Metric::GAbsSnr, Metric::GFdr, Metric::GTtest];

    pub fn name(self) -> &'static str {
        match self {
            Metric::GSd => "G-SD",
            Metric::GAbsSnr => "G-AbsSNR",
            Metric::GFdr => "G-FDR",
            Metric::GTtest => "G-Ttest",
            Metric::Mmd => "MMD",
            Metric::Di => "DI",
            Metric::Random => "Random",
        }
    }

    /// The one-vs-all binary function behind a generalized single-variate
    /// metric.
    pub fn binary_fn(self) -> Option<fn(&BinaryPartitionStats, f64) -> f64> {
        match self {
            Metric::GSd => Some(sd_binary),
            Metric::GAbsSnr => Some(abssnr_binary),
            Metric::GFdr => Some(fdr_binary),
            Metric::GTtest => Some(ttest_binary),
            _ => None,
        }
    }
}

/// Parameters for every metric; each metric reads only its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    /// Variance guard for the single-variate metrics.
    pub eps: f64,
    /// RBF bandwidth for MMD.
    pub sigma: f64,
    /// Ridge for DI.
    pub rho: f64,
    /// Mandatory for [`Metric::Random`].
    pub seed: Option<u64>,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            sigma: DEFAULT_SIGMA,
            rho: DEFAULT_RHO,
            seed: None,
        }
    }
}

impl MetricParams {
    pub fn validate(&self, metric: Metric) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match metric {
            Metric::GSd | Metric::GAbsSnr | Metric::GFdr | Metric::GTtest => positive("eps", self.eps),
            Metric::Mmd => positive("sigma", self.sigma),
            Metric::Di => positive("rho", self.rho),
            Metric::Random => match self.seed {
                Some(_) => Ok(()),
                None => Err(Error::InvalidParameter(
                    "the Random metric requires an explicit seed".into(),
                )),
            },
        }
    }

    /// The subset of parameters that influenced `metric`, for reports.
    pub fn recorded(&self, metric: Metric) -> RecordedParams {
        let mut r = RecordedParams::default();
        match metric {
            Metric::GSd | Metric::GAbsSnr | Metric::GFdr | Metric::GTtest => r.eps = Some(self.eps),
            Metric::Mmd => r.sigma = Some(self.sigma),
            Metric::Di => r.rho = Some(self.rho),
            Metric::Random => r.seed = self.seed,
        }
        r
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordedParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Per-channel scores of one layer under one metric and label scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScoreReport {
    pub layer: String,
    pub metric: Metric,
    pub scheme: LabelScheme,
    pub params: RecordedParams,
    #[serde(serialize_with = "crate::json::serialize_sig17_vec")]
    pub scores: Vec<f64>,
}

impl ChannelScoreReport {
    pub fn num_channels(&self) -> usize {
        self.scores.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if let Some(i) = r.scores.iter().position(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::MalformedFile(format!(
                "report score {i} is not a finite non-negative number"
            )));
        }
        Ok(r)
    }
}

fn check_scheme(labels: &ClassLabels) -> Result<()> {
    if labels.num_classes() < 2 {
        return Err(Error::InvalidParameter(format!(
            "scoring needs at least 2 classes, scheme {:?} has {}",
            labels.scheme().name,
            labels.num_classes()
        )));
    }
    Ok(())
}

fn average_over_classes(groups: &ClassGroups<'_>, f: fn(&BinaryPartitionStats, f64) -> f64, eps: f64) -> Result<f64> {
    let moments = ChannelMoments::new(groups);
    let mut acc = 0.0;
    for c in 0..groups.num_classes() {
        acc += f(&moments.partition(c)?, eps);
    }
    Ok(acc / groups.num_classes() as f64)
}

/// Class-averaged one-vs-all score of a single-variate metric for one channel.
pub fn generalized_score(
    metric: Metric,
    acts: &ActivationSet,
    channel: usize,
    labels: &ClassLabels,
    eps: f64,
) -> Result<f64> {
    let f = metric
        .binary_fn()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a single-variate metric", metric.name())))?;
    check_scheme(labels)?;
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let groups = ClassGroups::new(acts, labels, channel)?;
    average_over_classes(&groups, f, eps)
}

/// One-vs-all averaged RBF MMD of one channel's flattened maps.
pub fn mmd_score(acts: &ActivationSet, channel: usize, labels: &ClassLabels, sigma: f64) -> Result<f64> {
    check_scheme(labels)?;
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let groups = ClassGroups::new(acts, labels, channel)?;
    mmd_grouped(&groups, sigma)
}

/// Discriminant information `tr((S̄ + ρI)⁻¹ S_B)` of one channel's flattened
/// maps. Needs O((H·W)²) memory per channel.
pub fn di_score(acts: &ActivationSet, channel: usize, labels: &ClassLabels, rho: f64) -> Result<f64> {
    check_scheme(labels)?;
    let groups = ClassGroups::new(acts, labels, channel)?;
    di_grouped(&groups, rho)
}

fn di_grouped(groups: &ClassGroups<'_>, rho: f64) -> Result<f64> {
    let n = groups.total();
    let mut data = Vec::with_capacity(n * groups.hw);
    let mut y = Vec::with_capacity(n);
    for (c, map) in groups.ordered() {
        data.extend_from_slice(map);
        y.push(c);
    }
    let a = nalgebra::DMatrix::from_row_slice(n, groups.hw, &data);
    let scatter = scatter_matrices(&a, &y, groups.num_classes())?;
    discriminant_information(&scatter, rho)
}

fn score_channel(
    metric: Metric,
    acts: &ActivationSet,
    channel: usize,
    labels: &ClassLabels,
    params: &MetricParams,
) -> Result<f64> {
    let groups = ClassGroups::new(acts, labels, channel)?;
    match metric {
        Metric::Mmd => mmd_grouped(&groups, params.sigma),
        Metric::Di => di_grouped(&groups, params.rho),
        Metric::Random => unreachable!("random scores are drawn per layer"),
        m => average_over_classes(&groups, m.binary_fn().unwrap(), params.eps),
    }
}

/// Uniform [0, 1) scores from a seeded generator.
pub fn random_scores(num_channels: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_channels).map(|_| rng.random::<f64>()).collect()
}

/// Scores every channel of a layer. Channels are scored in parallel; the
/// report is assembled in channel order and the lowest failing channel's
/// error is returned.
pub fn score_layer(
    layer: &str,
    metric: Metric,
    acts: &ActivationSet,
    labels: &ClassLabels,
    params: &MetricParams,
) -> Result<ChannelScoreReport> {
    params.validate(metric)?;
    check_scheme(labels)?;
    if labels.len() != acts.num_samples() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            acts.num_samples()
        )));
    }
    let scores = match metric {
        Metric::Random => random_scores(acts.num_channels(), params.seed.unwrap()),
        _ => {
            let results: Vec<Result<f64>> = (0..acts.num_channels())
                .into_par_iter()
                .map(|c| score_channel(metric, acts, c, labels, params).map_err(|e| e.in_channel(c)))
                .collect();
            results.into_iter().collect::<Result<Vec<_>>>()?
        }
    };
    Ok(ChannelScoreReport {
        layer: layer.to_string(),
        metric,
        scheme: labels.scheme().clone(),
        params: params.recorded(metric),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class() -> (ActivationSet, ClassLabels) {
        let acts = ActivationSet::new(vec![0.0, 2.0, 10.0, 12.0], [4, 1, 1, 1], vec![0, 0, 1, 1], 2).unwrap();
        let l = ClassLabels::fine(&acts);
        (acts, l)
    }

    #[test]
    fn gsd_two_class_example() {
        let (acts, l) = two_class();
        let v = generalized_score(Metric::GSd, &acts, 0, &l, DEFAULT_EPS).unwrap();
        assert!((v - 25.0).abs() < 1e-6);
    }

    #[test]
    fn relabeling_classes_is_invariant() {
        let (acts, _) = two_class();
        let swapped = ClassLabels::new(LabelScheme::fine(2), vec![1, 1, 0, 0]).unwrap();
        let orig = ClassLabels::fine(&acts);
        for m in Metric::SCALAR {
            assert_eq!(
                generalized_score(m, &acts, 0, &orig, DEFAULT_EPS).unwrap(),
                generalized_score(m, &acts, 0, &swapped, DEFAULT_EPS).unwrap()
            );
        }
    }

    #[test]
    fn constant_channel_scores_zero_everywhere() {
        let acts = ActivationSet::new(vec![3.0; 24], [6, 1, 2, 2], vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let l = ClassLabels::fine(&acts);
        for m in Metric::SCALAR {
            assert_eq!(generalized_score(m, &acts, 0, &l, DEFAULT_EPS).unwrap(), 0.0);
        }
        assert_eq!(mmd_score(&acts, 0, &l, 1.0).unwrap(), 0.0);
        assert_eq!(di_score(&acts, 0, &l, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn di_one_dimensional_example() {
        let acts = ActivationSet::new(vec![-1.0, 1.0], [2, 1, 1, 1], vec![0, 1], 2).unwrap();
        let l = ClassLabels::fine(&acts);
        let v = di_score(&acts, 0, &l, 1e-4).unwrap();
        assert!((v - 2.0 / 2.0001).abs() < 1e-12);
    }

    #[test]
    fn degenerate_class_carries_channel() {
        let acts = ActivationSet::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [3, 2, 1, 1], vec![0, 0, 1], 2).unwrap();
        let l = ClassLabels::fine(&acts);
        let e = score_layer("l", Metric::GSd, &acts, &l, &MetricParams::default()).unwrap_err();
        assert_eq!(e.kind(), "DegenerateClass");
        assert_eq!(e.channel(), Some(0));
    }

    #[test]
    fn random_needs_seed_and_is_deterministic() {
        let (acts, l) = two_class();
        let p = MetricParams::default();
        assert!(score_layer("l", Metric::Random, &acts, &l, &p).is_err());
        let p = MetricParams { seed: Some(7), ..p };
        let a = score_layer("l", Metric::Random, &acts, &l, &p).unwrap();
        let b = score_layer("l", Metric::Random, &acts, &l, &p).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(a.scores.iter().all(|s| (0.0..1.0).contains(s)));
    }

    #[test]
    fn report_json_roundtrip() {
        let (acts, l) = two_class();
        let r = score_layer("conv1", Metric::GSd, &acts, &l, &MetricParams::default()).unwrap();
        let text = r.to_json().unwrap();
        assert!(text.contains("\"metric\": \"G-SD\""));
        assert!(text.contains("2.4999999"));
        let back = ChannelScoreReport::from_json(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn single_class_scheme_rejected() {
        let acts = ActivationSet::new(vec![1.0, 2.0], [2, 1, 1, 1], vec![0, 0], 1).unwrap();
        let l = ClassLabels::fine(&acts);
        assert_eq!(
            generalized_score(Metric::GSd, &acts, 0, &l, 1e-8).unwrap_err().kind(),
            "InvalidParameter"
        );
    }
}
