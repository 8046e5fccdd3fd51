use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{ActivationSet, ClassLabels};

/// Pooled one-vs-all statistics of one channel for one class.
///
/// Variances are population variances over all `|F^c|·H·W` activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryPartitionStats {
    pub mu_pos: f64,
    pub var_pos: f64,
    pub mu_neg: f64,
    pub var_neg: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// One channel's feature maps grouped by class, each group sorted
/// lexicographically so that downstream sums do not depend on sample order.
#[derive(Debug)]
pub(crate) struct ClassGroups<'a> {
    pub hw: usize,
    pub groups: Vec<Vec<&'a [f64]>>,
}

impl<'a> ClassGroups<'a> {
    pub fn new(acts: &'a ActivationSet, labels: &ClassLabels, channel: usize) -> Result<Self> {
        check_inputs(acts, labels, channel)?;
        let mut groups: Vec<Vec<&[f64]>> = vec![Vec::new(); labels.num_classes()];
        for (i, &y) in labels.labels().iter().enumerate() {
            groups[y].push(acts.feature_map(i, channel));
        }
        for g in &mut groups {
            g.sort_by(|a, b| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
        }
        Ok(Self {
            hw: acts.spatial(),
            groups,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn class_size(&self, c: usize) -> usize {
        self.groups[c].len()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Samples in canonical order (class id, then lexicographic) with labels.
    pub fn ordered(&self) -> impl Iterator<Item = (usize, &'a [f64])> + '_ {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(c, g)| g.iter().map(move |m| (c, *m)))
    }
}

pub(crate) fn check_inputs(acts: &ActivationSet, labels: &ClassLabels, channel: usize) -> Result<()> {
    if labels.len() != acts.num_samples() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            acts.num_samples()
        )));
    }
    if channel >= acts.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "channel {channel} out of range for {} channels",
            acts.num_channels()
        )));
    }
    Ok(())
}

/// Count, sum and centered sum of squares of one class's activations.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Moments {
    pub n: usize,
    pub sum: f64,
    pub m2: f64,
}

impl Moments {
    fn of(maps: &[&[f64]]) -> Self {
        let n: usize = maps.iter().map(|m| m.len()).sum();
        let sum: f64 = maps.iter().flat_map(|m| m.iter()).sum();
        let mean = if n > 0 { sum / n as f64 } else { 0.0 };
        let m2 = maps
            .iter()
            .flat_map(|m| m.iter())
            .map(|x| (x - mean) * (x - mean))
            .sum();
        Moments { n, sum, m2 }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

/// Per-class moments of one channel; the complement of any class is
/// assembled from these with the exact pooled-variance identity.
#[derive(Debug)]
pub(crate) struct ChannelMoments {
    per_class: Vec<Moments>,
}

impl ChannelMoments {
    pub fn new(groups: &ClassGroups<'_>) -> Self {
        Self {
            per_class: groups.groups.iter().map(|g| Moments::of(g)).collect(),
        }
    }

    pub fn partition(&self, c: usize) -> Result<BinaryPartitionStats> {
        let pos = self.per_class[c];
        let rest = || self.per_class.iter().enumerate().filter(move |(k, _)| *k != c);
        let n_neg: usize = rest().map(|(_, m)| m.n).sum();
        if pos.n < 2 || n_neg < 2 {
            return Err(Error::DegenerateClass {
                class: c,
                reason: format!(
                    "one-vs-all partition has {} / {} activations, need at least 2 on each side",
                    pos.n, n_neg
                ),
            });
        }
        let sum_neg: f64 = rest().map(|(_, m)| m.sum).sum();
        let mu_neg = sum_neg / n_neg as f64;
        let m2_neg: f64 = rest()
            .filter(|(_, m)| m.n > 0)
            .map(|(_, m)| {
                let d = m.mean() - mu_neg;
                m.m2 + m.n as f64 * d * d
            })
            .sum();
        Ok(BinaryPartitionStats {
            mu_pos: pos.mean(),
            var_pos: pos.m2 / pos.n as f64,
            mu_neg,
            var_neg: m2_neg / n_neg as f64,
            n_pos: pos.n,
            n_neg,
        })
    }
}

/// Pooled mean/variance of class `class` versus the rest, for one channel.
pub fn partition_stats(
    acts: &ActivationSet,
    labels: &ClassLabels,
    channel: usize,
    class: usize,
) -> Result<BinaryPartitionStats> {
    if class >= labels.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: class as i64,
            num_classes: labels.num_classes(),
        });
    }
    let groups = ClassGroups::new(acts, labels, channel)?;
    ChannelMoments::new(&groups).partition(class)
}
