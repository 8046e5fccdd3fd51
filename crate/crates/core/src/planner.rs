//! Hierarchical pruning plans.
//!
//! Layers at or before the watershed are pruned by scores computed under a
//! coarse label scheme, later layers by fine-label scores. Layers are
//! 1-indexed in network order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ChannelScoreReport, Metric};
use crate::tensor_io::{Granularity, LabelScheme};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Slack for round-half-up on products such as `0.7 × 5` that land a hair
/// below an exact half.
const HALF_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    None,
    #[serde(rename = "multiple-of-8")]
    MultipleOf8,
}

/// Which label scheme drives each region of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    AllFine,
    AllCoarse,
    /// Fine labels up to the watershed, coarse after it.
    FineCoarse,
    /// Coarse labels up to the watershed, fine after it.
    #[default]
    CoarseFine,
    /// Coarsest, coarse and fine regions split at one and two thirds.
    ThreeLevel,
}

/// Which of a layer's reports a plan draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Coarsest,
    Coarse,
    Fine,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio.is_finite() && ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidRatio(ratio))
    }
}

/// `floor(α·L)` clamped to `[1, L − 1]`.
pub fn watershed_index(num_layers: usize, alpha: f64) -> Result<usize> {
    check_alpha(alpha)?;
    if num_layers < 2 {
        return Err(Error::ShapeMismatch(format!(
            "a watershed needs at least 2 layers, got {num_layers}"
        )));
    }
    let raw = (alpha * num_layers as f64).floor() as usize;
    Ok(raw.clamp(1, num_layers - 1))
}

/// Boundaries `(L/3, 2L/3)` in integer arithmetic, kept strictly inside
/// `[1, L − 1]` and strictly increasing.
pub fn three_level_watersheds(num_layers: usize) -> Result<(usize, usize)> {
    if num_layers < 3 {
        return Err(Error::ShapeMismatch(format!(
            "three-level plans need at least 3 layers, got {num_layers}"
        )));
    }
    let first = (num_layers / 3).max(1);
    let second = (2 * num_layers / 3).clamp(first + 1, num_layers - 1);
    Ok((first, second))
}

/// Number of channels kept out of `num_channels` at the given ratio.
pub fn keep_count(num_channels: usize, ratio: f64, rounding: Rounding) -> Result<usize> {
    check_ratio(ratio)?;
    if num_channels < 2 {
        return Err(Error::ShapeMismatch(format!(
            "cannot prune a layer with {num_channels} channel(s)"
        )));
    }
    let k = ((1.0 - ratio) * num_channels as f64 + 0.5 + HALF_SLACK).floor() as usize;
    let k = match rounding {
        Rounding::None => k,
        Rounding::MultipleOf8 => ((k + 4) / 8 * 8).max(8),
    };
    Ok(k.clamp(1, num_channels))
}

/// Indices of the highest-scoring channels, ascending. Equal scores favor
/// the lower channel index.
pub fn select_channels(scores: &[f64], ratio: f64, rounding: Rounding) -> Result<Vec<usize>> {
    let k = keep_count(scores.len(), ratio, rounding)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteData { index: i });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

/// The score reports available for one layer.
#[derive(Debug, Clone, Default)]
pub struct LayerReports {
    pub layer: String,
    pub fine: Option<ChannelScoreReport>,
    pub coarse: Option<ChannelScoreReport>,
    pub coarsest: Option<ChannelScoreReport>,
}

impl LayerReports {
    pub fn new(layer: impl Into<String>) -> Self {
        Self {
            layer: layer.into(),
            ..Default::default()
        }
    }

    fn get(&self, level: Level) -> Option<&ChannelScoreReport> {
        match level {
            Level::Fine => self.fine.as_ref(),
            Level::Coarse => self.coarse.as_ref(),
            Level::Coarsest => self.coarsest.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub mode: PlanMode,
    pub alpha: f64,
    /// One ratio per layer, or a single ratio applied uniformly.
    pub ratios: Vec<f64>,
    pub rounding: Rounding,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            mode: PlanMode::CoarseFine,
            alpha: DEFAULT_ALPHA,
            ratios: vec![0.45],
            rounding: Rounding::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: String,
    /// 1-based position in network order.
    pub index: usize,
    pub level: Level,
    pub scheme_used: LabelScheme,
    pub metric: Metric,
    pub ratio: f64,
    pub keep: Vec<usize>,
    pub drop: Vec<usize>,
}

impl LayerPlan {
    pub fn num_channels(&self) -> usize {
        self.keep.len() + self.drop.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub mode: PlanMode,
    pub watershed_alpha: f64,
    /// `floor(α·L)` clamped; for three-level plans, the first boundary.
    pub watershed_index: usize,
    /// Region boundaries in effect: empty for single-scheme modes, one entry
    /// for two-region modes, two for three-level.
    pub watersheds: Vec<usize>,
    pub rounding: Rounding,
    pub layers: Vec<LayerPlan>,
}

impl PruningPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::MalformedFile(format!("pruning plan: {e}")))
    }
}

/// Regime of 1-based layer `l` and the boundaries that produced it.
fn level_for(mode: PlanMode, l: usize, bounds: &[usize]) -> Level {
    match mode {
        PlanMode::AllFine => Level::Fine,
        PlanMode::AllCoarse => Level::Coarse,
        PlanMode::CoarseFine if l <= bounds[0] => Level::Coarse,
        PlanMode::CoarseFine => Level::Fine,
        PlanMode::FineCoarse if l <= bounds[0] => Level::Fine,
        PlanMode::FineCoarse => Level::Coarse,
        PlanMode::ThreeLevel if l <= bounds[0] => Level::Coarsest,
        PlanMode::ThreeLevel if l <= bounds[1] => Level::Coarse,
        PlanMode::ThreeLevel => Level::Fine,
    }
}

fn check_report(r: &ChannelScoreReport, layer: &str, level: Level) -> Result<()> {
    if r.layer != layer {
        return Err(Error::SchemeMismatch(format!(
            "report for layer {:?} supplied as layer {layer:?}",
            r.layer
        )));
    }
    let want = match level {
        Level::Fine => Granularity::Fine,
        Level::Coarse | Level::Coarsest => Granularity::Coarse,
    };
    if r.scheme.granularity != want {
        return Err(Error::SchemeMismatch(format!(
            "layer {layer:?}: {level:?} slot holds a {:?} report",
            r.scheme.granularity
        )));
    }
    Ok(())
}

/// Checks that the reports of one layer describe the same channels and that
/// coarser levels really have fewer classes.
fn check_layer(reports: &LayerReports) -> Result<()> {
    let present: Vec<(Level, &ChannelScoreReport)> = [Level::Coarsest, Level::Coarse, Level::Fine]
        .into_iter()
        .filter_map(|lv| reports.get(lv).map(|r| (lv, r)))
        .collect();
    for (lv, r) in &present {
        check_report(r, &reports.layer, *lv)?;
    }
    for pair in present.windows(2) {
        let (la, a) = pair[0];
        let (lb, b) = pair[1];
        if a.num_channels() != b.num_channels() {
            return Err(Error::SchemeMismatch(format!(
                "layer {:?}: {la:?} report has {} channels, {lb:?} report {}",
                reports.layer,
                a.num_channels(),
                b.num_channels()
            )));
        }
        if a.scheme.num_classes >= b.scheme.num_classes {
            return Err(Error::SchemeMismatch(format!(
                "layer {:?}: {la:?} scheme has {} classes, not fewer than {lb:?} scheme's {}",
                reports.layer, a.scheme.num_classes, b.scheme.num_classes
            )));
        }
    }
    Ok(())
}

pub fn build_plan(reports: &[LayerReports], cfg: &PlanConfig) -> Result<PruningPlan> {
    let num_layers = reports.len();
    if num_layers == 0 {
        return Err(Error::MissingReport("no layers supplied".into()));
    }
    check_alpha(cfg.alpha)?;
    let ratios: Vec<f64> = match cfg.ratios.len() {
        1 => vec![cfg.ratios[0]; num_layers],
        n if n == num_layers => cfg.ratios.clone(),
        n => return Err(Error::ShapeMismatch(format!("{n} ratios for {num_layers} layers"))),
    };
    for &r in &ratios {
        check_ratio(r)?;
    }

    let (watershed, bounds) = match cfg.mode {
        PlanMode::AllFine | PlanMode::AllCoarse => {
            let w = if num_layers >= 2 {
                watershed_index(num_layers, cfg.alpha)?
            } else {
                0
            };
            (w, vec![])
        }
        PlanMode::CoarseFine | PlanMode::FineCoarse => {
            let w = watershed_index(num_layers, cfg.alpha)?;
            (w, vec![w])
        }
        PlanMode::ThreeLevel => {
            let (a, b) = three_level_watersheds(num_layers)?;
            (a, vec![a, b])
        }
    };

    let mut layers = Vec::with_capacity(num_layers);
    for (i, (lr, &ratio)) in reports.iter().zip(&ratios).enumerate() {
        check_layer(lr).map_err(|e| e.in_layer(&lr.layer))?;
        let index = i + 1;
        let level = level_for(cfg.mode, index, &bounds);
        let report = lr
            .get(level)
            .ok_or_else(|| Error::MissingReport(format!("layer {:?} has no {level:?} report", lr.layer)))?;
        let keep = select_channels(&report.scores, ratio, cfg.rounding).map_err(|e| e.in_layer(&lr.layer))?;
        let mut in_keep = vec![false; report.num_channels()];
        keep.iter().for_each(|&k| in_keep[k] = true);
        let drop = (0..report.num_channels()).filter(|&c| !in_keep[c]).collect();
        layers.push(LayerPlan {
            layer: lr.layer.clone(),
            index,
            level,
            scheme_used: report.scheme.clone(),
            metric: report.metric,
            ratio,
            keep,
            drop,
        });
    }
    Ok(PruningPlan {
        mode: cfg.mode,
        watershed_alpha: cfg.alpha,
        watershed_index: watershed,
        watersheds: bounds,
        rounding: cfg.rounding,
        layers,
    })
}
