use nalgebra::DMatrix;

use super::{project, DcaProjection};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 10.0;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Single-layer subspace distillation loss `‖A_T W_T − A_S W_S‖₁`, summed
/// over all N·Y entries. Multi-layer losses are sums of these.
pub fn inter_kd_loss(a_t: &DMatrix<f64>, w_t: &DcaProjection, a_s: &DMatrix<f64>, w_s: &DcaProjection) -> Result<f64> {
    if a_t.nrows() != a_s.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "teacher has {} samples, student {}",
            a_t.nrows(),
            a_s.nrows()
        )));
    }
    if w_t.components() != w_s.components() {
        return Err(Error::ShapeMismatch(format!(
            "teacher projection has {} components, student {}",
            w_t.components(),
            w_s.components()
        )));
    }
    let pt = project(a_t, w_t)?;
    let ps = project(a_s, w_s)?;
    Ok(pt.iter().zip(ps.iter()).map(|(t, s)| (t - s).abs()).sum())
}

fn log_softmax(row: impl Iterator<Item = f64> + Clone, t: f64) -> Vec<f64> {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = row.map(|x| (x - max) / t).collect();
    let lse = shifted.iter().map(|x| x.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|x| x - lse).collect()
}

/// Mean over samples of `T² · KL(softmax(z_t/T) ‖ softmax(z_s/T))`.
pub fn output_kd_loss(logits_t: &DMatrix<f64>, logits_s: &DMatrix<f64>, temperature: f64) -> Result<f64> {
    if logits_t.shape() != logits_s.shape() {
        return Err(Error::ShapeMismatch(format!(
            "teacher logits {:?} vs student {:?}",
            logits_t.shape(),
            logits_s.shape()
        )));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits_t.nrows() == 0 {
        return Err(Error::ShapeMismatch("no samples".into()));
    }
    let non_finite = logits_t.iter().chain(logits_s.iter()).any(|x| !x.is_finite());
    if non_finite {
        return Err(Error::NonFiniteData { index: 0 });
    }
    let mut total = 0.0;
    for (rt, rs) in logits_t.row_iter().zip(logits_s.row_iter()) {
        let lt = log_softmax(rt.iter().copied(), temperature);
        let ls = log_softmax(rs.iter().copied(), temperature);
        let kl: f64 = lt.iter().zip(&ls).map(|(a, b)| a.exp() * (a - b)).sum();
        total += kl.max(0.0);
    }
    Ok(temperature * temperature * total / logits_t.nrows() as f64)
}

/// `ce + λ·inter + γ·out`.
pub fn combined_loss(ce: f64, inter: f64, out: f64, lambda: f64, gamma: f64) -> f64 {
    ce + lambda * inter + gamma * out
}
