//! Single-variate two-class discriminant functions.
//!
//! Every variance is guarded as `ṽ = var + eps` before it is used in a ratio,
//! so a dead (constant) channel scores exactly zero.

use super::stats::BinaryPartitionStats;

fn guarded(s: &BinaryPartitionStats, eps: f64) -> (f64, f64) {
    (s.var_pos + eps, s.var_neg + eps)
}

/// Symmetric divergence:
/// `½(ṽ₊/ṽ₋ + ṽ₋/ṽ₊) + ½(μ₊−μ₋)²/(ṽ₊+ṽ₋) − 1`.
pub fn sd_binary(s: &BinaryPartitionStats, eps: f64) -> f64 {
    let (vp, vn) = guarded(s, eps);
    let d = s.mu_pos - s.mu_neg;
    let score = 0.5 * (vp / vn + vn / vp) + 0.5 * (d * d / (vp + vn)) - 1.0;
    // a/b + b/a ≥ 2; clamp the rounding residue around equal variances
    score.max(0.0)
}

/// `|μ₊−μ₋| / (σ̃₊ + σ̃₋)` with `σ̃ = √ṽ`.
pub fn abssnr_binary(s: &BinaryPartitionStats, eps: f64) -> f64 {
    let (vp, vn) = guarded(s, eps);
    (s.mu_pos - s.mu_neg).abs() / (vp.sqrt() + vn.sqrt())
}

/// Fisher discriminant ratio `(μ₊−μ₋)² / (ṽ₊+ṽ₋)`.
pub fn fdr_binary(s: &BinaryPartitionStats, eps: f64) -> f64 {
    let (vp, vn) = guarded(s, eps);
    let d = s.mu_pos - s.mu_neg;
    d * d / (vp + vn)
}

/// Welch-style t statistic `|μ₊−μ₋| / √(ṽ₊/n₊ + ṽ₋/n₋)`, with `n±` counted
/// in activations.
pub fn ttest_binary(s: &BinaryPartitionStats, eps: f64) -> f64 {
    let (vp, vn) = guarded(s, eps);
    (s.mu_pos - s.mu_neg).abs() / (vp / s.n_pos as f64 + vn / s.n_neg as f64).sqrt()
}
