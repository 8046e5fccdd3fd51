//! Linear separability probe.
//!
//! One-vs-rest ridge least squares on standardized features, fit on a
//! seeded, class-stratified 80/20 split and scored on the held-out part.
//! This stands in for a linear SVM: it ranks representations by linear
//! separability without an iterative solver.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PROBE_REG: f64 = 1e-2;
const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn split(labels: &[usize], num_classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_test = if n >= 2 {
            ((TEST_FRACTION * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Held-out accuracy of a ridge one-vs-rest linear classifier.
pub fn linear_probe(
    features: &DMatrix<f64>,
    labels: &[usize],
    num_classes: usize,
    reg: f64,
    seed: u64,
) -> Result<ProbeResult> {
    let (n, k) = features.shape();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} samples", labels.len())));
    }
    if !(reg.is_finite() && reg > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "probe regularizer must be positive, got {reg}"
        )));
    }
    if num_classes < 2 {
        return Err(Error::InvalidParameter("probe needs at least 2 classes".into()));
    }
    crate::tensor_io::check_labels(labels, num_classes)?;
    let mut counts = vec![0usize; num_classes];
    labels.iter().for_each(|&y| counts[y] += 1);
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateClass {
            class: c,
            reason: "class has no samples".into(),
        });
    }
    if n < 2 * num_classes {
        return Err(Error::DegenerateClass {
            class: 0,
            reason: format!("{n} samples are too few for {num_classes} classes (need 2 per class)"),
        });
    }

    let (train, test) = split(labels, num_classes, seed);
    let xtr = features.select_rows(&train);
    let mean = xtr.row_sum() / train.len() as f64;
    let mut scale = vec![0.0; k];
    for (j, s) in scale.iter_mut().enumerate() {
        let var = xtr.column(j).iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / train.len() as f64;
        *s = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    }
    let standardize = |m: DMatrix<f64>| DMatrix::from_fn(m.nrows(), k, |r, c| (m[(r, c)] - mean[c]) * scale[c]);
    let x = standardize(xtr);

    let targets = DMatrix::from_fn(
        train.len(),
        num_classes,
        |r, c| {
            if labels[train[r]] == c {
                1.0
            } else {
                -1.0
            }
        },
    );
    let bias = targets.row_sum() / train.len() as f64;
    let mut centered_t = targets;
    for mut row in centered_t.row_iter_mut() {
        row -= &bias;
    }
    let mut gram = x.tr_mul(&x);
    for i in 0..k {
        gram[(i, i)] += reg;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebraFailure("probe normal equations are not positive definite".into()))?;
    let weights = chol.solve(&x.tr_mul(&centered_t));

    let xte = standardize(features.select_rows(&test));
    let scores = xte * weights;
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(r, &i)| {
            let mut best = 0;
            for c in 1..num_classes {
                if scores[(r, c)] + bias[c] > scores[(r, best)] + bias[best] {
                    best = c;
                }
            }
            best == labels[i]
        })
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / test.len() as f64,
        n_train: train.len(),
        n_test: test.len(),
    })
}
