use nalgebra::DMatrix;

use super::kmeans::{kmeans, KMeansConfig};
use super::{CoarseMapping, MappingMethod};
use crate::dca::{fix_signs, sorted_eigh};
use crate::error::{Error, Result};
use crate::tensor_io::{load_int_matrix, save_int_matrix, LogitSet};

/// `m[(i, j)]` counts samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    m: DMatrix<u64>,
}

impl ConfusionMatrix {
    pub fn new(m: DMatrix<u64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "confusion matrix must be square and non-empty, got {}×{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self { m })
    }

    pub fn num_classes(&self) -> usize {
        self.m.nrows()
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.m
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.m.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.m.iter().sum()
    }

    /// Sums the counts into coarse blocks under `q`.
    pub fn coarsen(&self, q: &CoarseMapping) -> Result<ConfusionMatrix> {
        if q.num_fine != self.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "mapping covers {} fine classes, confusion matrix has {}",
                q.num_fine,
                self.num_classes()
            )));
        }
        let mut out = DMatrix::<u64>::zeros(q.num_coarse, q.num_coarse);
        for i in 0..self.num_classes() {
            for j in 0..self.num_classes() {
                out[(q.map[i], q.map[j])] += self.m[(i, j)];
            }
        }
        ConfusionMatrix::new(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_int_matrix(&self.m, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw = load_int_matrix(path)?;
        if let Some(&v) = raw.iter().find(|&&v| v < 0) {
            return Err(Error::MalformedFile(format!("negative confusion count {v}")));
        }
        ConfusionMatrix::new(raw.map(|v| v as u64))
    }
}

/// Counts argmax predictions against true labels; argmax ties go to the
/// lowest class index.
pub fn confusion_matrix(logits: &LogitSet, num_classes: usize) -> Result<ConfusionMatrix> {
    if logits.num_classes() != num_classes {
        return Err(Error::ShapeMismatch(format!(
            "logits have {} columns, expected {num_classes}",
            logits.num_classes()
        )));
    }
    let mut m = DMatrix::<u64>::zeros(num_classes, num_classes);
    for (row, &label) in logits.logits().row_iter().zip(logits.labels()) {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: label as i64,
                num_classes,
            });
        }
        let mut pred = 0;
        for j in 1..num_classes {
            if row[j] > row[pred] {
                pred = j;
            }
        }
        m[(label, pred)] += 1;
    }
    ConfusionMatrix::new(m)
}

/// Row-normalized spectral embedding of the confusion graph, F×k.
///
/// Affinity is `M + Mᵀ` with a zeroed diagonal; a class with no confusion
/// mass gets a unit self-loop so its degree is non-zero. The embedding is
/// built from the eigenvectors of the k smallest eigenvalues of
/// `I − D^{-1/2} A D^{-1/2}`.
pub fn spectral_embedding(m: &ConfusionMatrix, k: usize) -> Result<DMatrix<f64>> {
    let f = m.num_classes();
    let counts = m.counts();
    let mut a = DMatrix::from_fn(f, f, |i, j| {
        if i == j {
            0.0
        } else {
            (counts[(i, j)] + counts[(j, i)]) as f64
        }
    });
    for i in 0..f {
        if a.row(i).iter().all(|&v| v == 0.0) {
            a[(i, i)] = 1.0;
        }
    }
    let inv_sqrt: Vec<f64> = a.row_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    let lap = DMatrix::from_fn(f, f, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * a[(i, j)] * inv_sqrt[j]
    });
    let (_, vectors) = sorted_eigh(lap, false)?;
    let mut emb = vectors.columns(0, k).into_owned();
    fix_signs(&mut emb);
    for mut row in emb.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(emb)
}

/// Groups fine classes that the classifier confuses with each other.
pub fn spectral_mapping(m: &ConfusionMatrix, num_coarse: usize, seed: u64) -> Result<CoarseMapping> {
    let f = m.num_classes();
    if num_coarse < 2 || num_coarse >= f {
        return Err(Error::InvalidClusterCount {
            requested: num_coarse,
            num_points: f,
        });
    }
    let emb = spectral_embedding(m, num_coarse)?;
    let clustering = kmeans(&emb, num_coarse, seed, &KMeansConfig::default())?;
    CoarseMapping::new(
        clustering.assignment,
        num_coarse,
        MappingMethod::SpectralConfusion,
        seed,
    )
}
