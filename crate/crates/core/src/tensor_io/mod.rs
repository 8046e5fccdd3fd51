//! Validated in-memory tensors and their on-disk interchange.
//!
//! Everything is held at `f64` working precision; 32-bit files are widened
//! on load. Labels are 0-indexed.

pub mod npy;
mod run;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use run::{Manifest, RunBundle};

/// One layer's feature maps, N×C×H×W in C order, plus per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    data: Vec<f64>,
    shape: [usize; 4],
    labels: Vec<usize>,
    num_classes: usize,
}

impl ActivationSet {
    /// Validates shape, label range and finiteness.
    pub fn new(data: Vec<f64>, shape: [usize; 4], labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "activation dimensions must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if labels.len() != shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                shape[0]
            )));
        }
        check_labels(&labels, num_classes)?;
        check_finite(&data)?;
        Ok(Self {
            data,
            shape,
            labels,
            num_classes,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.shape[0]
    }

    pub fn num_channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// H·W, the number of activations per feature map.
    pub fn spatial(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// C·H·W, the flattened per-sample dimension.
    pub fn sample_dim(&self) -> usize {
        self.shape[1] * self.spatial()
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// The H·W feature map of one sample in one channel.
    pub fn feature_map(&self, sample: usize, channel: usize) -> &[f64] {
        let hw = self.spatial();
        let start = sample * self.sample_dim() + channel * hw;
        &self.data[start..start + hw]
    }

    /// N×D matrix with rows flattened in (C, H, W) order.
    pub fn flatten(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_samples(), self.sample_dim(), &self.data)
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<ActivationSet> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.num_channels()) {
            return Err(Error::ShapeMismatch(format!(
                "channel {bad} out of range for {} channels",
                self.num_channels()
            )));
        }
        let hw = self.spatial();
        let mut data = Vec::with_capacity(self.num_samples() * channels.len() * hw);
        for i in 0..self.num_samples() {
            for &c in channels {
                data.extend_from_slice(self.feature_map(i, c));
            }
        }
        ActivationSet::new(
            data,
            [self.shape[0], channels.len(), self.shape[2], self.shape[3]],
            self.labels.clone(),
            self.num_classes,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Fine,
    Coarse,
}

/// Which labels a score or projection was computed against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelScheme {
    pub granularity: Granularity,
    pub num_classes: usize,
    pub name: String,
}

impl LabelScheme {
    pub fn fine(num_classes: usize) -> Self {
        Self {
            granularity: Granularity::Fine,
            num_classes,
            name: "fine".into(),
        }
    }

    pub fn coarse(num_classes: usize) -> Self {
        Self {
            granularity: Granularity::Coarse,
            num_classes,
            name: "coarse".into(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// A label vector together with the scheme it is expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLabels {
    scheme: LabelScheme,
    labels: Vec<usize>,
}

impl ClassLabels {
    pub fn new(scheme: LabelScheme, labels: Vec<usize>) -> Result<Self> {
        check_labels(&labels, scheme.num_classes)?;
        Ok(Self { scheme, labels })
    }

    /// The activation set's own (fine) labels.
    pub fn fine(acts: &ActivationSet) -> Self {
        Self {
            scheme: LabelScheme::fine(acts.num_classes()),
            labels: acts.labels().to_vec(),
        }
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.scheme.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-sample classifier outputs with true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSet {
    logits: DMatrix<f64>,
    labels: Vec<usize>,
}

impl LogitSet {
    pub fn new(logits: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if logits.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} logit rows for {} labels",
                logits.nrows(),
                labels.len()
            )));
        }
        check_finite(logits.as_slice())?;
        Ok(Self { logits, labels })
    }

    pub fn logits(&self) -> &DMatrix<f64> {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.logits.ncols()
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteData { index }),
        None => Ok(()),
    }
}

pub(crate) fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= num_classes) {
        Some(&l) => Err(Error::LabelOutOfRange {
            label: l as i64,
            num_classes,
        }),
        None => Ok(()),
    }
}

/// Reads a rank-1 integer label file.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let arr = npy::load_npy(path)?;
    if arr.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "labels must be rank 1, got shape {:?}",
            arr.shape
        )));
    }
    let raw = arr.into_i64()?;
    raw.into_iter()
        .map(|l| {
            usize::try_from(l).map_err(|_| Error::LabelOutOfRange {
                label: l,
                num_classes: 0,
            })
        })
        .collect()
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let values: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    npy::save_i64(path, &[labels.len()], &values)
}

/// Loads a rank-4 activation tensor and its companion label vector.
///
/// When `num_classes` is `None` it is taken as `max(label) + 1`.
pub fn load_activations(path: &Path, labels_path: &Path, num_classes: Option<usize>) -> Result<ActivationSet> {
    let arr = npy::load_npy(path)?;
    let shape: [usize; 4] = arr.shape.as_slice().try_into().map_err(|_| {
        Error::ShapeMismatch(format!(
            "activations must be rank 4 (N×C×H×W), got shape {:?}",
            arr.shape
        ))
    })?;
    let data = arr.into_f64()?;
    let labels = load_labels(labels_path)?;
    let num_classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m + 1));
    ActivationSet::new(data, shape, labels, num_classes)
}

/// Writes activations as `f8` and labels as `i8`; loading them back is
/// bit-exact.
pub fn save_activations(acts: &ActivationSet, path: &Path, labels_path: &Path) -> Result<()> {
    npy::save_f64(path, &acts.shape, &acts.data)?;
    save_labels(labels_path, &acts.labels)
}

pub fn save_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::MalformedFile(format!(
            "refusing to save an empty {}×{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m.as_slice())?;
    let rows: Vec<f64> = m.transpose().as_slice().to_vec();
    npy::save_f64(path, &[m.nrows(), m.ncols()], &rows)
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let arr = npy::load_npy(path)?;
    let (r, c) = rank2(&arr.shape, path)?;
    let data = arr.into_f64()?;
    check_finite(&data)?;
    Ok(DMatrix::from_row_slice(r, c, &data))
}

pub fn save_int_matrix(m: &DMatrix<u64>, path: &Path) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::MalformedFile("refusing to save an empty matrix".into()));
    }
    let rows: Vec<i64> = m.transpose().iter().map(|&v| v as i64).collect();
    npy::save_i64(path, &[m.nrows(), m.ncols()], &rows)
}

pub fn load_int_matrix(path: &Path) -> Result<DMatrix<i64>> {
    let arr = npy::load_npy(path)?;
    let (r, c) = rank2(&arr.shape, path)?;
    let data = arr.into_i64()?;
    Ok(DMatrix::from_row_slice(r, c, &data))
}

/// Loads a rank-2 logit matrix, or a rank-4 N×Y×1×1 one.
pub fn load_logits(path: &Path, labels: Vec<usize>) -> Result<LogitSet> {
    let arr = npy::load_npy(path)?;
    let (r, c) = match arr.shape.as_slice() {
        [r, c] | [r, c, 1, 1] => (*r, *c),
        s => return Err(Error::ShapeMismatch(format!("logits must be N×Y, got shape {s:?}"))),
    };
    let data = arr.into_f64()?;
    check_finite(&data)?;
    LogitSet::new(DMatrix::from_row_slice(r, c, &data), labels)
}

/// Loads any float array of rank ≥ 2 as an N×D matrix, flattening trailing
/// axes in C order.
pub fn load_features(path: &Path) -> Result<DMatrix<f64>> {
    let arr = npy::load_npy(path)?;
    if arr.rank() < 2 || arr.shape[0] == 0 {
        return Err(Error::ShapeMismatch(format!(
            "feature arrays need rank ≥ 2 and N ≥ 1, got shape {:?}",
            arr.shape
        )));
    }
    let n = arr.shape[0];
    let d: usize = arr.shape[1..].iter().product();
    let data = arr.into_f64()?;
    check_finite(&data)?;
    Ok(DMatrix::from_row_slice(n, d, &data))
}

fn rank2(shape: &[usize], path: &Path) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::MalformedFile(format!(
            "{}: expected a rank-2 array, got shape {s:?}",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn activation_roundtrip_small() {
        let dir = tempdir().unwrap();
        let acts = ActivationSet::new(vec![0.5, 1.0, -2.0, 3.0, 4.0, 5.0], [2, 3, 1, 1], vec![0, 1], 2).unwrap();
        let (a, l) = (dir.path().join("a.npy"), dir.path().join("l.npy"));
        save_activations(&acts, &a, &l).unwrap();
        let back = load_activations(&a, &l, None).unwrap();
        assert_eq!(back.shape(), [2, 3, 1, 1]);
        assert_eq!(back, acts);
    }

    #[test]
    fn label_length_mismatch() {
        let dir = tempdir().unwrap();
        let (a, l) = (dir.path().join("a.npy"), dir.path().join("l.npy"));
        npy::save_f64(&a, &[2, 3, 1, 1], &[0.0; 6]).unwrap();
        save_labels(&l, &[0, 1, 0]).unwrap();
        assert!(matches!(load_activations(&a, &l, None), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn nan_rejected() {
        let dir = tempdir().unwrap();
        let (a, l) = (dir.path().join("a.npy"), dir.path().join("l.npy"));
        npy::save_f64(&a, &[2, 1, 1, 1], &[0.0, f64::NAN]).unwrap();
        save_labels(&l, &[0, 1]).unwrap();
        assert!(matches!(
            load_activations(&a, &l, None),
            Err(Error::NonFiniteData { index: 1 })
        ));
    }

    #[test]
    fn rank_and_dtype_checks() {
        let dir = tempdir().unwrap();
        let (a, l) = (dir.path().join("a.npy"), dir.path().join("l.npy"));
        npy::save_f64(&a, &[2, 3], &[0.0; 6]).unwrap();
        save_labels(&l, &[0, 1]).unwrap();
        assert!(matches!(load_activations(&a, &l, None), Err(Error::ShapeMismatch(_))));

        npy::save_i64(&a, &[2, 1, 1, 1], &[0, 1]).unwrap();
        assert!(matches!(
            load_activations(&a, &l, None),
            Err(Error::UnsupportedDtype(_))
        ));

        npy::save_f64(&a, &[2, 1, 1, 1], &[0.0, 1.0]).unwrap();
        npy::save_f64(&l, &[2], &[0.0, 1.0]).unwrap();
        assert!(matches!(
            load_activations(&a, &l, None),
            Err(Error::UnsupportedDtype(_))
        ));
    }

    #[test]
    fn labels_beyond_declared_count() {
        let r = ActivationSet::new(vec![0.0, 0.0], [2, 1, 1, 1], vec![0, 2], 2);
        assert!(matches!(r, Err(Error::LabelOutOfRange { label: 2, .. })));
    }

    #[test]
    fn matrix_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.npy");
        let eye = DMatrix::<f64>::identity(2, 2);
        save_matrix(&eye, &p).unwrap();
        assert_eq!(load_matrix(&p).unwrap(), eye);

        let col = DMatrix::from_column_slice(3, 1, &[1.5, -2.0, 0.0]);
        save_matrix(&col, &p).unwrap();
        assert_eq!(load_matrix(&p).unwrap(), col);

        let rect = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        save_matrix(&rect, &p).unwrap();
        assert_eq!(load_matrix(&p).unwrap(), rect);
    }

    #[test]
    fn empty_matrix_rejected() {
        let dir = tempdir().unwrap();
        let m = DMatrix::<f64>::zeros(0, 3);
        assert!(matches!(
            save_matrix(&m, &dir.path().join("m.npy")),
            Err(Error::MalformedFile(_))
        ));
    }

    #[test]
    fn load_matrix_requires_rank_two() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.npy");
        npy::save_f64(&p, &[3], &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(load_matrix(&p), Err(Error::MalformedFile(_))));
    }

    #[test]
    fn flatten_is_channel_major() {
        let acts = ActivationSet::new((0..8).map(|v| v as f64).collect(), [2, 2, 1, 2], vec![0, 1], 2).unwrap();
        let m = acts.flatten();
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(acts.feature_map(1, 1), &[6.0, 7.0]);
        let sel = acts.select_channels(&[1]).unwrap();
        assert_eq!(sel.data(), &[2.0, 3.0, 6.0, 7.0]);
    }
}
