//! Scatter matrices, discriminant and principal component subspaces, and the
//! distillation losses built on them.
//!
//! Discriminant components maximize `tr(Wᵀ S̄ W)` subject to
//! `Wᵀ (S_W + ρI) W = I`, which is the generalized symmetric eigenproblem
//! `S̄ v = λ (S_W + ρI) v`. The ridge keeps the constraint feasible when the
//! within-class scatter is singular, as it is whenever N < D.

mod eigen;
mod loss;
mod probe;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{load_matrix, save_matrix, LabelScheme};

pub use eigen::generalized_eigh;
pub use loss::{combined_loss, inter_kd_loss, output_kd_loss, DEFAULT_GAMMA, DEFAULT_LAMBDA, DEFAULT_TEMPERATURE};
pub use probe::{linear_probe, ProbeResult, DEFAULT_PROBE_REG};

pub(crate) use eigen::{fix_signs, sorted_eigh, symmetrize};

pub const DEFAULT_RIDGE: f64 = 1e-4;

/// Within-class, between-class and total centered scatter of a labeled
/// sample matrix (unnormalized sums over samples).
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPair {
    pub s_w: DMatrix<f64>,
    pub s_b: DMatrix<f64>,
    pub s_bar: DMatrix<f64>,
    /// Y×D factor of `s_b`: row c is √n_c·(m_c − m), so `s_b = BᵀB`.
    pub between: DMatrix<f64>,
    pub class_counts: Vec<usize>,
}

impl ScatterPair {
    pub fn dim(&self) -> usize {
        self.s_w.nrows()
    }
}

fn check_labels_for(a: &DMatrix<f64>, labels: &[usize], num_classes: usize) -> Result<Vec<usize>> {
    if labels.len() != a.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            a.nrows()
        )));
    }
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: y as i64,
                num_classes,
            });
        }
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateClass {
            class: c,
            reason: "class has no samples".into(),
        });
    }
    Ok(counts)
}

/// `S_W = Σ_y Σ_j (x_j − x̄_y)(x_j − x̄_y)ᵀ`, `S_B = Σ_y N_y (x̄_y − x̄)(x̄_y − x̄)ᵀ`,
/// `S̄ = S_W + S_B`.
pub fn scatter_matrices(a: &DMatrix<f64>, labels: &[usize], num_classes: usize) -> Result<ScatterPair> {
    if a.nrows() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "scatter needs at least 2 samples, got {}",
            a.nrows()
        )));
    }
    let counts = check_labels_for(a, labels, num_classes)?;
    let (n, d) = a.shape();

    let mut class_means = DMatrix::<f64>::zeros(num_classes, d);
    for (i, &y) in labels.iter().enumerate() {
        let mut row = class_means.row_mut(y);
        row += a.row(i);
    }
    for (y, &cnt) in counts.iter().enumerate() {
        class_means.row_mut(y).unscale_mut(cnt as f64);
    }
    let overall = a.row_sum() / n as f64;

    let mut within = a.clone();
    for (i, &y) in labels.iter().enumerate() {
        let mut row = within.row_mut(i);
        row -= class_means.row(y);
    }
    let mut between = class_means.clone();
    for (y, &cnt) in counts.iter().enumerate() {
        let mut row = between.row_mut(y);
        row -= &overall;
        row *= (cnt as f64).sqrt();
    }

    let mut s_w = within.tr_mul(&within);
    let mut s_b = between.tr_mul(&between);
    symmetrize(&mut s_w);
    symmetrize(&mut s_b);
    let s_bar = &s_w + &s_b;
    Ok(ScatterPair {
        s_w,
        s_b,
        s_bar,
        between,
        class_counts: counts,
    })
}

fn ridged(m: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let mut r = m.clone();
    for i in 0..r.nrows() {
        r[(i, i)] += rho;
    }
    r
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("ridge must be positive, got {rho}")))
    }
}

/// `tr((S̄ + ρI)⁻¹ S_B)`.
pub fn discriminant_information(scatter: &ScatterPair, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let chol = ridged(&scatter.s_bar, rho)
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebraFailure("S̄ + ρI is not positive definite".into()))?;
    // tr((LLᵀ)⁻¹BᵀB) = ‖L⁻¹Bᵀ‖²; the factored form stays accurate when S̄ is
    // rank deficient and the ridge dominates the small eigenvalues.
    let z = chol
        .l()
        .solve_lower_triangular(&scatter.between.transpose())
        .ok_or_else(|| Error::LinearAlgebraFailure("singular Cholesky factor".into()))?;
    Ok(z.norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Dca,
    Pca,
}

/// A D×k projection basis with the eigenvalues that ranked its columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DcaProjection {
    pub w: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Ridge added to `S_W`; zero for PCA.
    pub ridge: f64,
    /// Label scheme the basis was learned under; `None` for PCA.
    pub scheme: Option<LabelScheme>,
    pub kind: ProjectionKind,
}

/// JSON sidecar stored next to the basis matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMeta {
    pub kind: ProjectionKind,
    pub ridge: f64,
    pub scheme: Option<LabelScheme>,
    #[serde(serialize_with = "crate::json::serialize_sig17_vec")]
    pub eigenvalues: Vec<f64>,
    pub dim: usize,
    pub components: usize,
    /// Columns beyond this index carry no between-class signal (centered
    /// between-class scatter has rank at most Y − 1); they are kept so the
    /// basis has Y columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub informative_components: Option<usize>,
}

impl DcaProjection {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn components(&self) -> usize {
        self.w.ncols()
    }

    pub fn meta(&self) -> ProjectionMeta {
        ProjectionMeta {
            kind: self.kind,
            ridge: self.ridge,
            scheme: self.scheme.clone(),
            eigenvalues: self.eigenvalues.clone(),
            dim: self.dim(),
            components: self.components(),
            informative_components: match self.kind {
                ProjectionKind::Dca => Some(self.components().saturating_sub(1)),
                ProjectionKind::Pca => None,
            },
        }
    }

    /// `<prefix>.npy` and `<prefix>.json`. A trailing `.npy`/`.json` on the
    /// prefix is ignored.
    pub fn paths(prefix: &Path) -> (PathBuf, PathBuf) {
        let base = match prefix.extension().and_then(|e| e.to_str()) {
            Some("npy") | Some("json") => prefix.with_extension(""),
            _ => prefix.to_path_buf(),
        };
        let mut npy = base.clone().into_os_string();
        npy.push(".npy");
        let mut json = base.into_os_string();
        json.push(".json");
        (npy.into(), json.into())
    }

    pub fn save(&self, prefix: &Path) -> Result<()> {
        let (npy, json) = Self::paths(prefix);
        save_matrix(&self.w, &npy)?;
        fs::write(json, serde_json::to_string_pretty(&self.meta())? + "\n")?;
        Ok(())
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let (npy, json) = Self::paths(prefix);
        let w = load_matrix(&npy)?;
        let text = fs::read_to_string(&json)?;
        let meta: ProjectionMeta =
            serde_json::from_str(&text).map_err(|e| Error::MalformedFile(format!("{}: {e}", json.display())))?;
        if meta.dim != w.nrows() || meta.components != w.ncols() || meta.eigenvalues.len() != w.ncols() {
            return Err(Error::MalformedFile(format!(
                "{}: sidecar describes {}×{} with {} eigenvalues, basis is {}×{}",
                json.display(),
                meta.dim,
                meta.components,
                meta.eigenvalues.len(),
                w.nrows(),
                w.ncols()
            )));
        }
        Ok(Self {
            w,
            eigenvalues: meta.eigenvalues,
            ridge: meta.ridge,
            scheme: meta.scheme,
            kind: meta.kind,
        })
    }
}

/// Top-Y discriminant components of `a` (N×D) under `labels`.
///
/// Y equals the scheme's class count. The Y-th column is ridge-dominated
/// (between-class scatter has rank ≤ Y − 1) and is retained.
pub fn dca_components(a: &DMatrix<f64>, labels: &[usize], scheme: &LabelScheme, rho: f64) -> Result<DcaProjection> {
    check_rho(rho)?;
    let y = scheme.num_classes;
    if a.ncols() < y {
        return Err(Error::InsufficientDimension(format!(
            "{} features cannot hold {y} discriminant components",
            a.ncols()
        )));
    }
    let scatter = scatter_matrices(a, labels, y)?;
    let (values, vectors) = generalized_eigh(&scatter.s_bar, &ridged(&scatter.s_w, rho))?;
    Ok(DcaProjection {
        w: vectors.columns(0, y).into_owned(),
        eigenvalues: values[..y].to_vec(),
        ridge: rho,
        scheme: Some(scheme.clone()),
        kind: ProjectionKind::Dca,
    })
}

/// Top-k principal components of the mean-centered covariance `S̄ / N`.
pub fn pca_components(a: &DMatrix<f64>, k: usize) -> Result<DcaProjection> {
    let (n, d) = a.shape();
    if k == 0 || k > d {
        return Err(Error::InsufficientDimension(format!(
            "cannot take {k} principal components of {d} features"
        )));
    }
    if n == 0 {
        return Err(Error::ShapeMismatch("no samples".into()));
    }
    let mean = a.row_sum() / n as f64;
    let mut z = a.clone();
    for mut row in z.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = z.tr_mul(&z) / n as f64;
    symmetrize(&mut cov);
    let (values, vectors) = sorted_eigh(cov, true)?;
    let mut w = vectors.columns(0, k).into_owned();
    fix_signs(&mut w);
    Ok(DcaProjection {
        w,
        eigenvalues: values[..k].to_vec(),
        ridge: 0.0,
        scheme: None,
        kind: ProjectionKind::Pca,
    })
}

/// `a · w`.
pub fn project(a: &DMatrix<f64>, p: &DcaProjection) -> Result<DMatrix<f64>> {
    if a.ncols() != p.dim() {
        return Err(Error::ShapeMismatch(format!(
            "activations have {} features, projection expects {}",
            a.ncols(),
            p.dim()
        )));
    }
    Ok(a * &p.w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_singletons() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let s = scatter_matrices(&a, &[0, 1], 2).unwrap();
        assert_eq!(s.s_w, DMatrix::zeros(2, 2));
        assert_eq!(s.s_b, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert_eq!(s.class_counts, vec![1, 1]);
    }

    #[test]
    fn identical_samples_have_no_scatter() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let s = scatter_matrices(&a, &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(s.s_w, DMatrix::zeros(2, 2));
        assert_eq!(s.s_b, DMatrix::zeros(2, 2));
    }

    #[test]
    fn empty_class_is_degenerate() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let e = scatter_matrices(&a, &[0, 0, 2], 3).unwrap_err();
        assert!(matches!(e, Error::DegenerateClass { class: 1, .. }));
    }

    #[test]
    fn single_class_has_zero_di() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        let s = scatter_matrices(&a, &[0, 0, 0], 1).unwrap();
        assert_eq!(discriminant_information(&s, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn projection_shapes() {
        let p = DcaProjection {
            w: DMatrix::identity(3, 3),
            eigenvalues: vec![1.0; 3],
            ridge: 0.0,
            scheme: None,
            kind: ProjectionKind::Pca,
        };
        let a = DMatrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64);
        assert_eq!(project(&a, &p).unwrap(), a);
        assert_eq!(project(&DMatrix::zeros(2, 3), &p).unwrap(), DMatrix::zeros(2, 3));
        let p5 = DcaProjection {
            w: DMatrix::identity(5, 2),
            eigenvalues: vec![1.0; 2],
            ..p
        };
        assert_eq!(project(&a, &p5).unwrap_err().kind(), "ShapeMismatch");
    }

    #[test]
    fn insufficient_dimension() {
        let a = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.0, 2.0, 2.0, 3.0, 1.0]);
        let e = dca_components(&a, &[0, 1, 2, 0], &LabelScheme::fine(3), 1e-4).unwrap_err();
        assert_eq!(e.kind(), "InsufficientDimension");
        assert_eq!(pca_components(&a, 3).unwrap_err().kind(), "InsufficientDimension");
        assert_eq!(pca_components(&a, 0).unwrap_err().kind(), "InsufficientDimension");
    }

    #[test]
    fn projection_paths() {
        let (n, j) = DcaProjection::paths(Path::new("out/teacher"));
        assert_eq!(n, PathBuf::from("out/teacher.npy"));
        assert_eq!(j, PathBuf::from("out/teacher.json"));
        let (n, _) = DcaProjection::paths(Path::new("out/teacher.npy"));
        assert_eq!(n, PathBuf::from("out/teacher.npy"));
    }
}
