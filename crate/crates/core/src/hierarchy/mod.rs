//! Coarse label hierarchies: many-to-one maps from fine classes to coarse
//! groups, learned from class centroids or from a classifier's confusions.

mod kmeans;
mod spectral;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::ActivationSet;

pub use kmeans::{kmeans, Clustering, KMeansConfig};
pub use spectral::{confusion_matrix, spectral_embedding, spectral_mapping, ConfusionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingMethod {
    KmeansCentroids,
    SpectralConfusion,
    GroundTruth,
}

/// Fine class `f` belongs to coarse class `map[f]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseMapping {
    pub method: MappingMethod,
    pub seed: u64,
    pub num_fine: usize,
    pub num_coarse: usize,
    pub map: Vec<usize>,
    /// Number of samples the mapping was learned from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_samples: Option<usize>,
}

impl CoarseMapping {
    pub fn new(map: Vec<usize>, num_coarse: usize, method: MappingMethod, seed: u64) -> Result<Self> {
        let q = Self {
            method,
            seed,
            num_fine: map.len(),
            num_coarse,
            map,
            num_samples: None,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_num_samples(mut self, n: usize) -> Self {
        self.num_samples = Some(n);
        self
    }

    /// Checks totality, surjectivity and `1 ≤ C < F`.
    pub fn validate(&self) -> Result<()> {
        if self.map.len() != self.num_fine {
            return Err(Error::ShapeMismatch(format!(
                "map has {} entries for {} fine classes",
                self.map.len(),
                self.num_fine
            )));
        }
        if self.num_coarse == 0 || self.num_coarse >= self.num_fine {
            return Err(Error::InvalidClusterCount {
                requested: self.num_coarse,
                num_points: self.num_fine,
            });
        }
        let mut hit = vec![false; self.num_coarse];
        for &c in &self.map {
            if c >= self.num_coarse {
                return Err(Error::LabelOutOfRange {
                    label: c as i64,
                    num_classes: self.num_coarse,
                });
            }
            hit[c] = true;
        }
        if let Some(c) = hit.iter().position(|&h| !h) {
            return Err(Error::DegenerateClass {
                class: c,
                reason: "coarse class has no fine classes".into(),
            });
        }
        Ok(())
    }

    /// Members of each coarse class, in fine-id order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.num_coarse];
        for (f, &c) in self.map.iter().enumerate() {
            g[c].push(f);
        }
        g
    }

    /// `other ∘ self`: maps fine classes straight to `other`'s coarse ids.
    pub fn compose(&self, other: &CoarseMapping) -> Result<CoarseMapping> {
        if other.num_fine != self.num_coarse {
            return Err(Error::ShapeMismatch(format!(
                "cannot compose a map onto {} classes with one from {}",
                self.num_coarse, other.num_fine
            )));
        }
        let map = self.map.iter().map(|&c| other.map[c]).collect();
        CoarseMapping::new(map, other.num_coarse, other.method, other.seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let q: CoarseMapping =
            serde_json::from_str(text).map_err(|e| Error::MalformedFile(format!("coarse mapping: {e}")))?;
        q.validate()?;
        Ok(q)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Mean flattened activation per class, F×D.
pub fn class_centroids(acts: &ActivationSet) -> Result<DMatrix<f64>> {
    let f = acts.num_classes();
    let d = acts.sample_dim();
    let mut sums = DMatrix::<f64>::zeros(f, d);
    let mut counts = vec![0usize; f];
    for (i, &y) in acts.labels().iter().enumerate() {
        counts[y] += 1;
        let row = &acts.data()[i * d..(i + 1) * d];
        for (j, v) in row.iter().enumerate() {
            sums[(y, j)] += v;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateClass {
            class: c,
            reason: "class has no samples".into(),
        });
    }
    for (y, &n) in counts.iter().enumerate() {
        sums.row_mut(y).unscale_mut(n as f64);
    }
    Ok(sums)
}

/// Clusters class centroids into `num_coarse` groups.
pub fn kmeans_mapping(centroids: &DMatrix<f64>, num_coarse: usize, seed: u64) -> Result<CoarseMapping> {
    let f = centroids.nrows();
    if num_coarse < 2 || num_coarse >= f {
        return Err(Error::InvalidClusterCount {
            requested: num_coarse,
            num_points: f,
        });
    }
    let c = kmeans(centroids, num_coarse, seed, &KMeansConfig::default())?;
    CoarseMapping::new(c.assignment, num_coarse, MappingMethod::KmeansCentroids, seed)
}

pub fn apply_mapping(labels: &[usize], q: &CoarseMapping) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&y| {
            q.map.get(y).copied().ok_or(Error::LabelOutOfRange {
                label: y as i64,
                num_classes: q.num_fine,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_lookup() {
        let q = CoarseMapping::new(vec![0, 0, 1, 1], 2, MappingMethod::GroundTruth, 0).unwrap();
        assert_eq!(apply_mapping(&[0, 3, 1], &q).unwrap(), vec![0, 1, 0]);
        assert_eq!(apply_mapping(&[9], &q).unwrap_err().kind(), "LabelOutOfRange");
        let merged = CoarseMapping::new(vec![0, 0, 1], 2, MappingMethod::GroundTruth, 0).unwrap();
        assert_eq!(apply_mapping(&[0, 1, 2], &merged).unwrap(), vec![0, 0, 1]);
    }

    #[test]
    fn invariants_enforced() {
        let g = MappingMethod::GroundTruth;
        assert!(CoarseMapping::new(vec![0, 0, 0], 2, g, 0).is_err());
        assert!(CoarseMapping::new(vec![0, 1], 2, g, 0).is_err());
        assert!(CoarseMapping::new(vec![0, 2, 1], 2, g, 0).is_err());
        assert!(CoarseMapping::new(vec![0, 1, 1], 2, g, 0).is_ok());
    }

    #[test]
    fn json_round_trip_and_names() {
        let q = CoarseMapping::new(vec![1, 0, 1], 2, MappingMethod::KmeansCentroids, 4)
            .unwrap()
            .with_num_samples(30);
        let text = q.to_json().unwrap();
        assert!(text.contains("\"kmeans-centroids\""));
        assert_eq!(CoarseMapping::from_json(&text).unwrap(), q);
        let bad = text.replace("\"num_coarse\": 2", "\"num_coarse\": 3");
        assert!(CoarseMapping::from_json(&bad).is_err());
    }

    #[test]
    fn compose_two_levels() {
        let g = MappingMethod::GroundTruth;
        let fine = CoarseMapping::new(vec![0, 0, 1, 2, 2, 3], 4, g, 0).unwrap();
        let top = CoarseMapping::new(vec![0, 0, 1, 1], 2, g, 0).unwrap();
        assert_eq!(fine.compose(&top).unwrap().map, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn centroids_are_means() {
        let acts = ActivationSet::new(vec![0.0, 0.0, 2.0, 2.0, 5.0, 7.0], [3, 2, 1, 1], vec![0, 0, 1], 2).unwrap();
        let c = class_centroids(&acts).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 5.0, 7.0]));
        let missing = ActivationSet::new(vec![1.0, 2.0], [2, 1, 1, 1], vec![0, 0], 4).unwrap();
        assert!(matches!(
            class_centroids(&missing),
            Err(Error::DegenerateClass { class: 1, .. })
        ));
    }

    #[test]
    fn kmeans_mapping_groups() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.1, 0.0, 10.0, 10.0, 10.1, 10.0]);
        let q = kmeans_mapping(&pts, 2, 1).unwrap();
        assert_eq!(q.map, vec![0, 0, 1, 1]);
        assert_eq!(q, kmeans_mapping(&pts, 2, 1).unwrap());
        assert_eq!(kmeans_mapping(&pts, 4, 1).unwrap_err().kind(), "InvalidClusterCount");
    }
}
