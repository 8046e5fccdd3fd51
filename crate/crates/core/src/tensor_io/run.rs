//! Multi-layer run directories.
//!
//! ```text
//! <run>/manifest.json            {"layers": [...], "num_classes": F, ...}
//! <run>/labels.npy               N, integer
//! <run>/logits.npy               N×F, float (optional)
//! <run>/<layer>/activations.npy  N×C×H×W, float
//! ```
//!
//! Layer order in the manifest is network order; index 1 is the first layer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_activations, load_labels, load_logits, npy, save_labels, ActivationSet, LogitSet};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const LABELS: &str = "labels.npy";
pub const LOGITS: &str = "logits.npy";
pub const ACTIVATIONS: &str = "activations.npy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub layers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunBundle {
    root: PathBuf,
    manifest: Manifest,
}

impl RunBundle {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::MalformedFile(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?;
        validate_manifest(&manifest)?;
        Ok(Self { root, manifest })
    }

    /// Creates the directory and writes the manifest.
    pub fn create(root: impl Into<PathBuf>, manifest: Manifest) -> Result<Self> {
        validate_manifest(&manifest)?;
        let root = root.into();
        fs::create_dir_all(&root)?;
        fs::write(root.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn layers(&self) -> &[String] {
        &self.manifest.layers
    }

    pub fn labels_path(&self) -> PathBuf {
        self.root.join(LABELS)
    }

    pub fn logits_path(&self) -> PathBuf {
        self.root.join(LOGITS)
    }

    pub fn layer_path(&self, layer: &str) -> PathBuf {
        self.root.join(layer).join(ACTIVATIONS)
    }

    pub fn has_logits(&self) -> bool {
        self.logits_path().exists()
    }

    fn require_layer(&self, layer: &str) -> Result<()> {
        if self.manifest.layers.iter().any(|l| l == layer) {
            Ok(())
        } else {
            Err(Error::MalformedFile(format!(
                "layer {layer:?} is not listed in the manifest"
            )))
        }
    }

    pub fn load_labels(&self) -> Result<Vec<usize>> {
        load_labels(&self.labels_path())
    }

    pub fn load_layer(&self, layer: &str) -> Result<ActivationSet> {
        self.require_layer(layer)?;
        load_activations(&self.layer_path(layer), &self.labels_path(), self.manifest.num_classes)
            .map_err(|e| e.in_layer(layer))
    }

    pub fn load_logits(&self) -> Result<LogitSet> {
        load_logits(&self.logits_path(), self.load_labels()?)
    }

    /// Writes one layer's activations (`f8`); the shared label file is
    /// written with [`RunBundle::write_labels`].
    pub fn write_layer(&self, layer: &str, acts: &ActivationSet) -> Result<()> {
        self.require_layer(layer)?;
        fs::create_dir_all(self.root.join(layer))?;
        npy::save_f64(&self.layer_path(layer), &acts.shape(), acts.data())
    }

    pub fn write_labels(&self, labels: &[usize]) -> Result<()> {
        save_labels(&self.labels_path(), labels)
    }

    pub fn write_logits(&self, logits: &LogitSet) -> Result<()> {
        let m = logits.logits();
        let rows: Vec<f64> = m.transpose().as_slice().to_vec();
        npy::save_f64(&self.logits_path(), &[m.nrows(), m.ncols()], &rows)
    }
}

fn validate_manifest(m: &Manifest) -> Result<()> {
    if m.layers.is_empty() {
        return Err(Error::MalformedFile("manifest lists no layers".into()));
    }
    for (i, name) in m.layers.iter().enumerate() {
        if name.is_empty() || name == "." || name == ".." || name.contains(['/', '\\']) {
            return Err(Error::MalformedFile(format!("invalid layer name {name:?}")));
        }
        if m.layers[..i].contains(name) {
            return Err(Error::MalformedFile(format!("duplicate layer {name:?}")));
        }
    }
    Ok(())
}
