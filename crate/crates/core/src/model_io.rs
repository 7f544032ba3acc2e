//! Versioned JSON container for a trained model.
//!
//! ```text
//! {
//!   "format": "deepmmc-model",
//!   "version": 1,
//!   "layers": [ { "rows": R, "cols": C, "weights": [row-major R·C floats] }, ... ],
//!   "clusters": { "k": K, "d": d, "weights": [K·d floats, block z = cluster z] },
//!   "metadata": { "k": K, "d": d, "lambda": λ, "beta": β, "seed": s },
//!   "preprocessing": { "pca": null | {...}, "standardizer": null | {...} }
//! }
//! ```
//!
//! Layer `l` maps `[a, 1]` (width `R`) to `C` units; its last row is the bias.
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::encoder::DeepNet;
use crate::error::{Error, Result};
use crate::mmc::{ClusterModel, ClusterWeights};
use crate::numeric::{PcaBasis, Standardizer};

pub const FORMAT_TAG: &str = "deepmmc-model";
pub const FORMAT_VERSION: u32 = 1;

/// Input transforms applied before encoding, in order: PCA, then
/// standardization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub pca: Option<PcaBasis>,
    pub standardizer: Option<Standardizer>,
}

impl Preprocessing {
    pub fn apply(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = x.to_owned();
        if let Some(p) = &self.pca {
            out = p.project(&out.view())?;
        }
        if let Some(s) = &self.standardizer {
            out = s.apply(&out.view())?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub k: usize,
    pub d: usize,
    pub lambda: f64,
    pub beta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: ClusterModel,
    pub metadata: ModelMetadata,
    pub preprocessing: Preprocessing,
}

impl SavedModel {
    /// Cluster indices for raw (unpreprocessed) inputs.
    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Vec<usize>> {
        let x = self.preprocessing.apply(x)?;
        self.model.predict(&x.view())
    }
}

#[derive(Serialize, Deserialize)]
struct Table {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Blocks {
    k: usize,
    d: usize,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    layers: Vec<Table>,
    clusters: Blocks,
    metadata: ModelMetadata,
    preprocessing: Preprocessing,
}

pub fn to_json(saved: &SavedModel) -> Result<String> {
    let layers = saved
        .model
        .net
        .layers()
        .iter()
        .map(|t| Table {
            rows: t.nrows(),
            cols: t.ncols(),
            weights: t.iter().copied().collect(),
        })
        .collect();
    let w = &saved.model.weights;
    let container = Container {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        layers,
        clusters: Blocks {
            k: w.k(),
            d: w.d(),
            weights: w.as_vector().to_vec(),
        },
        metadata: saved.metadata,
        preprocessing: saved.preprocessing.clone(),
    };
    Ok(serde_json::to_string_pretty(&container)?)
}

pub fn from_json(text: &str, path: &Path) -> Result<SavedModel> {
    let fmt = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let c: Container = serde_json::from_str(text).map_err(|e| fmt(e.to_string()))?;
    if c.format != FORMAT_TAG {
        return Err(fmt(format!("unknown container {:?}", c.format)));
    }
    if c.version != FORMAT_VERSION {
        return Err(fmt(format!("unsupported version {}", c.version)));
    }
    let layers = c
        .layers
        .into_iter()
        .map(|t| Array2::from_shape_vec((t.rows, t.cols), t.weights).map_err(|e| fmt(format!("layer shape: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let net = DeepNet::new(layers).map_err(|e| fmt(e.to_string()))?;
    let weights = ClusterWeights::new(Array1::from(c.clusters.weights), c.clusters.k, c.clusters.d)
        .map_err(|e| fmt(e.to_string()))?;
    if c.metadata.k != weights.k() || c.metadata.d != weights.d() {
        return Err(fmt("metadata disagrees with the cluster weights".into()));
    }
    let model = ClusterModel::new(net, weights).map_err(|e| fmt(e.to_string()))?;
    Ok(SavedModel {
        model,
        metadata: c.metadata,
        preprocessing: c.preprocessing,
    })
}

pub fn save_model(path: &Path, saved: &SavedModel) -> Result<()> {
    write_atomic(path, to_json(saved)?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use rand::Rng;

    fn sample_model() -> SavedModel {
        let mut rng = SeededRng::new(5);
        let net = DeepNet::new(vec![
            Array2::from_shape_fn((4, 3), |_| rng.random::<f64>() - 0.5),
            Array2::from_shape_fn((4, 2), |_| rng.random::<f64>() - 0.5),
        ])
        .unwrap();
        let w = ClusterWeights::new(Array1::from_shape_fn(6, |_| rng.random::<f64>() / 3.0), 3, 2).unwrap();
        SavedModel {
            model: ClusterModel::new(net, w).unwrap(),
            metadata: ModelMetadata {
                k: 3,
                d: 2,
                lambda: 0.02,
                beta: 1.0,
                seed: 9,
            },
            preprocessing: Preprocessing {
                pca: None,
                standardizer: Some(Standardizer {
                    mean: vec![0.1, 0.2, 0.3],
                    stddev: vec![1.0, 2.0, 0.0],
                    degenerate: vec![false, false, true],
                }),
            },
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let saved = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &saved).unwrap();
        assert_eq!(load_model(&path).unwrap(), saved);
    }

    #[test]
    fn rejects_wrong_version_and_shape() {
        let text = to_json(&sample_model()).unwrap();
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(from_json(&bumped, Path::new("m")), Err(Error::Format { .. })));
        let broken = text.replace("\"rows\": 4", "\"rows\": 5");
        assert!(matches!(from_json(&broken, Path::new("m")), Err(Error::Format { .. })));
    }
}
