//! Feature extraction for gait sequences and face images, plus the face
//! feature space (standardizer + PCA) fitted on a background set.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{FaceImage, GaitSequence, GAIT_COLUMNS};
use crate::linalg::{Pca, Standardizer};

/// Working resolution of the face pipeline.
pub const FACE_WORK_SIZE: usize = 64;
pub const FACE_FEATURE_DIM: usize = FACE_WORK_SIZE * FACE_WORK_SIZE;
pub const DEFAULT_MAX_COMPONENTS: usize = 150;
/// Leading pose axes kept by [`gait_simple`].
pub const SIMPLE_AXES: usize = 4;
pub const SIMPLE_DIM: usize = (SIMPLE_AXES + 1) * GAIT_COLUMNS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid component count {p}: must be in 1..={max}")]
    InvalidComponents { p: usize, max: usize },
    #[error("feature space model is not fitted")]
    ModelNotFitted,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("model file {path}: {message}")]
    Storage { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitFeatureKind {
    Flatten,
    Simple,
}

impl GaitFeatureKind {
    pub fn extract(self, seq: &GaitSequence) -> FeatureVector {
        match self {
            GaitFeatureKind::Flatten => gait_flatten(seq),
            GaitFeatureKind::Simple => gait_simple(seq),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GaitFeatureKind::Flatten => "flatten",
            GaitFeatureKind::Simple => "simple",
        }
    }
}

/// Row-major flattening, 100 × 156 → 15,600 values.
pub fn gait_flatten(seq: &GaitSequence) -> FeatureVector {
    FeatureVector::new(seq.as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleFeatures {
    pub features: FeatureVector,
    /// Number of non-degenerate axes; below [`SIMPLE_AXES`] the missing axes are zero.
    pub rank: usize,
}

impl SimpleFeatures {
    pub fn is_degenerate(&self) -> bool {
        self.rank < SIMPLE_AXES
    }
}

/// PCA over the poses of one sequence: the four leading unit axes followed
/// by the mean pose, 5 × 156 = 780 values. Missing axes are zero-padded.
pub fn gait_simple_detailed(seq: &GaitSequence) -> SimpleFeatures {
    let poses: Vec<&[f64]> = (0..seq.n_frames()).map(|t| seq.frame(t)).collect();
    let pca = Pca::fit(&poses, SIMPLE_AXES);
    let mut values = Vec::with_capacity(SIMPLE_DIM);
    for k in 0..SIMPLE_AXES {
        match pca.axes.get(k) {
            Some(axis) => values.extend_from_slice(axis),
            None => values.extend(std::iter::repeat_n(0.0, GAIT_COLUMNS)),
        }
    }
    values.extend_from_slice(&pca.mean);
    SimpleFeatures { features: FeatureVector::new(values), rank: pca.n_axes() }
}

pub fn gait_simple(seq: &GaitSequence) -> FeatureVector {
    gait_simple_detailed(seq).features
}

/// ITU-R BT.601 luma.
pub fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2])
}

/// Source-interval overlap weights for area-averaging `n_in` samples onto `n_out`.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut w = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                if overlap > 0.0 {
                    w.push((i, overlap / scale));
                }
                i += 1;
            }
            w
        })
        .collect()
}

/// Grayscale, area-averaged to `size`×`size`, row-major.
pub fn face_pixels(img: &FaceImage, size: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let gray: Vec<f64> = img.as_bytes().chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).collect();
    let wx = area_weights(w, size);
    let wy = area_weights(h, size);
    let mut rows = vec![0.0; h * size];
    for y in 0..h {
        for (ox, weights) in wx.iter().enumerate() {
            rows[y * size + ox] = weights.iter().map(|&(x, k)| k * gray[y * w + x]).sum();
        }
    }
    let mut out = vec![0.0; size * size];
    for (oy, weights) in wy.iter().enumerate() {
        for ox in 0..size {
            out[oy * size + ox] = weights.iter().map(|&(y, k)| k * rows[y * size + ox]).sum();
        }
    }
    out
}

/// Standardizer and PCA basis of the face pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpaceModel {
    pub standardizer: Standardizer,
    pub pca: Pca,
    pub p: usize,
}

pub fn default_components(n: usize) -> usize {
    DEFAULT_MAX_COMPONENTS.min(n.saturating_sub(1))
}

/// Fits the face feature space. `p` must satisfy `1 <= p <= min(n − 1, 4096)`.
pub fn fit_feature_space(images: &[FaceImage], p: usize) -> Result<FeatureSpaceModel, FeatureError> {
    if images.len() < 2 {
        return Err(FeatureError::TooFewSamples { needed: 2, got: images.len() });
    }
    let max = (images.len() - 1).min(FACE_FEATURE_DIM);
    if p == 0 || p > max {
        return Err(FeatureError::InvalidComponents { p, max });
    }
    let raw: Vec<Vec<f64>> = images.iter().map(|img| face_pixels(img, FACE_WORK_SIZE)).collect();
    let standardizer = Standardizer::fit(&raw);
    let standardized: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.transform(r)).collect();
    let pca = Pca::fit(&standardized, p);
    Ok(FeatureSpaceModel { standardizer, pca, p })
}

/// Projects a face into the model's PCA coordinates. Axes the data could
/// not support (rank below `p`) project to zero, so the output always has
/// `p` values.
pub fn project_face(img: &FaceImage, model: &FeatureSpaceModel) -> Result<FeatureVector, FeatureError> {
    if model.standardizer.dim() == 0 || model.p == 0 {
        return Err(FeatureError::ModelNotFitted);
    }
    let raw = face_pixels(img, FACE_WORK_SIZE);
    let mut coords = model.pca.project(&model.standardizer.transform(&raw));
    coords.resize(model.p, 0.0);
    Ok(FeatureVector::new(coords))
}

impl FeatureSpaceModel {
    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let storage = |e: &dyn std::fmt::Display| FeatureError::Storage {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let text = serde_json::to_string(self).map_err(|e| storage(&e))?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| storage(&e))?;
        }
        fs::write(path, text).map_err(|e| storage(&e))
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let storage = |e: &dyn std::fmt::Display| FeatureError::Storage {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let text = fs::read_to_string(path).map_err(|e| storage(&e))?;
        serde_json::from_str(&text).map_err(|e| storage(&e))
    }
}

/// Hex SHA-256 over length-prefixed parts; used to key cached artifacts.
pub fn cache_key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}
