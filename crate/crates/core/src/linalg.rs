//! Shared numeric machinery: per-dimension standardization and PCA.
//!
//! PCA is computed from the SVD of the centered data matrix. For wide
//! matrices (more dimensions than observations) the right singular vectors
//! are recovered from the eigendecomposition of the n×n Gram matrix, which
//! is the same factorization at a fraction of the cost.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Standard deviations below this are treated as constant dimensions.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits per-dimension mean and population standard deviation.
    /// Constant dimensions get a unit scale so they map to zero.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < STD_FLOOR {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Principal axes in non-increasing order of explained variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// One unit-length axis per row.
    pub axes: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// Fits at most `p` axes. Axes whose singular value is numerically zero
    /// are dropped, so `axes.len()` is `min(p, rank)`.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R], p: usize) -> Self {
        let n = rows.len();
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        if n > 0 {
            mean.iter_mut().for_each(|m| *m /= n as f64);
        }
        if n < 2 || dim == 0 || p == 0 {
            return Self { mean, axes: Vec::new(), explained_variance: Vec::new() };
        }
        let centered = DMatrix::from_fn(n, dim, |i, j| rows[i].as_ref()[j] - mean[j]);
        let (singular, vt) = if dim > n { wide_svd(&centered) } else { tall_svd(&centered) };
        let smax = singular.first().copied().unwrap_or(0.0);
        let tol = smax * (n.max(dim) as f64) * f64::EPSILON * 4.0;
        let mut axes = Vec::new();
        let mut explained_variance = Vec::new();
        for (k, &s) in singular.iter().enumerate() {
            if axes.len() == p || s <= tol || s == 0.0 {
                break;
            }
            let mut axis: Vec<f64> = vt.row(k).iter().copied().collect();
            normalize(&mut axis);
            apply_sign_convention(&mut axis);
            axes.push(axis);
            explained_variance.push(s * s / (n as f64 - 1.0));
        }
        Self { mean, axes, explained_variance }
    }

    pub fn n_axes(&self) -> usize {
        self.axes.len()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.axes.iter().map(|a| a.iter().zip(x).zip(&self.mean).map(|((a, v), m)| a * (v - m)).sum()).collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (a, c) in self.axes.iter().zip(coords) {
            for (o, v) in out.iter_mut().zip(a) {
                *o += c * v;
            }
        }
        out
    }
}

/// Largest-magnitude loading positive; ties resolved toward the lowest index.
pub fn apply_sign_convention(axis: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in axis.iter().enumerate() {
        if v.abs() > axis[best].abs() {
            best = i;
        }
    }
    if axis.get(best).is_some_and(|v| *v < 0.0) {
        axis.iter_mut().for_each(|v| *v = -*v);
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Singular values (descending) and right singular vectors as rows.
fn tall_svd(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let sorted = DMatrix::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    (values, sorted)
}

fn wide_svd(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let gram = gram(x);
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let u = DMatrix::from_fn(x.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    // V = Xᵀ U Σ⁻¹, computed as (Uᵀ X) row-scaled.
    let mut vt = u.transpose() * x;
    for (k, s) in values.iter().enumerate() {
        let inv = if *s > 0.0 { 1.0 / s } else { 0.0 };
        vt.row_mut(k).iter_mut().for_each(|v| *v *= inv);
    }
    (values, vt)
}

/// `x xᵀ` for row-major observations.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let xt = x.transpose();
    x * xt
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Element-wise mean of equal-length vectors.
pub fn mean_vector<R: AsRef<[f64]>>(rows: &[R]) -> Vec<f64> {
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    let mut m = vec![0.0; dim];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r.as_ref()) {
            *a += v;
        }
    }
    let n = rows.len().max(1) as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}
