//! Face anonymizers. Each is a pure transform `FaceImage -> FaceImage`;
//! the randomized ones are deterministic given their seed or key.
//!
//! The three DP-style mechanisms are applied per RGB channel. No privacy
//! accounting is claimed for color images.

use std::fmt;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, FaceImage};
use crate::seed::{derive_rng, rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageAnonError {
    #[error("eye strip of {strip} px does not fit an image of height {height}")]
    StripTooTall { strip: usize, height: usize },
    #[error("blur kernel size must be odd and at least 3, got {0}")]
    EvenKernel(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("k-same background has {available} identities, need at least {needed}")]
    BackgroundTooSmall { needed: usize, available: usize },
    #[error("image is {found}, background images are {expected}")]
    DimensionMismatch { expected: String, found: String },
    #[error("k-same-pixel needs a background dataset")]
    MissingBackground,
}

type Result<T> = std::result::Result<T, ImageAnonError>;

fn invalid(msg: impl Into<String>) -> ImageAnonError {
    ImageAnonError::InvalidParameter(msg.into())
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Vertical center of the eye strip: 40% of the height, rounded.
pub fn eye_line(height: usize) -> usize {
    (0.4 * height as f64).round() as usize
}

/// Blacks out rows `[c − h/2, c + h/2)` around the eye line `c`.
pub fn eye_mask(img: &FaceImage, strip_height_px: usize) -> Result<FaceImage> {
    let height = img.height();
    let c = eye_line(height);
    let half = strip_height_px / 2;
    if strip_height_px >= height || half > c || c + (strip_height_px - half) > height {
        return Err(ImageAnonError::StripTooTall { strip: strip_height_px, height });
    }
    let mut out = img.clone();
    let row = img.width() * 3;
    out.as_bytes_mut()[(c - half) * row..(c + strip_height_px - half) * row].fill(0);
    Ok(out)
}

/// Reflect-101 border: index −1 maps to 1, index n maps to n − 2.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn gaussian_kernel(kernel_size: usize) -> Vec<f64> {
    let sigma = (kernel_size as f64 - 1.0) / 6.0;
    let r = (kernel_size / 2) as isize;
    let w: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur, σ = (kernel_size − 1)/6, reflect-101 borders.
pub fn gaussian_blur(img: &FaceImage, kernel_size: usize) -> Result<FaceImage> {
    if kernel_size.is_multiple_of(2) || kernel_size < 3 {
        return Err(ImageAnonError::EvenKernel(kernel_size));
    }
    let (w, h) = (img.width(), img.height());
    let kernel = gaussian_kernel(kernel_size);
    let r = (kernel_size / 2) as isize;
    let src: Vec<f64> = img.as_bytes().iter().map(|&v| f64::from(v)).collect();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                tmp[(y * w + x) * 3 + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wk)| wk * src[(y * w + reflect(x as isize + k as isize - r, w)) * 3 + c])
                    .sum();
            }
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wk)| wk * tmp[(reflect(y as isize + k as isize - r, h) * w + x) * 3 + c])
                    .sum();
                out[(y * w + x) * 3 + c] = to_u8(v);
            }
        }
    }
    Ok(FaceImage::new(w, h, out).expect("same shape"))
}

/// k-RTIO: averages `k` key-derived overlays of random block colors, each
/// with its block grid permuted by a key-seeded permutation, and blends the
/// average into the image with weight `alpha`.
pub fn krtio(img: &FaceImage, alpha: f64, block_size: usize, k: usize, key: u64) -> Result<FaceImage> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(invalid(format!("krtio alpha must be in [0, 1), got {alpha}")));
    }
    if block_size == 0 || k == 0 {
        return Err(invalid("krtio block size and k must be at least 1"));
    }
    let (w, h) = (img.width(), img.height());
    let (bx, by) = (w.div_ceil(block_size), h.div_ceil(block_size));
    let n_blocks = bx * by;
    let mut mean = vec![[0.0f64; 3]; n_blocks];
    for i in 0..k as u64 {
        let mut colors = derive_rng(key, "krtio-overlay", &[i]);
        let base: Vec<[f64; 3]> =
            (0..n_blocks).map(|_| std::array::from_fn(|_| f64::from(colors.random::<u8>()))).collect();
        let mut perm: Vec<usize> = (0..n_blocks).collect();
        perm.shuffle(&mut derive_rng(key, "krtio-permutation", &[i]));
        for (cell, src) in perm.into_iter().enumerate() {
            for c in 0..3 {
                mean[cell][c] += base[src][c] / k as f64;
            }
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let overlay = mean[(y / block_size) * bx + x / block_size];
            let p = img.pixel(x, y);
            out.set_pixel(x, y, std::array::from_fn(|c| to_u8((1.0 - alpha) * f64::from(p[c]) + alpha * overlay[c])));
        }
    }
    Ok(out)
}

/// Laplace scale of the DP pixelization mechanism: 255·m / (b²·ε).
pub fn dp_pix_scale(epsilon: f64, b: usize, m: usize) -> f64 {
    255.0 * m as f64 / ((b * b) as f64 * epsilon)
}

fn laplace(r: &mut impl Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    // u uniform in (-0.5, 0.5), strictly inside so the log stays finite.
    let mut u: f64 = r.random::<f64>() - 0.5;
    while u <= -0.5 {
        u = r.random::<f64>() - 0.5;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Per channel, b×b block means plus Laplace noise of scale 255·m/(b²ε).
pub fn dp_pix(img: &FaceImage, epsilon: f64, b: usize, m: usize, seed: u64) -> Result<FaceImage> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("dp-pix epsilon must be positive, got {epsilon}")));
    }
    if b == 0 || m == 0 {
        return Err(invalid("dp-pix b and m must be at least 1"));
    }
    let (w, h) = (img.width(), img.height());
    if b > w.min(h) {
        return Err(invalid(format!("dp-pix block {b} exceeds image size {w}x{h}")));
    }
    let scale = dp_pix_scale(epsilon, b, m);
    let mut r = rng(seed);
    let mut out = img.clone();
    for by in (0..h).step_by(b) {
        for bx in (0..w).step_by(b) {
            let (ye, xe) = ((by + b).min(h), (bx + b).min(w));
            let n = ((ye - by) * (xe - bx)) as f64;
            let mut sum = [0.0f64; 3];
            for y in by..ye {
                for x in bx..xe {
                    let p = img.pixel(x, y);
                    for c in 0..3 {
                        sum[c] += f64::from(p[c]);
                    }
                }
            }
            let value: [u8; 3] = std::array::from_fn(|c| to_u8(sum[c] / n + laplace(&mut r, scale)));
            for y in by..ye {
                for x in bx..xe {
                    out.set_pixel(x, y, value);
                }
            }
        }
    }
    Ok(out)
}

pub const SNOW_GRAY: [u8; 3] = [127, 127, 127];

/// Replaces each pixel with mid-gray independently with probability `d`.
pub fn dp_snow(img: &FaceImage, d: f64, seed: u64) -> Result<FaceImage> {
    if !(0.0..=1.0).contains(&d) {
        return Err(invalid(format!("dp-snow d must be in [0, 1], got {d}")));
    }
    let mut r = rng(seed);
    let mut out = img.clone();
    for px in out.as_bytes_mut().chunks_exact_mut(3) {
        if r.random::<f64>() < d {
            px.copy_from_slice(&SNOW_GRAY);
        }
    }
    Ok(out)
}

/// 1-D k-means over 8-bit intensities with centroids initialized at `k`
/// evenly spaced intensities. Empty clusters keep their centroid.
/// Returns centroids and cluster sizes.
pub fn kmeans_1d(histogram: &[usize; 256], k: usize, iterations: usize) -> (Vec<f64>, Vec<usize>) {
    let mut centroids: Vec<f64> =
        (0..k).map(|j| if k == 1 { 127.5 } else { 255.0 * j as f64 / (k - 1) as f64 }).collect();
    let assign = |centroids: &[f64]| -> Vec<usize> { (0..256).map(|v| nearest(centroids, v as f64)).collect() };
    for _ in 0..iterations {
        let labels = assign(&centroids);
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (v, &n) in histogram.iter().enumerate() {
            sum[labels[v]] += v as f64 * n as f64;
            count[labels[v]] += n;
        }
        for j in 0..k {
            if count[j] > 0 {
                centroids[j] = sum[j] / count[j] as f64;
            }
        }
    }
    let labels = assign(&centroids);
    let mut count = vec![0usize; k];
    for (v, &n) in histogram.iter().enumerate() {
        count[labels[v]] += n;
    }
    (centroids, count)
}

/// Index of the closest value; ties go to the lower index.
fn nearest(centroids: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate() {
        if (v - c).abs() < (v - centroids[best]).abs() {
            best = j;
        }
    }
    best
}

/// Draws `m` distinct indices without replacement, each step choosing among
/// the remaining ones with probability proportional to `weights`.
pub fn weighted_sample_without_replacement(weights: &[f64], m: usize, r: &mut impl Rng) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut chosen = Vec::with_capacity(m);
    while chosen.len() < m && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = r.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &i) in remaining.iter().enumerate() {
            if u < weights[i] {
                pick = pos;
                break;
            }
            u -= weights[i];
        }
        chosen.push(remaining.remove(pick));
    }
    chosen
}

/// Per channel: k-means palette of size `k`, exponential-mechanism choice of
/// `m` clusters weighted by exp(ε·count/(2·n_pixels)), then every pixel
/// mapped to the nearest chosen centroid.
pub fn dp_samp(img: &FaceImage, epsilon: f64, k: usize, m: usize, seed: u64) -> Result<FaceImage> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("dp-samp epsilon must be positive, got {epsilon}")));
    }
    if m == 0 || m > k {
        return Err(invalid(format!("dp-samp needs 1 <= m <= k, got m={m}, k={k}")));
    }
    let n_px = img.n_pixels() as f64;
    let mut r = rng(seed);
    let mut out = img.clone();
    for c in 0..3 {
        let mut hist = [0usize; 256];
        for px in img.as_bytes().chunks_exact(3) {
            hist[px[c] as usize] += 1;
        }
        let (centroids, counts) = kmeans_1d(&hist, k, 20);
        let weights: Vec<f64> = counts.iter().map(|&n| (epsilon * n as f64 / (2.0 * n_px)).exp()).collect();
        let mut chosen = weighted_sample_without_replacement(&weights, m, &mut r);
        chosen.sort_unstable();
        let palette: Vec<f64> = chosen.iter().map(|&j| centroids[j]).collect();
        let lut: Vec<u8> = (0..256).map(|v| to_u8(palette[nearest(&palette, v as f64)])).collect();
        for px in out.as_bytes_mut().chunks_exact_mut(3) {
            px[c] = lut[px[c] as usize];
        }
    }
    Ok(out)
}

/// Per-identity mean faces of a background dataset, computed once.
#[derive(Debug, Clone)]
pub struct KSameBackground {
    width: usize,
    height: usize,
    ids: Vec<String>,
    representatives: Vec<Vec<f64>>,
}

impl KSameBackground {
    pub fn from_images(identities: Vec<(String, Vec<FaceImage>)>) -> Result<Self> {
        let first = identities
            .iter()
            .flat_map(|(_, imgs)| imgs.first())
            .next()
            .ok_or(ImageAnonError::BackgroundTooSmall { needed: 1, available: 0 })?;
        let (width, height) = (first.width(), first.height());
        let mut ids = Vec::new();
        let mut representatives = Vec::new();
        for (id, imgs) in identities {
            if imgs.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; width * height * 3];
            for img in &imgs {
                if img.width() != width || img.height() != height {
                    return Err(ImageAnonError::DimensionMismatch {
                        expected: format!("{width}x{height}"),
                        found: format!("{}x{}", img.width(), img.height()),
                    });
                }
                for (m, &v) in mean.iter_mut().zip(img.as_bytes()) {
                    *m += f64::from(v);
                }
            }
            mean.iter_mut().for_each(|m| *m /= imgs.len() as f64);
            ids.push(id);
            representatives.push(mean);
        }
        Ok(Self { width, height, ids, representatives })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let identities = ds
            .manifest
            .identities
            .iter()
            .zip(&ds.samples)
            .map(|(rec, samples)| (rec.id.clone(), samples.iter().filter_map(|s| s.as_face().cloned()).collect()))
            .collect();
        Self::from_images(identities)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn representative(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|i| i == id).map(|p| self.representatives[p].as_slice())
    }
}

/// Mean of the `k` background representatives closest to `img`
/// (Euclidean in pixel space, ties by identity id).
pub fn k_same_pixel(img: &FaceImage, k: usize, background: &KSameBackground) -> Result<FaceImage> {
    if k == 0 {
        return Err(invalid("k-same-pixel k must be at least 1"));
    }
    if background.len() < k {
        return Err(ImageAnonError::BackgroundTooSmall { needed: k, available: background.len() });
    }
    if img.width() != background.width || img.height() != background.height {
        return Err(ImageAnonError::DimensionMismatch {
            expected: format!("{}x{}", background.width, background.height),
            found: format!("{}x{}", img.width(), img.height()),
        });
    }
    let px = img.as_bytes();
    let mut order: Vec<(f64, usize)> = background
        .representatives
        .iter()
        .enumerate()
        .map(|(i, rep)| (rep.iter().zip(px).map(|(a, &b)| (a - f64::from(b)).powi(2)).sum(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| background.ids[a.1].cmp(&background.ids[b.1])));
    let mut mean = vec![0.0; px.len()];
    for &(_, i) in &order[..k] {
        for (m, v) in mean.iter_mut().zip(&background.representatives[i]) {
            *m += v;
        }
    }
    let data = mean.into_iter().map(|v| to_u8(v / k as f64)).collect();
    Ok(FaceImage::new(img.width(), img.height(), data).expect("same shape"))
}

fn d_strip() -> usize {
    140
}
fn d_kernel() -> usize {
    101
}
fn d_krtio_alpha() -> f64 {
    0.4
}
fn d_krtio_block() -> usize {
    18
}
fn d_krtio_k() -> usize {
    3
}
fn d_krtio_key() -> u64 {
    0x6B72_7469_6F00_0001
}
fn d_pix_epsilon() -> f64 {
    2.0
}
fn d_pix_b() -> usize {
    12
}
fn d_pix_m() -> usize {
    16
}
fn d_snow_d() -> f64 {
    0.01
}
fn d_samp_epsilon() -> f64 {
    5.0
}
fn d_samp_k() -> usize {
    24
}
fn d_samp_m() -> usize {
    12
}
fn d_ksame_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageAnonymizerSpec {
    EyeMask {
        #[serde(default = "d_strip")]
        strip_height_px: usize,
    },
    GaussianBlur {
        #[serde(default = "d_kernel")]
        kernel_size: usize,
    },
    Krtio {
        #[serde(default = "d_krtio_alpha")]
        alpha: f64,
        #[serde(default = "d_krtio_block")]
        block_size: usize,
        #[serde(default = "d_krtio_k")]
        k: usize,
        #[serde(default = "d_krtio_key")]
        key: u64,
    },
    DpPix {
        #[serde(default = "d_pix_epsilon")]
        epsilon: f64,
        #[serde(default = "d_pix_b")]
        b: usize,
        #[serde(default = "d_pix_m")]
        m: usize,
    },
    DpSnow {
        #[serde(default = "d_snow_d")]
        d: f64,
    },
    DpSamp {
        #[serde(default = "d_samp_epsilon")]
        epsilon: f64,
        #[serde(default = "d_samp_k")]
        k: usize,
        #[serde(default = "d_samp_m")]
        m: usize,
    },
    KSamePixel {
        #[serde(default = "d_ksame_k")]
        k: usize,
        /// Background dataset directory; when absent the run's background
        /// dataset is used.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        background: Option<PathBuf>,
    },
}

impl ImageAnonymizerSpec {
    pub fn eye_mask() -> Self {
        Self::EyeMask { strip_height_px: d_strip() }
    }
    pub fn gaussian_blur() -> Self {
        Self::GaussianBlur { kernel_size: d_kernel() }
    }
    pub fn krtio() -> Self {
        Self::Krtio { alpha: d_krtio_alpha(), block_size: d_krtio_block(), k: d_krtio_k(), key: d_krtio_key() }
    }
    pub fn dp_pix() -> Self {
        Self::DpPix { epsilon: d_pix_epsilon(), b: d_pix_b(), m: d_pix_m() }
    }
    pub fn dp_snow() -> Self {
        Self::DpSnow { d: d_snow_d() }
    }
    pub fn dp_samp() -> Self {
        Self::DpSamp { epsilon: d_samp_epsilon(), k: d_samp_k(), m: d_samp_m() }
    }
    pub fn k_same_pixel() -> Self {
        Self::KSamePixel { k: d_ksame_k(), background: None }
    }

    /// The seven anonymizers with default parameters.
    pub fn all_defaults() -> Vec<Self> {
        vec![
            Self::eye_mask(),
            Self::gaussian_blur(),
            Self::krtio(),
            Self::dp_pix(),
            Self::dp_snow(),
            Self::dp_samp(),
            Self::k_same_pixel(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        use ImageAnonymizerSpec::*;
        match *self {
            GaussianBlur { kernel_size } if kernel_size % 2 == 0 || kernel_size < 3 => {
                Err(ImageAnonError::EvenKernel(kernel_size))
            }
            Krtio { alpha, block_size, k, .. } if !(alpha > 0.0 && alpha < 1.0) || block_size == 0 || k == 0 => {
                Err(invalid(format!("krtio needs 0 < alpha < 1, block size >= 1, k >= 1: {self}")))
            }
            DpPix { epsilon, b, m } if !(epsilon > 0.0) || b == 0 || m == 0 => {
                Err(invalid(format!("dp-pix needs epsilon > 0, b >= 1, m >= 1: {self}")))
            }
            DpSnow { d } if !(d > 0.0 && d < 1.0) => Err(invalid(format!("dp-snow needs 0 < d < 1: {self}"))),
            DpSamp { epsilon, k, m } if !(epsilon > 0.0) || m == 0 || m > k => {
                Err(invalid(format!("dp-samp needs epsilon > 0, 1 <= m <= k: {self}")))
            }
            KSamePixel { k: 0, .. } => Err(invalid("k-same-pixel needs k >= 1")),
            _ => Ok(()),
        }
    }

    pub fn needs_background(&self) -> bool {
        matches!(self, Self::KSamePixel { .. })
    }

    pub fn is_seeded(&self) -> bool {
        matches!(self, Self::DpPix { .. } | Self::DpSnow { .. } | Self::DpSamp { .. })
    }

    /// Applies the anonymizer. `seed` drives the DP mechanisms; k-RTIO uses
    /// its key; k-Same-Pixel needs `background`.
    pub fn apply(&self, img: &FaceImage, seed: u64, background: Option<&KSameBackground>) -> Result<FaceImage> {
        self.validate()?;
        use ImageAnonymizerSpec::*;
        match *self {
            EyeMask { strip_height_px } => eye_mask(img, strip_height_px),
            GaussianBlur { kernel_size } => gaussian_blur(img, kernel_size),
            Krtio { alpha, block_size, k, key } => krtio(img, alpha, block_size, k, key),
            DpPix { epsilon, b, m } => dp_pix(img, epsilon, b, m, seed),
            DpSnow { d } => dp_snow(img, d, seed),
            DpSamp { epsilon, k, m } => dp_samp(img, epsilon, k, m, seed),
            KSamePixel { k, .. } => k_same_pixel(img, k, background.ok_or(ImageAnonError::MissingBackground)?),
        }
    }

    pub fn name(&self) -> &'static str {
        use ImageAnonymizerSpec::*;
        match self {
            EyeMask { .. } => "eye_mask",
            GaussianBlur { .. } => "gaussian_blur",
            Krtio { .. } => "krtio",
            DpPix { .. } => "dp_pix",
            DpSnow { .. } => "dp_snow",
            DpSamp { .. } => "dp_samp",
            KSamePixel { .. } => "k_same_pixel",
        }
    }

    pub fn params(&self) -> String {
        use ImageAnonymizerSpec::*;
        match self {
            EyeMask { strip_height_px } => format!("strip_height_px={strip_height_px}"),
            GaussianBlur { kernel_size } => format!("kernel_size={kernel_size}"),
            Krtio { alpha, block_size, k, key } => format!("alpha={alpha};block_size={block_size};k={k};key={key}"),
            DpPix { epsilon, b, m } => format!("epsilon={epsilon};b={b};m={m}"),
            DpSnow { d } => format!("d={d}"),
            DpSamp { epsilon, k, m } => format!("epsilon={epsilon};k={k};m={m}"),
            KSamePixel { k, background } => match background {
                Some(p) => format!("k={k};background={}", p.display()),
                None => format!("k={k}"),
            },
        }
    }
}

impl fmt::Display for ImageAnonymizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name(), self.params())
    }
}
