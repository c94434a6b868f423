//! Procedural stand-in faces.
//!
//! An identity is a set of drawing parameters: a two-color background
//! gradient, a skin-toned face ellipse, two eye blobs on the eye line
//! (about 40% of the height), a nose wedge and a mouth bar. Each image of an
//! identity redraws it with a small translation, a brightness change and
//! additive pixel noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::synth_gait::{identity_label, synthetic_metadata};
use super::{Dataset, DatasetError, DatasetManifest, FaceImage, IdentityRecord, Modality, Result, Sample};
use super::{FACE_SIZE, MAX_FACE_SAMPLES, MIN_FACE_SAMPLES};
use crate::seed::derive_rng;

const MAX_SHIFT_PX: i32 = 4;
const BRIGHTNESS_SPREAD: f64 = 0.10;
const PIXEL_NOISE_STD: f64 = 4.0;

#[derive(Debug, Clone)]
struct FaceLayout {
    bg_a: [f64; 3],
    bg_b: [f64; 3],
    bg_dir: (f64, f64),
    skin: [f64; 3],
    face_center: (f64, f64),
    face_axes: (f64, f64),
    eye_y: f64,
    eye_dx: f64,
    eye_radius: (f64, f64),
    eye_color: [f64; 3],
    nose_top: f64,
    nose_bottom: f64,
    nose_half_width: f64,
    nose_color: [f64; 3],
    mouth_y: f64,
    mouth_half_width: f64,
    mouth_half_height: f64,
    mouth_color: [f64; 3],
}

fn color(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [r.random_range(lo..hi), r.random_range(lo..hi), r.random_range(lo..hi)]
}

impl FaceLayout {
    fn new(r: &mut ChaCha8Rng) -> Self {
        let angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let tone: f64 = r.random_range(0.0..1.0);
        let tint = color(r, -45.0, 45.0);
        let skin = [170.0 + 60.0 * tone + tint[0], 125.0 + 55.0 * tone + tint[1], 100.0 + 50.0 * tone + tint[2]];
        let cx = 112.0 + r.random_range(-6.0..6.0);
        let eye_y = 90.0 + r.random_range(-8.0..8.0);
        let nose_top = eye_y + r.random_range(10.0..20.0);
        let nose_bottom = nose_top + r.random_range(25.0..45.0);
        Self {
            bg_a: color(r, 0.0, 255.0),
            bg_b: color(r, 0.0, 255.0),
            bg_dir: (angle.cos(), angle.sin()),
            skin,
            face_center: (cx, 112.0 + r.random_range(-6.0..6.0)),
            face_axes: (r.random_range(62.0..82.0), r.random_range(85.0..102.0)),
            eye_y,
            eye_dx: r.random_range(22.0..38.0),
            eye_radius: (r.random_range(8.0..16.0), r.random_range(5.0..10.0)),
            eye_color: color(r, 10.0, 120.0),
            nose_top,
            nose_bottom,
            nose_half_width: r.random_range(8.0..18.0),
            nose_color: skin.map(|c| c * r.random_range(0.6..0.85)),
            mouth_y: nose_bottom + r.random_range(12.0..24.0),
            mouth_half_width: r.random_range(16.0..34.0),
            mouth_half_height: r.random_range(3.0..8.0),
            mouth_color: [r.random_range(120.0..220.0), r.random_range(20.0..90.0), r.random_range(30.0..100.0)],
        }
    }

    /// Noise-free color at continuous coordinates.
    fn color_at(&self, x: f64, y: f64) -> [f64; 3] {
        let (cx, cy) = self.face_center;
        let (ax, ay) = self.face_axes;
        let inside_face = ((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2) <= 1.0;
        if !inside_face {
            let s = FACE_SIZE as f64;
            let t = (((x / s - 0.5) * self.bg_dir.0 + (y / s - 0.5) * self.bg_dir.1) + 0.71) / 1.42;
            let t = t.clamp(0.0, 1.0);
            return std::array::from_fn(|c| self.bg_a[c] * (1.0 - t) + self.bg_b[c] * t);
        }
        for side in [-1.0, 1.0] {
            let ex = cx + side * self.eye_dx;
            if ((x - ex) / self.eye_radius.0).powi(2) + ((y - self.eye_y) / self.eye_radius.1).powi(2) <= 1.0 {
                return self.eye_color;
            }
        }
        if y >= self.nose_top && y <= self.nose_bottom {
            let half = self.nose_half_width * (y - self.nose_top) / (self.nose_bottom - self.nose_top);
            if (x - cx).abs() <= half {
                return self.nose_color;
            }
        }
        if (y - self.mouth_y).abs() <= self.mouth_half_height && (x - cx).abs() <= self.mouth_half_width {
            return self.mouth_color;
        }
        self.skin
    }

    fn render(&self, r: &mut ChaCha8Rng) -> FaceImage {
        let dx = r.random_range(-MAX_SHIFT_PX..=MAX_SHIFT_PX) as f64;
        let dy = r.random_range(-MAX_SHIFT_PX..=MAX_SHIFT_PX) as f64;
        let gain = 1.0 + r.random_range(-BRIGHTNESS_SPREAD..=BRIGHTNESS_SPREAD);
        let noise = Normal::new(0.0, PIXEL_NOISE_STD).expect("valid std");
        FaceImage::from_fn(FACE_SIZE, FACE_SIZE, |x, y| {
            let base = self.color_at(x as f64 - dx, y as f64 - dy);
            base.map(|v| (v * gain + noise.sample(r)).round().clamp(0.0, 255.0) as u8)
        })
    }
}

pub fn generate_synthetic_faces(n_identities: usize, n_images: usize, seed: u64) -> Result<Dataset> {
    if n_identities < 2 {
        return Err(DatasetError::InvalidCount(format!("need at least 2 identities, got {n_identities}")));
    }
    if !(MIN_FACE_SAMPLES..=MAX_FACE_SAMPLES).contains(&n_images) {
        return Err(DatasetError::InvalidCount(format!(
            "images per identity must be in {MIN_FACE_SAMPLES}..={MAX_FACE_SAMPLES}, got {n_images}"
        )));
    }
    let mut identities = Vec::with_capacity(n_identities);
    let mut samples = Vec::with_capacity(n_identities);
    for i in 0..n_identities {
        let id = identity_label(i);
        let layout = FaceLayout::new(&mut derive_rng(seed, "face-identity", &[i as u64]));
        samples.push(
            (0..n_images)
                .map(|s| Sample::Face(layout.render(&mut derive_rng(seed, "face-image", &[i as u64, s as u64]))))
                .collect(),
        );
        identities.push(IdentityRecord {
            metadata: synthetic_metadata(seed, "face-metadata", i),
            samples: (0..n_images).map(|s| format!("{id}/img{s:02}.png")).collect(),
            id,
        });
    }
    Ok(Dataset { manifest: DatasetManifest::new(Modality::Face, identities), samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_counts() {
        let ds = generate_synthetic_faces(3, 8, 7).unwrap();
        assert_eq!(ds.samples.iter().map(Vec::len).sum::<usize>(), 24);
        for s in ds.samples.iter().flatten() {
            s.as_face().unwrap().validate_canonical().unwrap();
        }
        assert_eq!(ds.manifest.identities[0].samples[7], "id000/img07.png");
    }

    #[test]
    fn invalid_counts() {
        for (n, k) in [(1, 8), (3, 7), (3, 21)] {
            assert!(matches!(generate_synthetic_faces(n, k, 0), Err(DatasetError::InvalidCount(_))));
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = generate_synthetic_faces(2, 8, 11).unwrap();
        let b = generate_synthetic_faces(2, 8, 11).unwrap();
        let enc = |d: &Dataset| d.samples[1][3].as_face().unwrap().encode_png();
        assert_eq!(enc(&a), enc(&b));
        assert_ne!(a.samples, generate_synthetic_faces(2, 8, 12).unwrap().samples);
    }

    #[test]
    fn images_of_one_identity_are_closer_than_across_identities() {
        let ds = generate_synthetic_faces(2, 8, 3).unwrap();
        let px = |i: usize, s: usize| ds.samples[i][s].as_face().unwrap().channel(0);
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        assert!(d(&px(0, 0), &px(0, 1)) < d(&px(0, 0), &px(1, 0)));
    }
}
