//! Gait anonymizers: additive Gaussian noise, keeping a single body region,
//! and motion extraction (frame-to-frame differences).

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{GaitSequence, GAIT_COLUMNS};
use crate::seed::rng;

#[derive(Debug, Error, PartialEq)]
pub enum GaitAnonError {
    #[error("unknown region {0:?} (expected legs or head)")]
    UnknownRegion(String),
    #[error("motion extraction needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("noise scale must be finite and non-negative, got {0}")]
    InvalidScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Legs,
    Head,
}

/// Point indices of each region in the 52-point template.
pub const HEAD_POINTS: std::ops::Range<usize> = 0..5;
pub const LEG_POINTS: std::ops::Range<usize> = 40..52;

impl Region {
    pub fn points(self) -> std::ops::Range<usize> {
        match self {
            Region::Legs => LEG_POINTS,
            Region::Head => HEAD_POINTS,
        }
    }

    pub fn contains_column(self, column: usize) -> bool {
        self.points().contains(&(column / 3))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Legs => "legs",
            Region::Head => "head",
        }
    }
}

impl FromStr for Region {
    type Err = GaitAnonError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "legs" => Ok(Region::Legs),
            "head" => Ok(Region::Head),
            _ => Err(GaitAnonError::UnknownRegion(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaitAnonymizerSpec {
    Noise { scale: f64 },
    Keep { region: Region },
    MotionExtraction,
}

impl GaitAnonymizerSpec {
    pub fn validate(&self) -> Result<(), GaitAnonError> {
        match self {
            GaitAnonymizerSpec::Noise { scale } if !(scale.is_finite() && *scale >= 0.0) => {
                Err(GaitAnonError::InvalidScale(*scale))
            }
            _ => Ok(()),
        }
    }

    /// Applies the anonymizer. `seed` is only used by [`GaitAnonymizerSpec::Noise`].
    pub fn apply(&self, seq: &GaitSequence, seed: u64) -> Result<GaitSequence, GaitAnonError> {
        self.validate()?;
        match self {
            GaitAnonymizerSpec::Noise { scale } => Ok(anonymize_noise(seq, *scale, seed)),
            GaitAnonymizerSpec::Keep { region } => Ok(anonymize_keep(seq, *region)),
            GaitAnonymizerSpec::MotionExtraction => anonymize_motion_extraction(seq),
        }
    }

    pub fn is_seeded(&self) -> bool {
        matches!(self, GaitAnonymizerSpec::Noise { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            GaitAnonymizerSpec::Noise { .. } => "noise",
            GaitAnonymizerSpec::Keep { .. } => "keep",
            GaitAnonymizerSpec::MotionExtraction => "motion_extraction",
        }
    }

    pub fn params(&self) -> String {
        match self {
            GaitAnonymizerSpec::Noise { scale } => format!("scale={scale}"),
            GaitAnonymizerSpec::Keep { region } => format!("region={}", region.as_str()),
            GaitAnonymizerSpec::MotionExtraction => String::new(),
        }
    }
}

impl fmt::Display for GaitAnonymizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GaitAnonymizerSpec::Noise { scale } => write!(f, "Noise({scale})"),
            GaitAnonymizerSpec::Keep { region } => write!(f, "Keep({})", region.as_str()),
            GaitAnonymizerSpec::MotionExtraction => write!(f, "MotionExtraction"),
        }
    }
}

/// `out = in + scale · z`, one standard normal draw per value.
pub fn anonymize_noise(seq: &GaitSequence, scale: f64, seed: u64) -> GaitSequence {
    let mut r = rng(seed);
    let mut out = seq.clone();
    for v in out.as_mut_slice() {
        let z: f64 = StandardNormal.sample(&mut r);
        *v += scale * z;
    }
    out
}

/// Zeroes every coordinate of points outside `region`.
pub fn anonymize_keep(seq: &GaitSequence, region: Region) -> GaitSequence {
    let keep: Vec<bool> = (0..GAIT_COLUMNS).map(|c| region.contains_column(c)).collect();
    let mut out = seq.clone();
    for t in 0..out.n_frames() {
        for (v, &k) in out.frame_mut(t).iter_mut().zip(&keep) {
            if !k {
                *v = 0.0;
            }
        }
    }
    out
}

/// `out[t] = in[t+1] − in[t]`, with a trailing zero row to keep the frame count.
pub fn anonymize_motion_extraction(seq: &GaitSequence) -> Result<GaitSequence, GaitAnonError> {
    let n = seq.n_frames();
    if n < 2 {
        return Err(GaitAnonError::TooFewFrames(n));
    }
    let mut out = GaitSequence::zeros(n);
    for t in 0..n - 1 {
        let (a, b) = (seq.frame(t), seq.frame(t + 1));
        for (o, (x, y)) in out.frame_mut(t).iter_mut().zip(a.iter().zip(b)) {
            *o = y - x;
        }
    }
    Ok(out)
}
