use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DatasetError, Result};

pub const GAIT_FRAMES: usize = 100;
pub const GAIT_POINTS: usize = 52;
pub const GAIT_COLUMNS: usize = GAIT_POINTS * 3;

/// A walking sequence: frames × (52 points × xyz), frame-major, millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSequence {
    frames: usize,
    data: Vec<f64>,
}

impl GaitSequence {
    /// Builds a sequence from frame-major values. The length must be a
    /// multiple of [`GAIT_COLUMNS`].
    pub fn from_vec(data: Vec<f64>) -> std::result::Result<Self, String> {
        if !data.len().is_multiple_of(GAIT_COLUMNS) {
            return Err(format!("{} values is not a whole number of {GAIT_COLUMNS}-column frames", data.len()));
        }
        Ok(Self { frames: data.len() / GAIT_COLUMNS, data })
    }

    pub fn zeros(frames: usize) -> Self {
        Self { frames, data: vec![0.0; frames * GAIT_COLUMNS] }
    }

    pub fn n_frames(&self) -> usize {
        self.frames
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * GAIT_COLUMNS..(t + 1) * GAIT_COLUMNS]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * GAIT_COLUMNS..(t + 1) * GAIT_COLUMNS]
    }

    pub fn get(&self, t: usize, point: usize, axis: usize) -> f64 {
        self.data[t * GAIT_COLUMNS + point * 3 + axis]
    }

    /// Canonical-shape and finiteness check.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.frames != GAIT_FRAMES {
            return Err(format!("expected {GAIT_FRAMES} frames, found {}", self.frames));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(format!("non-finite value at frame {}, column {}", i / GAIT_COLUMNS, i % GAIT_COLUMNS));
        }
        Ok(())
    }

    /// Headerless CSV, one frame per line. Values use the shortest decimal
    /// form that parses back to the identical `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 9);
        for t in 0..self.frames {
            for (c, v) in self.frame(t).iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                // normalize -0.0 so zeroed coordinates print uniformly
                let v = if *v == 0.0 { 0.0 } else { *v };
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str, location: &str) -> Result<Self> {
        let mut data = Vec::with_capacity(GAIT_FRAMES * GAIT_COLUMNS);
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|e| DatasetError::ParseError {
                    location: format!("{location}:{}", line_no + 1),
                    message: format!("bad number {field:?}: {e}"),
                })?;
                data.push(v);
            }
            if data.len() - before != GAIT_COLUMNS {
                return Err(DatasetError::ParseError {
                    location: format!("{location}:{}", line_no + 1),
                    message: format!("expected {GAIT_COLUMNS} columns, found {}", data.len() - before),
                });
            }
        }
        let seq = Self::from_vec(data).expect("whole frames");
        seq.validate().map_err(|message| DatasetError::ParseError { location: location.to_string(), message })?;
        Ok(seq)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| DatasetError::io(path, e))
    }
}
