//! Dataset model: manifests, sample files, validation, synthetic generators
//! and per-identity train/test splitting.
//!
//! A dataset directory holds a `manifest.json` whose sample paths are
//! relative to the manifest. Gait samples are headerless CSV files
//! (100 frames × 156 columns, millimeters); face samples are 8-bit RGB PNGs.

mod face;
mod gait;
mod split;
pub mod synth_face;
pub mod synth_gait;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use face::{FaceImage, FACE_SIZE};
pub use gait::{GaitSequence, GAIT_COLUMNS, GAIT_FRAMES, GAIT_POINTS};
pub use split::{round_half_up, split, train_count, SampleRef, SplitResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MIN_FACE_SAMPLES: usize = 8;
pub const MAX_FACE_SAMPLES: usize = 20;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("parse error at {location}: {message}")]
    ParseError { location: String, message: String },
    #[error("identity {identity}: {rule}")]
    InvariantViolation { identity: String, rule: String },
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("unknown identity: {0}")]
    UnknownIdentity(String),
    #[error("degenerate split for identity {0}: empty train or test set")]
    DegenerateSplit(String),
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            DatasetError::MissingFile(path)
        } else {
            DatasetError::Io { path, source }
        }
    }

    fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        DatasetError::ParseError { location: location.into(), message: message.to_string() }
    }

    fn violation(identity: &str, rule: impl Into<String>) -> Self {
        DatasetError::InvariantViolation { identity: identity.to_string(), rule: rule.into() }
    }
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Gait,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Gait => "gait",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub id: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, f64>,
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub modality: Modality,
    pub identities: Vec<IdentityRecord>,
    /// Directory the sample paths are relative to. Not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(modality: Modality, identities: Vec<IdentityRecord>) -> Self {
        Self { schema_version: SCHEMA_VERSION, modality, identities, root: PathBuf::new() }
    }

    pub fn identity_ids(&self) -> Vec<String> {
        self.identities.iter().map(|r| r.id.clone()).collect()
    }

    pub fn identity(&self, id: &str) -> Option<&IdentityRecord> {
        self.identities.iter().find(|r| r.id == id)
    }

    pub fn identity_index(&self, id: &str) -> Option<usize> {
        self.identities.iter().position(|r| r.id == id)
    }

    pub fn sample_path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn n_samples(&self) -> usize {
        self.identities.iter().map(|r| r.samples.len()).sum()
    }

    /// Structural invariants that do not need the sample files.
    pub fn validate_structure(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::parse(
                "schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let mut seen = HashSet::new();
        let keys: Option<Vec<&String>> = self.identities.first().map(|r| r.metadata.keys().collect());
        for rec in &self.identities {
            if !seen.insert(rec.id.as_str()) {
                return Err(DatasetError::violation(&rec.id, "duplicate identity id"));
            }
            if rec.samples.len() < 2 {
                return Err(DatasetError::violation(&rec.id, "min 2 samples"));
            }
            if self.modality == Modality::Face {
                if rec.samples.len() < MIN_FACE_SAMPLES {
                    return Err(DatasetError::violation(&rec.id, format!("min {MIN_FACE_SAMPLES} samples")));
                }
                if rec.samples.len() > MAX_FACE_SAMPLES {
                    return Err(DatasetError::violation(&rec.id, format!("max {MAX_FACE_SAMPLES} samples")));
                }
            }
            if let Some(keys) = &keys {
                if !rec.metadata.keys().eq(keys.iter().copied()) {
                    return Err(DatasetError::violation(&rec.id, "metadata keys differ from first identity"));
                }
            }
            if rec.metadata.values().any(|v| !v.is_finite()) {
                return Err(DatasetError::violation(&rec.id, "non-finite metadata value"));
            }
        }
        Ok(())
    }
}

/// One decoded sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Gait(GaitSequence),
    Face(FaceImage),
}

impl Sample {
    pub fn as_gait(&self) -> Option<&GaitSequence> {
        match self {
            Sample::Gait(g) => Some(g),
            Sample::Face(_) => None,
        }
    }

    pub fn as_face(&self) -> Option<&FaceImage> {
        match self {
            Sample::Face(f) => Some(f),
            Sample::Gait(_) => None,
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            Sample::Gait(_) => Modality::Gait,
            Sample::Face(_) => Modality::Face,
        }
    }

    pub fn read(modality: Modality, path: &Path) -> Result<Self> {
        match modality {
            Modality::Gait => GaitSequence::read_csv(path).map(Sample::Gait),
            Modality::Face => FaceImage::read_png(path).map(Sample::Face),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
        }
        match self {
            Sample::Gait(g) => g.write_csv(path),
            Sample::Face(f) => f.write_png(path),
        }
    }
}

/// A manifest together with its decoded samples, indexed like the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Vec<Sample>>,
}

impl Dataset {
    /// Loads and fully validates a dataset, keeping the decoded samples.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = read_manifest_file(path)?;
        manifest.validate_structure()?;
        let samples = manifest
            .identities
            .par_iter()
            .map(|rec| {
                rec.samples
                    .iter()
                    .map(|rel| Sample::read(manifest.modality, &manifest.sample_path(rel)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let dataset = Self { manifest, samples };
        dataset.validate_samples()?;
        Ok(dataset)
    }

    /// Writes every sample at its manifest path under `dir`, then the manifest.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
        self.manifest.root = dir.to_path_buf();
        let manifest = &self.manifest;
        manifest.identities.par_iter().zip(self.samples.par_iter()).try_for_each(|(rec, samples)| {
            rec.samples.iter().zip(samples).try_for_each(|(rel, s)| s.write(&manifest.sample_path(rel)))
        })?;
        write_manifest(manifest, &dir.join(MANIFEST_FILE))
    }

    pub fn modality(&self) -> Modality {
        self.manifest.modality
    }

    pub fn n_identities(&self) -> usize {
        self.manifest.identities.len()
    }

    pub fn sample(&self, r: &SampleRef) -> Option<&Sample> {
        let idx = self.manifest.identity_index(&r.identity)?;
        self.samples.get(idx)?.get(r.index)
    }

    fn validate_samples(&self) -> Result<()> {
        for (rec, samples) in self.manifest.identities.iter().zip(&self.samples) {
            for (rel, s) in rec.samples.iter().zip(samples) {
                let location = self.manifest.sample_path(rel).display().to_string();
                match s {
                    Sample::Gait(g) => g.validate().map_err(|m| DatasetError::parse(&location, m))?,
                    Sample::Face(f) => f.validate_canonical().map_err(|m| DatasetError::parse(&location, m))?,
                }
                if s.modality() != self.manifest.modality {
                    return Err(DatasetError::parse(location, "sample modality differs from manifest"));
                }
            }
        }
        Ok(())
    }
}

fn read_manifest_file(path: &Path) -> Result<DatasetManifest> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| DatasetError::parse(format!("{}:{}:{}", path.display(), e.line(), e.column()), e))?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

/// Reads a manifest (file or dataset directory) and checks every invariant,
/// including that all sample files exist and decode under the modality.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    Dataset::load(path).map(|d| d.manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| DatasetError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gait_manifest(n_ids: usize, n_samples: usize) -> Dataset {
        synth_gait::generate_synthetic_gait(n_ids, n_samples, 5).unwrap()
    }

    #[test]
    fn round_trip_written_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = gait_manifest(3, 2);
        ds.write(dir.path()).unwrap();
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded, ds.manifest);
        let again = dir.path().join("copy.json");
        write_manifest(&loaded, &again).unwrap();
        assert_eq!(fs::read_to_string(&again).unwrap(), fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap());
        let full = Dataset::load(dir.path()).unwrap();
        assert_eq!(full.samples, ds.samples);
    }

    #[test]
    fn missing_sample_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = gait_manifest(2, 2);
        ds.write(dir.path()).unwrap();
        fs::remove_file(dir.path().join(&ds.manifest.identities[1].samples[0])).unwrap();
        match load_manifest(dir.path()) {
            Err(DatasetError::MissingFile(p)) => assert!(p.ends_with(&ds.manifest.identities[1].samples[0])),
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(&dir.path().join("nope.json")), Err(DatasetError::MissingFile(_))));
    }

    #[test]
    fn malformed_json_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(&p, "{\n  \"schema_version\": 1,\n  \"modality\": \"gait\",\n  oops\n}").unwrap();
        match load_manifest(&p) {
            Err(DatasetError::ParseError { location, .. }) => assert!(location.ends_with(":4:3"), "{location}"),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn face_identity_with_seven_images_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = synth_face::generate_synthetic_faces(2, 8, 1).unwrap();
        ds.write(dir.path()).unwrap();
        let mut m = ds.manifest.clone();
        m.identities[1].samples.pop();
        write_manifest(&m, &dir.path().join(MANIFEST_FILE)).unwrap();
        match load_manifest(dir.path()) {
            Err(DatasetError::InvariantViolation { identity, rule }) => {
                assert_eq!(identity, m.identities[1].id);
                assert_eq!(rule, "min 8 samples");
            }
            other => panic!("expected InvariantViolation, got {other:?}"),
        }
    }

    #[test]
    fn structural_invariants() {
        let ds = gait_manifest(3, 2);
        let mut dup = ds.manifest.clone();
        dup.identities[2].id = dup.identities[0].id.clone();
        assert!(matches!(dup.validate_structure(), Err(DatasetError::InvariantViolation { .. })));

        let mut single = ds.manifest.clone();
        single.identities[0].samples.truncate(1);
        assert!(matches!(single.validate_structure(), Err(DatasetError::InvariantViolation { .. })));

        let mut keys = ds.manifest.clone();
        keys.identities[1].metadata.insert("height".into(), 1.0);
        assert!(matches!(keys.validate_structure(), Err(DatasetError::InvariantViolation { .. })));

        let mut version = ds.manifest.clone();
        version.schema_version = 2;
        assert!(matches!(version.validate_structure(), Err(DatasetError::ParseError { .. })));
    }

    #[test]
    fn corrupt_gait_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = gait_manifest(2, 2);
        ds.write(dir.path()).unwrap();
        fs::write(dir.path().join(&ds.manifest.identities[0].samples[1]), "1,2,3\n").unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(DatasetError::ParseError { .. })));
    }
}
