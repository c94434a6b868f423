//! Benchmark harness for biometric anonymization.
//!
//! The crate evaluates face and gait anonymizers against recognition
//! attacks under three adversary models: naive (trained on clear data),
//! parrot (trained on anonymized data) and %-parrot (a fixed fraction of the
//! training samples anonymized). Evaluation datasets can be reduced to small,
//! deliberately easy-to-distinguish identity subsets through the strategies
//! in [`selection`].
//!
//! Pipeline per grid cell: anonymize → select → split → train → evaluate.
//! Every random decision is driven by a seed derived from the master seed and
//! the cell coordinates (see [`seed`]), so any subset of a grid reruns
//! bit-identically regardless of scheduling.

pub mod classify;
pub mod dataset;
pub mod features;
pub mod gait_anon;
pub mod harness;
pub mod image_anon;
pub mod linalg;
pub mod seed;
pub mod selection;

pub use classify::{FeatureVector, TrainedClassifier};
pub use dataset::{DatasetManifest, FaceImage, GaitSequence, IdentityRecord, Modality};
