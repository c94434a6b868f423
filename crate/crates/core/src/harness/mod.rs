//! Experiment grids: anonymize → select → split → train → evaluate, plus
//! metrics, aggregation and the CSV outputs.

mod config;
mod report;
mod run;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::classify::{ClassifyError, PredictionRecord};
use crate::dataset::DatasetError;
use crate::features::FeatureError;
use crate::selection::SelectionError;

pub use config::{
    halving_grid, AnonymizerSpec, FeatureKind, GridSpec, ProtocolKind, ProtocolSpec, RecognizerSpec, RunConfig,
    SelectionSource, SweepConfig, SWEEP_SECTIONS,
};
pub use report::{
    aggregate, read_results, write_errors, write_outputs, write_report, write_results, write_summary, CellError,
    EvaluationResult, FigureRow, SummaryRow, CONFIG_FILE, ERRORS_FILE, RESULTS_FILE, SUMMARY_FILE,
};
pub use run::{
    anonymize_dataset, assemble_training_set, enumerate_cells, load_background, run_grid, run_grid_on,
    select_identities, Cell, GridOutcome, RunStatus, SelectionRequest,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("anonymizer failed: {0}")]
    Anonymizer(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error("results do not share coordinates: {0}")]
    MixedCoordinates(String),
    /// A failure shared by several cells, kept as its message.
    #[error("{0}")]
    Shared(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// Fraction of correct predictions.
pub fn accuracy(records: &[PredictionRecord]) -> Result<f64, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyPredictions);
    }
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Accuracy restricted to each true identity.
pub fn per_identity_accuracy(records: &[PredictionRecord]) -> Result<BTreeMap<String, f64>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyPredictions);
    }
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let t = tally.entry(r.true_label.clone()).or_default();
        t.0 += usize::from(r.is_correct());
        t.1 += 1;
    }
    Ok(tally.into_iter().map(|(id, (c, n))| (id, c as f64 / n as f64)).collect())
}
