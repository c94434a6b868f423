use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::SWEEP_SECTIONS;
use super::run::GridOutcome;
use super::HarnessError;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const CONFIG_FILE: &str = "config.resolved.json";

/// One evaluated grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub run_id: String,
    pub modality: String,
    pub anonymizer: String,
    pub anonymizer_params: String,
    pub recognizer: String,
    pub protocol: String,
    pub anon_fraction: Option<f64>,
    pub selection: String,
    pub n_identities: usize,
    pub repeat: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub chance_level: f64,
    pub n_test_samples: usize,
}

impl EvaluationResult {
    fn group_key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{:?}|{}|{}",
            self.modality,
            self.anonymizer,
            self.anonymizer_params,
            self.recognizer,
            self.protocol,
            self.anon_fraction,
            self.selection,
            self.n_identities
        )
    }
}

/// Mean and population standard deviation over repeats of one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub modality: String,
    pub anonymizer: String,
    pub anonymizer_params: String,
    pub recognizer: String,
    pub protocol: String,
    pub anon_fraction: Option<f64>,
    pub selection: String,
    pub n_identities: usize,
    pub chance_level: f64,
    pub n_repeats: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// A cell that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub run_id: String,
    pub anonymizer: String,
    pub anonymizer_params: String,
    pub recognizer: String,
    pub protocol: String,
    pub anon_fraction: Option<f64>,
    pub selection: String,
    pub n_identities: usize,
    pub repeat: usize,
    pub error: String,
}

/// Groups results by every coordinate except the repeat index, in order of
/// first appearance. A repeat index seen twice within a group is an error.
pub fn aggregate(results: &[EvaluationResult]) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&EvaluationResult>> = HashMap::new();
    for r in results {
        let key = r.group_key();
        let g = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        g.push(r);
    }
    order
        .iter()
        .map(|key| {
            let g = &groups[key];
            let mut repeats = BTreeSet::new();
            for r in g {
                if !repeats.insert(r.repeat) {
                    return Err(HarnessError::MixedCoordinates(format!("repeat {} appears twice in {key}", r.repeat)));
                }
                if r.chance_level != g[0].chance_level {
                    return Err(HarnessError::MixedCoordinates(format!("chance level differs within {key}")));
                }
            }
            // Shifted by the first value so identical repeats give exactly 0.
            let n = g.len() as f64;
            let x0 = g[0].accuracy;
            let shift = g.iter().map(|r| r.accuracy - x0).sum::<f64>() / n;
            let mean = x0 + shift;
            let var = g.iter().map(|r| (r.accuracy - x0 - shift).powi(2)).sum::<f64>() / n;
            let f = g[0];
            Ok(SummaryRow {
                modality: f.modality.clone(),
                anonymizer: f.anonymizer.clone(),
                anonymizer_params: f.anonymizer_params.clone(),
                recognizer: f.recognizer.clone(),
                protocol: f.protocol.clone(),
                anon_fraction: f.anon_fraction,
                selection: f.selection.clone(),
                n_identities: f.n_identities,
                chance_level: f.chance_level,
                n_repeats: g.len(),
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
            })
        })
        .collect()
}

const RESULT_HEADER: [&str; 14] = [
    "run_id",
    "modality",
    "anonymizer",
    "anonymizer_params",
    "recognizer",
    "protocol",
    "anon_fraction",
    "selection",
    "n_identities",
    "repeat",
    "seed",
    "accuracy",
    "chance_level",
    "n_test_samples",
];
const SUMMARY_HEADER: [&str; 12] = [
    "modality",
    "anonymizer",
    "anonymizer_params",
    "recognizer",
    "protocol",
    "anon_fraction",
    "selection",
    "n_identities",
    "chance_level",
    "n_repeats",
    "mean_accuracy",
    "std_accuracy",
];
const ERROR_HEADER: [&str; 10] = [
    "run_id",
    "anonymizer",
    "anonymizer_params",
    "recognizer",
    "protocol",
    "anon_fraction",
    "selection",
    "n_identities",
    "repeat",
    "error",
];

// Header written explicitly so that empty tables still get one.
fn write_table<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let err = |e: csv::Error| HarnessError::io(path, e);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_results(path: &Path, rows: &[EvaluationResult]) -> Result<(), HarnessError> {
    write_table(path, &RESULT_HEADER, rows)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    write_table(path, &SUMMARY_HEADER, rows)
}

pub fn write_errors(path: &Path, rows: &[CellError]) -> Result<(), HarnessError> {
    write_table(path, &ERROR_HEADER, rows)
}

pub fn read_results(path: &Path) -> Result<Vec<EvaluationResult>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(|e| HarnessError::io(path, e))
}

/// Writes results, summary, errors and the resolved configuration into `dir`.
pub fn write_outputs(dir: &Path, outcome: &GridOutcome) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_results(&dir.join(RESULTS_FILE), &outcome.results)?;
    write_summary(&dir.join(SUMMARY_FILE), &aggregate(&outcome.results)?)?;
    write_errors(&dir.join(ERRORS_FILE), &outcome.errors)?;
    let cfg = serde_json::to_string_pretty(&outcome.config).expect("config serializes");
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg + "\n").map_err(|e| HarnessError::io(&path, e))
}

/// One point of a plotted series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    pub experiment: String,
    /// Anonymizer with its parameters, e.g. `noise(scale=3)`.
    pub anonymizer: String,
    pub recognizer: String,
    pub protocol: String,
    pub anon_fraction: Option<f64>,
    pub selection: String,
    pub n_identities: usize,
    pub chance_level: f64,
    pub n_repeats: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

const FIGURE_HEADER: [&str; 11] = [
    "experiment",
    "anonymizer",
    "recognizer",
    "protocol",
    "anon_fraction",
    "selection",
    "n_identities",
    "chance_level",
    "n_repeats",
    "mean_accuracy",
    "std_accuracy",
];

fn figure_rows(experiment: &str, summary: Vec<SummaryRow>) -> Vec<FigureRow> {
    summary
        .into_iter()
        .map(|s| FigureRow {
            experiment: experiment.to_string(),
            anonymizer: if s.anonymizer_params.is_empty() {
                s.anonymizer
            } else {
                format!("{}({})", s.anonymizer, s.anonymizer_params)
            },
            recognizer: s.recognizer,
            protocol: s.protocol,
            anon_fraction: s.anon_fraction,
            selection: s.selection,
            n_identities: s.n_identities,
            chance_level: s.chance_level,
            n_repeats: s.n_repeats,
            mean_accuracy: s.mean_accuracy,
            std_accuracy: s.std_accuracy,
        })
        .collect()
}

/// Result sets under `input`: its own results file, then sweep sections,
/// then any other subdirectory holding one, by name.
fn result_sets(input: &Path) -> Result<Vec<(String, PathBuf)>, HarnessError> {
    let mut sets = Vec::new();
    if input.join(RESULTS_FILE).is_file() {
        let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
        sets.push((name, input.join(RESULTS_FILE)));
    }
    let mut others = Vec::new();
    for entry in fs::read_dir(input).map_err(|e| HarnessError::io(input, e))? {
        let path = entry.map_err(|e| HarnessError::io(input, e))?.path();
        let file = path.join(RESULTS_FILE);
        if path.is_dir() && file.is_file() {
            others.push((path.file_name().unwrap_or_default().to_string_lossy().into_owned(), file));
        }
    }
    others.sort_by_key(|(name, _)| (SWEEP_SECTIONS.iter().position(|s| s == name).unwrap_or(usize::MAX), name.clone()));
    sets.extend(others);
    Ok(sets)
}

/// Writes plotting tables for every result set found under `input`:
/// accuracy per anonymizer for single-size experiments and accuracy per
/// identity count for size sweeps. Returns the written paths.
pub fn write_report(input: &Path, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let sets = result_sets(input)?;
    if sets.is_empty() {
        return Err(HarnessError::io(input, format!("no {RESULTS_FILE} found")));
    }
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut written = Vec::new();
    for (name, path) in sets {
        let rows = figure_rows(&name, aggregate(&read_results(&path)?)?);
        let sizes: BTreeSet<usize> = rows.iter().map(|r| r.n_identities).collect();
        let by_size = match name.as_str() {
            "h4" | "h5" => true,
            "h1" | "h2" | "h3" => false,
            _ => sizes.len() > 1,
        };
        let target = if by_size {
            let mut rows = rows;
            rows.sort_by(|a, b| {
                (&a.anonymizer, &a.recognizer, &a.protocol, &a.selection)
                    .cmp(&(&b.anonymizer, &b.recognizer, &b.protocol, &b.selection))
                    .then(b.n_identities.cmp(&a.n_identities))
            });
            let p = out.join(format!("{name}_accuracy_vs_n.csv"));
            write_table(&p, &FIGURE_HEADER, &rows)?;
            p
        } else {
            let p = out.join(format!("{name}_accuracy_vs_anonymizer.csv"));
            write_table(&p, &FIGURE_HEADER, &rows)?;
            p
        };
        written.push(target);
    }
    Ok(written)
}
