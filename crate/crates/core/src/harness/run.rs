use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::classify::PredictionRecord;
use crate::dataset::{round_half_up, split, Dataset, FaceImage, Modality, Sample, SampleRef, MANIFEST_FILE};
use crate::features::{
    cache_key, default_components, fit_feature_space, gait_flatten, project_face, FeatureSpaceModel, FeatureVector,
    GaitFeatureKind,
};
use crate::image_anon::{ImageAnonymizerSpec, KSameBackground};
use crate::seed::{derive_rng, derive_seed, hash_str};
use crate::selection::{
    pca_features, select_by_accuracy, select_center, select_distinctive, select_metadata, select_random, FeatureMap,
    SelectionError, SelectionStrategy,
};

use super::config::{
    AnonymizerSpec, FeatureKind, GridSpec, ProtocolKind, ProtocolSpec, RecognizerSpec, RunConfig, SelectionSource,
};
use super::report::{write_outputs, CellError, EvaluationResult};
use super::{accuracy, per_identity_accuracy, HarnessError};

type Result<T> = std::result::Result<T, HarnessError>;

/// Components used for gait identity representations in selection.
const SELECTION_PCA_AXES: usize = 4;

/// Coordinates of one grid cell; `index` is its position in enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub index: usize,
    pub anonymizer: usize,
    pub recognizer: usize,
    pub protocol: usize,
    pub selection: usize,
    pub n_identities: usize,
    pub repeat: usize,
}

/// Full Cartesian grid, anonymizer-major. The `all` strategy ignores the
/// size grid and always uses every identity.
pub fn enumerate_cells(grid: &GridSpec, n_total: usize) -> Vec<Cell> {
    let sizes = if grid.n_identities.is_empty() { vec![n_total] } else { grid.n_identities.clone() };
    let mut cells = Vec::new();
    for a in 0..grid.anonymizers.len() {
        for r in 0..grid.recognizers.len() {
            for p in 0..grid.protocols.len() {
                for (s, strategy) in grid.selections.iter().enumerate() {
                    let ns = if *strategy == SelectionStrategy::All { vec![n_total] } else { sizes.clone() };
                    for n in ns {
                        for repeat in 0..grid.repeats {
                            cells.push(Cell {
                                index: cells.len(),
                                anonymizer: a,
                                recognizer: r,
                                protocol: p,
                                selection: s,
                                n_identities: n,
                                repeat,
                            });
                        }
                    }
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// The configuration with every default made explicit.
    pub config: RunConfig,
    pub results: Vec<EvaluationResult>,
    pub errors: Vec<CellError>,
    pub n_cells: usize,
}

impl GridOutcome {
    pub fn status(&self) -> RunStatus {
        match (self.results.is_empty(), self.errors.is_empty()) {
            (_, true) => RunStatus::Complete,
            (false, false) => RunStatus::Partial,
            (true, false) => RunStatus::Failed,
        }
    }
}

/// Loads the datasets named by `config`, runs the grid and, when an output
/// directory is set, writes the result files there.
pub fn run_grid(config: &RunConfig) -> Result<GridOutcome> {
    let dataset = Dataset::load(&config.dataset)?;
    let background = config.background.as_deref().map(Dataset::load).transpose()?;
    let outcome = run_grid_on(config, &dataset, background.as_ref())?;
    if let Some(out) = &config.output {
        write_outputs(out, &outcome)?;
    }
    Ok(outcome)
}

/// Runs the grid on already loaded data. Per-cell failures are collected in
/// the outcome; only configuration problems abort the whole run.
pub fn run_grid_on(config: &RunConfig, dataset: &Dataset, background: Option<&Dataset>) -> Result<GridOutcome> {
    let modality = dataset.modality();
    config.grid.validate(modality)?;
    if let Some(bg) = background {
        if bg.modality() != modality {
            return Err(HarnessError::Config("background modality differs from the dataset".into()));
        }
    }
    let resolved = resolve(config, dataset.n_identities());
    let run_hash = config_hash(&resolved);
    let cells = enumerate_cells(&resolved.grid, dataset.n_identities());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.jobs.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let runner = Runner { config: &resolved, dataset, background, clear_simple: OnceLock::new() };

    let mut results = Vec::new();
    let mut errors = Vec::new();
    pool.install(|| {
        for (a, spec) in resolved.grid.anonymizers.iter().enumerate() {
            let group: Vec<&Cell> = cells.iter().filter(|c| c.anonymizer == a).collect();
            let outcomes: Vec<Result<EvaluationResult>> = match runner.context(spec) {
                Ok(ctx) => group.par_iter().map(|c| runner.run_cell(&ctx, c, &run_hash)).collect(),
                Err(e) => group.iter().map(|_| Err(HarnessError::Shared(e.to_string()))).collect(),
            };
            for (cell, outcome) in group.into_iter().zip(outcomes) {
                match outcome {
                    Ok(r) => results.push(r),
                    Err(e) => errors.push(runner.cell_error(cell, &run_hash, &e)),
                }
            }
        }
    });
    Ok(GridOutcome { config: resolved, results, errors, n_cells: cells.len() })
}

fn resolve(config: &RunConfig, n_total: usize) -> RunConfig {
    let mut c = config.clone();
    c.grid.protocols = c.grid.protocols.iter().map(ProtocolSpec::resolved).collect();
    if c.grid.n_identities.is_empty() {
        c.grid.n_identities = vec![n_total];
    }
    c
}

// Output location and thread count do not change results, so they are left
// out of the hash that prefixes run ids.
fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.output = None;
    c.jobs = None;
    c.cache_anonymized = true;
    c.anon_cache = None;
    cache_key(&[&serde_json::to_string(&c).expect("config serializes")])[..12].to_string()
}

fn canonical<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("spec serializes")
}

/// Anonymizes every sample. Sample `(identity, index)` gets the seed
/// `derive_seed(seed, "anonymize", [spec hash, identity hash, index])`, so
/// the copy does not depend on evaluation order.
pub fn anonymize_dataset(
    dataset: &Dataset,
    spec: &AnonymizerSpec,
    seed: u64,
    ksame_background: Option<&KSameBackground>,
) -> Result<Dataset> {
    spec.validate()?;
    if spec.modality() != dataset.modality() {
        return Err(HarnessError::Config(format!(
            "anonymizer {spec} does not apply to {} data",
            dataset.modality().as_str()
        )));
    }
    let spec_hash = hash_str(&spec.canonical());
    let samples = dataset
        .manifest
        .identities
        .par_iter()
        .zip(dataset.samples.par_iter())
        .map(|(rec, samples)| {
            samples
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let seed = derive_seed(seed, "anonymize", &[spec_hash, hash_str(&rec.id), i as u64]);
                    anonymize_sample(spec, s, seed, ksame_background)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest: dataset.manifest.clone(), samples })
}

fn anonymize_sample(spec: &AnonymizerSpec, s: &Sample, seed: u64, bg: Option<&KSameBackground>) -> Result<Sample> {
    let err = |e: &dyn std::fmt::Display| HarnessError::Anonymizer(e.to_string());
    match (spec, s) {
        (AnonymizerSpec::Gait(g), Sample::Gait(seq)) => g.apply(seq, seed).map(Sample::Gait).map_err(|e| err(&e)),
        (AnonymizerSpec::Face(f), Sample::Face(img)) => f.apply(img, seed, bg).map(Sample::Face).map_err(|e| err(&e)),
        _ => Err(HarnessError::Config(format!("anonymizer {spec} does not match sample modality"))),
    }
}

/// k-Same-Pixel background: the spec's own directory if it names one,
/// otherwise the run's background dataset.
pub fn load_background(spec: &AnonymizerSpec, run_background: Option<&Dataset>) -> Result<Option<KSameBackground>> {
    let AnonymizerSpec::Face(f @ ImageAnonymizerSpec::KSamePixel { background, .. }) = spec else {
        return Ok(None);
    };
    debug_assert!(f.needs_background());
    let err = |e: &dyn std::fmt::Display| HarnessError::Anonymizer(e.to_string());
    let bg = match background {
        Some(dir) => KSameBackground::from_dataset(&Dataset::load(dir)?).map_err(|e| err(&e))?,
        None => match run_background {
            Some(ds) => KSameBackground::from_dataset(ds).map_err(|e| err(&e))?,
            None => return Err(HarnessError::Anonymizer("k-same-pixel needs a background dataset".into())),
        },
    };
    Ok(Some(bg))
}

/// One stand-alone identity selection, computed exactly as a grid cell
/// with the same seed and coordinates would compute it.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRequest {
    pub strategy: SelectionStrategy,
    pub n_identities: usize,
    pub repeat: usize,
    pub seed: u64,
    /// Data the feature and accuracy based strategies look at; clear data when absent.
    pub anonymizer: Option<AnonymizerSpec>,
    /// Recognizer of the classification strategy; SVM on flattened gait or
    /// face PCA features by default.
    pub recognizer: Option<RecognizerSpec>,
    pub train_fraction: f64,
}

impl SelectionRequest {
    pub fn new(strategy: SelectionStrategy, n_identities: usize) -> Self {
        Self { strategy, n_identities, repeat: 0, seed: 0, anonymizer: None, recognizer: None, train_fraction: 0.75 }
    }
}

pub fn select_identities(
    dataset: &Dataset,
    background: Option<&Dataset>,
    req: &SelectionRequest,
) -> Result<Vec<String>> {
    let modality = dataset.modality();
    let recognizer = req.recognizer.clone().unwrap_or_else(|| {
        let features = if modality == Modality::Gait { FeatureKind::Flatten } else { FeatureKind::Pca };
        RecognizerSpec::new(features, crate::classify::ClassifierSpec::svm())
    });
    let mut grid =
        GridSpec::new(req.anonymizer.iter().cloned().collect(), vec![recognizer], vec![ProtocolSpec::parrot()]);
    grid.selections = vec![req.strategy];
    grid.n_identities = vec![req.n_identities];
    grid.repeats = req.repeat + 1;
    grid.train_fraction = req.train_fraction;
    grid.selection_source = if req.anonymizer.is_some() { SelectionSource::Anonymized } else { SelectionSource::Clear };
    if grid.recognizers[0].features.modality() != modality {
        return Err(HarnessError::Config(format!(
            "recognizer {} does not apply to {} data",
            grid.recognizers[0].name(),
            modality.as_str()
        )));
    }
    let mut config = RunConfig::new(dataset.manifest.root.clone(), grid);
    config.seed = req.seed;
    config.cache_anonymized = false;
    let runner = Runner { config: &config, dataset, background, clear_simple: OnceLock::new() };
    let ctx = match &req.anonymizer {
        Some(spec) => runner.context(spec)?,
        None => AnonContext::new(None, dataset.clone(), None, &config.grid),
    };
    let cell = Cell {
        index: 0,
        anonymizer: 0,
        recognizer: 0,
        protocol: 0,
        selection: 0,
        n_identities: req.n_identities,
        repeat: req.repeat,
    };
    runner.select(&ctx, &cell, req.strategy)
}

/// Marks which training samples are anonymized. Clear and naive train on
/// clear data, parrot on anonymized data; %-parrot anonymizes
/// round-half-up(fraction · n) of each identity's training samples, chosen
/// by a shuffle seeded from `(seed, identity)`.
pub fn assemble_training_set(train: &[SampleRef], protocol: &ProtocolSpec, seed: u64) -> Vec<(SampleRef, bool)> {
    match protocol.kind {
        ProtocolKind::Clear | ProtocolKind::Naive => train.iter().map(|r| (r.clone(), false)).collect(),
        ProtocolKind::Parrot => train.iter().map(|r| (r.clone(), true)).collect(),
        ProtocolKind::PercentParrot => {
            let fraction = protocol.anon_fraction.unwrap_or(0.0);
            let mut by_id: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, r) in train.iter().enumerate() {
                by_id.entry(r.identity.as_str()).or_default().push(i);
            }
            let mut anonymized = vec![false; train.len()];
            for (id, mut positions) in by_id {
                let k = round_half_up(fraction * positions.len() as f64).min(positions.len());
                positions.shuffle(&mut derive_rng(seed, "percent-parrot", &[hash_str(id)]));
                for &p in &positions[..k] {
                    anonymized[p] = true;
                }
            }
            train.iter().cloned().zip(anonymized).collect()
        }
    }
}

struct Runner<'a> {
    config: &'a RunConfig,
    dataset: &'a Dataset,
    background: Option<&'a Dataset>,
    clear_simple: OnceLock<Vec<Vec<FeatureVector>>>,
}

type Cached<T> = OnceLock<std::result::Result<T, String>>;

/// State shared by all cells of one anonymizer.
struct AnonContext<'a> {
    /// None when selecting on clear data without an anonymizer.
    spec: Option<&'a AnonymizerSpec>,
    anon: Dataset,
    anon_simple: OnceLock<Vec<Vec<FeatureVector>>>,
    selection_features: Cached<FeatureMap>,
    /// Per-identity accuracy of a full run, per recognizer.
    identity_accuracy: Vec<Cached<BTreeMap<String, f64>>>,
    /// Face feature spaces, per (recognizer, protocol).
    face_models: Vec<Cached<FeatureSpaceModel>>,
    ksame: Option<KSameBackground>,
}

impl AnonContext<'_> {
    fn spec(&self) -> &AnonymizerSpec {
        self.spec.expect("cell context has an anonymizer")
    }

    fn new<'s>(
        spec: Option<&'s AnonymizerSpec>,
        anon: Dataset,
        ksame: Option<KSameBackground>,
        grid: &GridSpec,
    ) -> AnonContext<'s> {
        AnonContext {
            spec,
            anon,
            anon_simple: OnceLock::new(),
            selection_features: OnceLock::new(),
            identity_accuracy: grid.recognizers.iter().map(|_| OnceLock::new()).collect(),
            face_models: (0..grid.recognizers.len() * grid.protocols.len()).map(|_| OnceLock::new()).collect(),
            ksame,
        }
    }
}

fn cached<T: Clone>(cell: &Cached<T>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    cell.get_or_init(|| f().map_err(|e| e.to_string())).clone().map_err(HarnessError::Shared)
}

fn simple_all(ds: &Dataset) -> Vec<Vec<FeatureVector>> {
    ds.samples
        .par_iter()
        .map(|ss| ss.iter().map(|s| GaitFeatureKind::Simple.extract(s.as_gait().expect("gait sample"))).collect())
        .collect()
}

impl<'a> Runner<'a> {
    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn context<'s>(&self, spec: &'s AnonymizerSpec) -> Result<AnonContext<'s>> {
        let ksame = load_background(spec, self.background)?;
        let anon = self.anonymized_copy(spec, ksame.as_ref())?;
        Ok(AnonContext::new(Some(spec), anon, ksame, &self.config.grid))
    }

    fn anonymized_copy(&self, spec: &AnonymizerSpec, ksame: Option<&KSameBackground>) -> Result<Dataset> {
        let Some(dir) = self.cache_dir(spec) else {
            return anonymize_dataset(self.dataset, spec, self.seed(), ksame);
        };
        if dir.join(MANIFEST_FILE).is_file() {
            if let Ok(ds) = Dataset::load(&dir) {
                return Ok(ds);
            }
        }
        let mut ds = anonymize_dataset(self.dataset, spec, self.seed(), ksame)?;
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
        }
        ds.write(&tmp)?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        }
        fs::rename(&tmp, &dir).map_err(|e| HarnessError::io(&dir, e))?;
        ds.manifest.root = dir;
        Ok(ds)
    }

    fn cache_dir(&self, spec: &AnonymizerSpec) -> Option<PathBuf> {
        if !self.config.cache_anonymized {
            return None;
        }
        let root = match (&self.config.anon_cache, &self.config.output) {
            (Some(c), _) => c.clone(),
            (None, Some(o)) => o.join("anon"),
            (None, None) => return None,
        };
        let manifest = canonical(&self.dataset.manifest);
        let source = self.dataset.manifest.root.display().to_string();
        let key = cache_key(&[&manifest, &source, &spec.canonical(), &self.seed().to_string()]);
        Some(root.join(&key[..16]))
    }

    fn cell_seed(&self, ctx: &AnonContext, cell: &Cell) -> u64 {
        let g = &self.config.grid;
        derive_seed(
            self.seed(),
            "cell",
            &[
                hash_str(&ctx.spec().canonical()),
                hash_str(&canonical(&g.recognizers[cell.recognizer])),
                hash_str(&canonical(&g.protocols[cell.protocol])),
                hash_str(g.selections[cell.selection].as_str()),
                cell.n_identities as u64,
                cell.repeat as u64,
            ],
        )
    }

    fn run_id(&self, hash: &str, cell: &Cell) -> String {
        format!("{hash}-{:05}", cell.index)
    }

    fn cell_error(&self, cell: &Cell, hash: &str, e: &HarnessError) -> CellError {
        let g = &self.config.grid;
        let spec = &g.anonymizers[cell.anonymizer];
        let protocol = &g.protocols[cell.protocol];
        CellError {
            run_id: self.run_id(hash, cell),
            anonymizer: spec.name().into(),
            anonymizer_params: spec.params(),
            recognizer: g.recognizers[cell.recognizer].name(),
            protocol: protocol.name().into(),
            anon_fraction: protocol.anon_fraction,
            selection: g.selections[cell.selection].as_str().into(),
            n_identities: cell.n_identities,
            repeat: cell.repeat,
            error: e.to_string(),
        }
    }

    fn run_cell(&self, ctx: &AnonContext, cell: &Cell, hash: &str) -> Result<EvaluationResult> {
        let g = &self.config.grid;
        let recognizer = &g.recognizers[cell.recognizer];
        let protocol = &g.protocols[cell.protocol];
        let strategy = g.selections[cell.selection];
        let seed = self.cell_seed(ctx, cell);

        let ids = self.select(ctx, cell, strategy)?;
        let parts = split(
            &self.dataset.manifest,
            &ids,
            g.train_fraction,
            derive_seed(self.seed(), "split", &[cell.repeat as u64]),
        )?;
        let train = assemble_training_set(&parts.train, protocol, seed);
        let test: Vec<(SampleRef, bool)> = parts.test.iter().map(|r| (r.clone(), protocol.anonymizes_test())).collect();
        let face_model = match recognizer.features {
            FeatureKind::Pca => Some(self.face_model(ctx, cell, &train)?),
            _ => None,
        };
        let records =
            self.evaluate(ctx, recognizer, face_model.as_ref(), &train, &test, derive_seed(seed, "classifier", &[]))?;

        let spec = ctx.spec();
        Ok(EvaluationResult {
            run_id: self.run_id(hash, cell),
            modality: self.dataset.modality().as_str().into(),
            anonymizer: spec.name().into(),
            anonymizer_params: spec.params(),
            recognizer: recognizer.name(),
            protocol: protocol.name().into(),
            anon_fraction: protocol.anon_fraction,
            selection: strategy.as_str().into(),
            n_identities: ids.len(),
            repeat: cell.repeat,
            seed,
            accuracy: accuracy(&records)?,
            chance_level: 1.0 / ids.len() as f64,
            n_test_samples: records.len(),
        })
    }

    fn sample<'s>(&'s self, ctx: &'s AnonContext, r: &SampleRef, anonymized: bool) -> Result<&'s Sample> {
        let ds = if anonymized { &ctx.anon } else { self.dataset };
        ds.sample(r).ok_or_else(|| HarnessError::Config(format!("missing sample {}#{}", r.identity, r.index)))
    }

    fn gait_features(
        &self,
        ctx: &AnonContext,
        kind: GaitFeatureKind,
        r: &SampleRef,
        anonymized: bool,
    ) -> Result<FeatureVector> {
        match kind {
            GaitFeatureKind::Flatten => {
                let s = self.sample(ctx, r, anonymized)?;
                Ok(gait_flatten(s.as_gait().expect("gait sample")))
            }
            GaitFeatureKind::Simple => {
                let table = if anonymized {
                    ctx.anon_simple.get_or_init(|| simple_all(&ctx.anon))
                } else {
                    self.clear_simple.get_or_init(|| simple_all(self.dataset))
                };
                let i = self.dataset.manifest.identity_index(&r.identity).expect("known identity");
                Ok(table[i][r.index].clone())
            }
        }
    }

    fn features(
        &self,
        ctx: &AnonContext,
        recognizer: &RecognizerSpec,
        model: Option<&FeatureSpaceModel>,
        items: &[(SampleRef, bool)],
    ) -> Result<Vec<FeatureVector>> {
        items
            .par_iter()
            .map(|(r, anonymized)| match recognizer.features.gait() {
                Some(kind) => self.gait_features(ctx, kind, r, *anonymized),
                None => {
                    let img = self.sample(ctx, r, *anonymized)?.as_face().expect("face sample");
                    Ok(project_face(img, model.expect("face model"))?)
                }
            })
            .collect()
    }

    fn evaluate(
        &self,
        ctx: &AnonContext,
        recognizer: &RecognizerSpec,
        model: Option<&FeatureSpaceModel>,
        train: &[(SampleRef, bool)],
        test: &[(SampleRef, bool)],
        seed: u64,
    ) -> Result<Vec<PredictionRecord>> {
        let train_x = self.features(ctx, recognizer, model, train)?;
        let train_y: Vec<String> = train.iter().map(|(r, _)| r.identity.clone()).collect();
        let clf = recognizer.classifier.fit(&train_x, &train_y, seed)?;
        let test_x = self.features(ctx, recognizer, model, test)?;
        let refs: Vec<SampleRef> = test.iter().map(|(r, _)| r.clone()).collect();
        let truth: Vec<String> = test.iter().map(|(r, _)| r.identity.clone()).collect();
        Ok(clf.predict_records(&test_x, &refs, &truth)?)
    }

    /// Face feature space. With a background dataset it is fitted once per
    /// (recognizer, protocol) on the background, anonymized as the protocol
    /// asks; without one it is fitted on the cell's training images.
    fn face_model(&self, ctx: &AnonContext, cell: &Cell, train: &[(SampleRef, bool)]) -> Result<FeatureSpaceModel> {
        let g = &self.config.grid;
        let recognizer = &g.recognizers[cell.recognizer];
        let protocol = &g.protocols[cell.protocol];
        let fit = |images: &[FaceImage]| -> Result<FeatureSpaceModel> {
            let p = recognizer.components.unwrap_or_else(|| default_components(images.len()));
            Ok(fit_feature_space(images, p)?)
        };
        let Some(bg) = self.background else {
            let images = train
                .iter()
                .map(|(r, a)| Ok(self.sample(ctx, r, *a)?.as_face().expect("face sample").clone()))
                .collect::<Result<Vec<_>>>()?;
            return fit(&images);
        };
        let slot = &ctx.face_models[cell.recognizer * g.protocols.len() + cell.protocol];
        cached(slot, || {
            let images = if protocol.pretrain_on_anonymized() {
                self.anonymized_background(ctx, bg, protocol)?
            } else {
                bg.samples.iter().flatten().map(|s| s.as_face().expect("face sample").clone()).collect()
            };
            fit(&images)
        })
    }

    fn anonymized_background(
        &self,
        ctx: &AnonContext,
        bg: &Dataset,
        protocol: &ProtocolSpec,
    ) -> Result<Vec<FaceImage>> {
        let spec_hash = hash_str(&ctx.spec().canonical());
        let fraction = match protocol.kind {
            ProtocolKind::PercentParrot => protocol.anon_fraction.unwrap_or(0.0),
            _ => 1.0,
        };
        let mut out = Vec::new();
        for (rec, samples) in bg.manifest.identities.iter().zip(&bg.samples) {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut derive_rng(self.seed(), "background-fraction", &[spec_hash, hash_str(&rec.id)]));
            let k = round_half_up(fraction * samples.len() as f64).min(samples.len());
            let mut chosen = vec![false; samples.len()];
            order[..k].iter().for_each(|&i| chosen[i] = true);
            for (i, s) in samples.iter().enumerate() {
                let s = if chosen[i] {
                    let seed =
                        derive_seed(self.seed(), "anonymize-background", &[spec_hash, hash_str(&rec.id), i as u64]);
                    anonymize_sample(ctx.spec(), s, seed, ctx.ksame.as_ref())?
                } else {
                    s.clone()
                };
                out.push(s.as_face().expect("face sample").clone());
            }
        }
        Ok(out)
    }

    fn select(&self, ctx: &AnonContext, cell: &Cell, strategy: SelectionStrategy) -> Result<Vec<String>> {
        let all = self.dataset.manifest.identity_ids();
        let n = cell.n_identities;
        let ids = match strategy {
            SelectionStrategy::All => all,
            SelectionStrategy::Random => {
                select_random(&all, n, cell.repeat, derive_seed(self.seed(), "selection", &[]))?
            }
            SelectionStrategy::Metadata => select_metadata(&self.dataset.manifest, n)?,
            SelectionStrategy::Distinctive => select_distinctive(&self.selection_features(ctx)?, n)?,
            SelectionStrategy::Center => select_center(&self.selection_features(ctx)?, n)?,
            SelectionStrategy::Classification => {
                if n > all.len() {
                    return Err(SelectionError::NTooLarge { n, available: all.len() }.into());
                }
                let per_id = cached(&ctx.identity_accuracy[cell.recognizer], || self.full_run_accuracy(ctx, cell))?;
                select_by_accuracy(&per_id, n)?
            }
        };
        Ok(ids)
    }

    fn selection_anonymized(&self) -> bool {
        self.config.grid.selection_source == SelectionSource::Anonymized
    }

    /// Identity representations for the distinctive and center strategies:
    /// a 4-component PCA of flattened gait samples, or face pipeline features.
    fn selection_features(&self, ctx: &AnonContext) -> Result<FeatureMap> {
        cached(&ctx.selection_features, || {
            let anonymized = self.selection_anonymized();
            let ds = if anonymized { &ctx.anon } else { self.dataset };
            match ds.modality() {
                Modality::Gait => {
                    let map: FeatureMap = ds
                        .manifest
                        .identities
                        .iter()
                        .zip(&ds.samples)
                        .map(|(rec, ss)| {
                            (rec.id.clone(), ss.iter().map(|s| gait_flatten(s.as_gait().expect("gait"))).collect())
                        })
                        .collect();
                    Ok(pca_features(&map, SELECTION_PCA_AXES)?)
                }
                Modality::Face => {
                    let images: Vec<FaceImage> = match self.background {
                        Some(bg) => bg.samples.iter().flatten().map(|s| s.as_face().expect("face").clone()).collect(),
                        None => ds.samples.iter().flatten().map(|s| s.as_face().expect("face").clone()).collect(),
                    };
                    let model = fit_feature_space(&images, default_components(images.len()))?;
                    ds.manifest
                        .identities
                        .iter()
                        .zip(&ds.samples)
                        .map(|(rec, ss)| {
                            let v = ss
                                .iter()
                                .map(|s| project_face(s.as_face().expect("face"), &model))
                                .collect::<std::result::Result<Vec<_>, _>>()?;
                            Ok((rec.id.clone(), v))
                        })
                        .collect()
                }
            }
        })
    }

    /// Per-identity accuracy of the cell's recognizer trained and tested on
    /// every identity (anonymized, or clear when selecting on clear data).
    fn full_run_accuracy(&self, ctx: &AnonContext, cell: &Cell) -> Result<BTreeMap<String, f64>> {
        let g = &self.config.grid;
        let recognizer = &g.recognizers[cell.recognizer];
        let anonymized = self.selection_anonymized();
        let all = self.dataset.manifest.identity_ids();
        let seed = derive_seed(self.seed(), "classification-selection", &[hash_str(&canonical(recognizer))]);
        let parts = split(&self.dataset.manifest, &all, g.train_fraction, seed)?;
        let train: Vec<(SampleRef, bool)> = parts.train.into_iter().map(|r| (r, anonymized)).collect();
        let test: Vec<(SampleRef, bool)> = parts.test.into_iter().map(|r| (r, anonymized)).collect();
        let model = match recognizer.features {
            FeatureKind::Pca => {
                let images: Vec<FaceImage> = match self.background {
                    Some(bg) => bg.samples.iter().flatten().map(|s| s.as_face().expect("face").clone()).collect(),
                    None => train
                        .iter()
                        .map(|(r, a)| Ok(self.sample(ctx, r, *a)?.as_face().expect("face").clone()))
                        .collect::<Result<Vec<_>>>()?,
                };
                let p = recognizer.components.unwrap_or_else(|| default_components(images.len()));
                Some(fit_feature_space(&images, p)?)
            }
            _ => None,
        };
        let records =
            self.evaluate(ctx, recognizer, model.as_ref(), &train, &test, derive_seed(seed, "classifier", &[]))?;
        per_identity_accuracy(&records)
    }
}
