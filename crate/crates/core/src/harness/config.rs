use std::fmt;
use std::path::PathBuf;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::classify::ClassifierSpec;
use crate::dataset::Modality;
use crate::features::GaitFeatureKind;
use crate::gait_anon::GaitAnonymizerSpec;
use crate::image_anon::ImageAnonymizerSpec;
use crate::selection::SelectionStrategy;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Clear training and clear test data.
    Clear,
    /// Clear training data, anonymized test data.
    Naive,
    /// Anonymized training and test data.
    Parrot,
    /// A fraction of each identity's training samples anonymized.
    PercentParrot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anon_fraction: Option<f64>,
    /// Fit the face feature space on the anonymized background set.
    /// Defaults to true for parrot-style protocols.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_on_anonymized: Option<bool>,
}

impl ProtocolSpec {
    pub fn clear() -> Self {
        Self { kind: ProtocolKind::Clear, anon_fraction: None, pretrain_on_anonymized: None }
    }
    pub fn naive() -> Self {
        Self { kind: ProtocolKind::Naive, anon_fraction: None, pretrain_on_anonymized: None }
    }
    pub fn parrot() -> Self {
        Self { kind: ProtocolKind::Parrot, anon_fraction: None, pretrain_on_anonymized: None }
    }
    pub fn percent_parrot(fraction: f64) -> Self {
        Self { kind: ProtocolKind::PercentParrot, anon_fraction: Some(fraction), pretrain_on_anonymized: None }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match (self.kind, self.anon_fraction) {
            (ProtocolKind::PercentParrot, Some(f)) if (0.0..=1.0).contains(&f) => Ok(()),
            (ProtocolKind::PercentParrot, Some(f)) => {
                Err(HarnessError::Config(format!("anon_fraction must be in [0, 1], got {f}")))
            }
            (ProtocolKind::PercentParrot, None) => {
                Err(HarnessError::Config("percent_parrot needs anon_fraction".into()))
            }
            (_, Some(_)) => {
                Err(HarnessError::Config(format!("anon_fraction is only valid for percent_parrot ({})", self.name())))
            }
            (_, None) => Ok(()),
        }
    }

    pub fn pretrain_on_anonymized(&self) -> bool {
        self.pretrain_on_anonymized.unwrap_or(matches!(self.kind, ProtocolKind::Parrot | ProtocolKind::PercentParrot))
    }

    /// Copy with every default made explicit.
    pub fn resolved(&self) -> Self {
        Self { pretrain_on_anonymized: Some(self.pretrain_on_anonymized()), ..self.clone() }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ProtocolKind::Clear => "clear",
            ProtocolKind::Naive => "naive",
            ProtocolKind::Parrot => "parrot",
            ProtocolKind::PercentParrot => "percent_parrot",
        }
    }

    pub fn anonymizes_test(&self) -> bool {
        self.kind != ProtocolKind::Clear
    }
}

/// Feature extractor in front of a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Flatten,
    Simple,
    /// Face pipeline: grayscale, 64×64, standardize, PCA.
    Pca,
}

impl FeatureKind {
    pub fn modality(self) -> Modality {
        match self {
            FeatureKind::Flatten | FeatureKind::Simple => Modality::Gait,
            FeatureKind::Pca => Modality::Face,
        }
    }

    pub fn gait(self) -> Option<GaitFeatureKind> {
        match self {
            FeatureKind::Flatten => Some(GaitFeatureKind::Flatten),
            FeatureKind::Simple => Some(GaitFeatureKind::Simple),
            FeatureKind::Pca => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Flatten => "flatten",
            FeatureKind::Simple => "simple",
            FeatureKind::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizerSpec {
    pub features: FeatureKind,
    pub classifier: ClassifierSpec,
    /// PCA components for face features; default min(150, n − 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
}

impl RecognizerSpec {
    pub fn new(features: FeatureKind, classifier: ClassifierSpec) -> Self {
        Self { features, classifier, components: None }
    }

    pub fn name(&self) -> String {
        format!("{}+{}", self.classifier.name(), self.features.as_str())
    }
}

/// A gait or face anonymizer. In JSON both families share one `kind` tag.
#[derive(Debug, Clone, PartialEq)]
pub enum AnonymizerSpec {
    Gait(GaitAnonymizerSpec),
    Face(ImageAnonymizerSpec),
}

const GAIT_KINDS: [&str; 3] = ["noise", "keep", "motion_extraction"];
const FACE_KINDS: [&str; 7] = ["eye_mask", "gaussian_blur", "krtio", "dp_pix", "dp_snow", "dp_samp", "k_same_pixel"];

impl Serialize for AnonymizerSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AnonymizerSpec::Gait(g) => g.serialize(s),
            AnonymizerSpec::Face(f) => f.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for AnonymizerSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        let kind = v
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| D::Error::custom("anonymizer needs a string `kind`"))?;
        if GAIT_KINDS.contains(&kind) {
            serde_json::from_value(v).map(AnonymizerSpec::Gait).map_err(D::Error::custom)
        } else if FACE_KINDS.contains(&kind) {
            serde_json::from_value(v).map(AnonymizerSpec::Face).map_err(D::Error::custom)
        } else {
            Err(D::Error::custom(format!(
                "unknown anonymizer kind {kind:?}; expected one of {}",
                GAIT_KINDS.iter().chain(&FACE_KINDS).copied().collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

impl AnonymizerSpec {
    pub fn modality(&self) -> Modality {
        match self {
            AnonymizerSpec::Gait(_) => Modality::Gait,
            AnonymizerSpec::Face(_) => Modality::Face,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnonymizerSpec::Gait(g) => g.name(),
            AnonymizerSpec::Face(f) => f.name(),
        }
    }

    pub fn params(&self) -> String {
        match self {
            AnonymizerSpec::Gait(g) => g.params(),
            AnonymizerSpec::Face(f) => f.params(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match self {
            AnonymizerSpec::Gait(g) => g.validate().map_err(|e| HarnessError::Config(e.to_string())),
            AnonymizerSpec::Face(f) => f.validate().map_err(|e| HarnessError::Config(e.to_string())),
        }
    }

    /// Canonical JSON, used for hashing and cache keys.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

impl fmt::Display for AnonymizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnonymizerSpec::Gait(g) => g.fmt(f),
            AnonymizerSpec::Face(i) => i.fmt(f),
        }
    }
}

/// Which data the distinctive, center and classification strategies look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionSource {
    #[default]
    Anonymized,
    Clear,
}

fn d_selections() -> Vec<SelectionStrategy> {
    vec![SelectionStrategy::All]
}
fn d_repeats() -> usize {
    1
}
fn d_train_fraction() -> f64 {
    0.75
}
fn d_true() -> bool {
    true
}

/// The Cartesian grid of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub anonymizers: Vec<AnonymizerSpec>,
    pub recognizers: Vec<RecognizerSpec>,
    pub protocols: Vec<ProtocolSpec>,
    #[serde(default = "d_selections")]
    pub selections: Vec<SelectionStrategy>,
    /// Evaluation set sizes; empty means the full dataset.
    #[serde(default)]
    pub n_identities: Vec<usize>,
    #[serde(default = "d_repeats")]
    pub repeats: usize,
    #[serde(default = "d_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub selection_source: SelectionSource,
}

impl GridSpec {
    pub fn new(
        anonymizers: Vec<AnonymizerSpec>,
        recognizers: Vec<RecognizerSpec>,
        protocols: Vec<ProtocolSpec>,
    ) -> Self {
        Self {
            anonymizers,
            recognizers,
            protocols,
            selections: d_selections(),
            n_identities: Vec::new(),
            repeats: d_repeats(),
            train_fraction: d_train_fraction(),
            selection_source: SelectionSource::default(),
        }
    }

    pub fn validate(&self, modality: Modality) -> Result<(), HarnessError> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if self.anonymizers.is_empty()
            || self.recognizers.is_empty()
            || self.protocols.is_empty()
            || self.selections.is_empty()
        {
            return cfg("grid needs at least one anonymizer, recognizer, protocol and selection".into());
        }
        if self.repeats == 0 {
            return cfg("repeats must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return cfg(format!("train_fraction must be in (0, 1), got {}", self.train_fraction));
        }
        for a in &self.anonymizers {
            a.validate()?;
            if a.modality() != modality {
                return cfg(format!("anonymizer {a} does not apply to {} data", modality.as_str()));
            }
        }
        for r in &self.recognizers {
            if r.features.modality() != modality {
                return cfg(format!("recognizer {} does not apply to {} data", r.name(), modality.as_str()));
            }
        }
        for p in &self.protocols {
            p.validate()?;
        }
        if let Some(&n) = self.n_identities.iter().find(|&&n| n < 2) {
            return cfg(format!("n_identities entries must be at least 2, got {n}"));
        }
        Ok(())
    }
}

/// Everything needed to run one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Background identities for face feature spaces and k-Same-Pixel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Keep anonymized dataset copies under `<output>/anon/<hash>/`.
    #[serde(default = "d_true")]
    pub cache_anonymized: bool,
    /// Cache root; defaults to `<output>/anon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anon_cache: Option<PathBuf>,
    pub grid: GridSpec,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, grid: GridSpec) -> Self {
        Self {
            dataset: dataset.into(),
            background: None,
            seed: 0,
            output: None,
            jobs: None,
            cache_anonymized: true,
            anon_cache: None,
            grid,
        }
    }
}

/// Experiment sections of a sweep; each runs as its own grid.
pub const SWEEP_SECTIONS: [&str; 5] = ["h1", "h2", "h3", "h4", "h5"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default = "d_true")]
    pub cache_anonymized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h2: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h3: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h4: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h5: Option<GridSpec>,
}

impl SweepConfig {
    /// Present sections in order, each as a full run configuration whose
    /// output is `<output>/<section>`. Sections share `<output>/anon`.
    pub fn sections(&self) -> Vec<(&'static str, RunConfig)> {
        let grids = [&self.h1, &self.h2, &self.h3, &self.h4, &self.h5];
        SWEEP_SECTIONS
            .iter()
            .zip(grids)
            .filter_map(|(name, g)| {
                g.as_ref().map(|grid| {
                    (
                        *name,
                        RunConfig {
                            dataset: self.dataset.clone(),
                            background: self.background.clone(),
                            seed: self.seed,
                            output: self.output.as_ref().map(|o| o.join(name)),
                            jobs: self.jobs,
                            cache_anonymized: self.cache_anonymized,
                            anon_cache: self.output.as_ref().map(|o| o.join("anon")),
                            grid: grid.clone(),
                        },
                    )
                })
            })
            .collect()
    }

    /// Experiment designs for a modality: naive vs parrot (h1), %-parrot
    /// (h2), recognizer comparison (h3), shrinking random subsets (h4) and
    /// selection strategies against random subsets (h5).
    pub fn template(modality: Modality, dataset: PathBuf, n_total: usize) -> Self {
        let n_grid = halving_grid(n_total);
        let mid: Vec<usize> = [n_total / 2, n_total / 4].into_iter().filter(|&n| n >= 3).collect();
        let (anon, h3_anon, h4_anon, recognizers, h1_rec): (
            Vec<AnonymizerSpec>,
            Vec<AnonymizerSpec>,
            Vec<AnonymizerSpec>,
            Vec<RecognizerSpec>,
            RecognizerSpec,
        ) = match modality {
            Modality::Gait => {
                use crate::gait_anon::Region;
                let noise = |s: f64| AnonymizerSpec::Gait(GaitAnonymizerSpec::Noise { scale: s });
                let legs = AnonymizerSpec::Gait(GaitAnonymizerSpec::Keep { region: Region::Legs });
                let head = AnonymizerSpec::Gait(GaitAnonymizerSpec::Keep { region: Region::Head });
                let motion = AnonymizerSpec::Gait(GaitAnonymizerSpec::MotionExtraction);
                (
                    vec![noise(3.0), noise(10.0), noise(100.0), legs.clone(), head, motion.clone()],
                    vec![noise(10.0), legs.clone(), motion.clone()],
                    vec![legs.clone(), noise(100.0)],
                    vec![
                        RecognizerSpec::new(FeatureKind::Flatten, ClassifierSpec::svm()),
                        RecognizerSpec::new(FeatureKind::Simple, ClassifierSpec::svm()),
                        RecognizerSpec::new(FeatureKind::Flatten, ClassifierSpec::knn()),
                    ],
                    RecognizerSpec::new(FeatureKind::Simple, ClassifierSpec::svm()),
                )
            }
            Modality::Face => {
                let all: Vec<AnonymizerSpec> =
                    ImageAnonymizerSpec::all_defaults().into_iter().map(AnonymizerSpec::Face).collect();
                let rec = RecognizerSpec::new(FeatureKind::Pca, ClassifierSpec::svm());
                let knn = RecognizerSpec::new(FeatureKind::Pca, ClassifierSpec::knn());
                (all.clone(), all.clone(), all[..2].to_vec(), vec![rec.clone(), knn], rec)
            }
        };
        let mut h1 = GridSpec::new(
            anon.clone(),
            vec![h1_rec.clone()],
            vec![ProtocolSpec::clear(), ProtocolSpec::naive(), ProtocolSpec::parrot()],
        );
        h1.repeats = 1;
        let mut h2 = GridSpec::new(
            anon,
            vec![h1_rec],
            vec![
                ProtocolSpec::percent_parrot(0.25),
                ProtocolSpec::percent_parrot(0.5),
                ProtocolSpec::percent_parrot(0.75),
            ],
        );
        h2.repeats = 1;
        let h3 = GridSpec::new(h3_anon.clone(), recognizers.clone(), vec![ProtocolSpec::parrot()]);
        let mut h4 = GridSpec::new(h4_anon, vec![recognizers[0].clone()], vec![ProtocolSpec::parrot()]);
        h4.selections = vec![SelectionStrategy::Random];
        h4.n_identities = n_grid;
        h4.repeats = crate::selection::default_repeats();
        let mut h5 = GridSpec::new(h3_anon, vec![recognizers[0].clone()], vec![ProtocolSpec::parrot()]);
        h5.selections = vec![
            SelectionStrategy::Random,
            SelectionStrategy::Classification,
            SelectionStrategy::Metadata,
            SelectionStrategy::Distinctive,
            SelectionStrategy::Center,
        ];
        h5.n_identities = mid;
        h5.repeats = crate::selection::default_repeats();
        Self {
            dataset,
            background: None,
            seed: 42,
            output: None,
            jobs: None,
            cache_anonymized: true,
            h1: Some(h1),
            h2: Some(h2),
            h3: Some(h3),
            h4: Some(h4),
            h5: Some(h5),
        }
    }
}

/// Halve (rounding down) while at least 3 remain, ending at 3:
/// 57 → [57, 28, 14, 7, 3].
pub fn halving_grid(n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = n;
    while k >= 3 {
        out.push(k);
        k /= 2;
    }
    if n >= 3 && out.last() != Some(&3) {
        out.push(3);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving() {
        assert_eq!(halving_grid(57), vec![57, 28, 14, 7, 3]);
        assert_eq!(halving_grid(20), vec![20, 10, 5, 3]);
        assert_eq!(halving_grid(3), vec![3]);
        assert!(halving_grid(2).is_empty());
    }

    #[test]
    fn anonymizer_json() {
        let a: AnonymizerSpec = serde_json::from_str(r#"{"kind":"noise","scale":3}"#).unwrap();
        assert_eq!(a, AnonymizerSpec::Gait(GaitAnonymizerSpec::Noise { scale: 3.0 }));
        let f: AnonymizerSpec = serde_json::from_str(r#"{"kind":"dp_snow"}"#).unwrap();
        assert_eq!(f, AnonymizerSpec::Face(ImageAnonymizerSpec::dp_snow()));
        let err = serde_json::from_str::<AnonymizerSpec>(r#"{"kind":"fawkes"}"#).unwrap_err().to_string();
        assert!(err.contains("unknown anonymizer kind"), "{err}");
        assert_eq!(serde_json::to_string(&a).unwrap(), r#"{"kind":"noise","scale":3.0}"#);
    }

    #[test]
    fn protocol_rules() {
        assert!(ProtocolSpec::percent_parrot(0.5).validate().is_ok());
        assert!(ProtocolSpec { anon_fraction: None, ..ProtocolSpec::percent_parrot(0.5) }.validate().is_err());
        assert!(ProtocolSpec { anon_fraction: Some(0.5), ..ProtocolSpec::naive() }.validate().is_err());
        assert!(ProtocolSpec::parrot().pretrain_on_anonymized());
        assert!(!ProtocolSpec::naive().pretrain_on_anonymized());
        let p: ProtocolSpec = serde_json::from_str(r#"{"kind":"percent_parrot","anon_fraction":0.25}"#).unwrap();
        assert_eq!(p.resolved().pretrain_on_anonymized, Some(true));
    }

    #[test]
    fn grid_validation() {
        let gait = AnonymizerSpec::Gait(GaitAnonymizerSpec::MotionExtraction);
        let face = AnonymizerSpec::Face(ImageAnonymizerSpec::eye_mask());
        let rec = RecognizerSpec::new(FeatureKind::Flatten, ClassifierSpec::svm());
        let g = GridSpec::new(vec![gait], vec![rec.clone()], vec![ProtocolSpec::parrot()]);
        assert!(g.validate(Modality::Gait).is_ok());
        assert!(g.validate(Modality::Face).is_err());
        let g = GridSpec::new(vec![face], vec![rec], vec![ProtocolSpec::parrot()]);
        assert!(g.validate(Modality::Gait).is_err());
    }

    #[test]
    fn sweep_sections_and_template() {
        let t = SweepConfig::template(Modality::Gait, "data".into(), 57);
        let text = serde_json::to_string_pretty(&t).unwrap();
        let back: SweepConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
        let secs = SweepConfig { output: Some("out".into()), ..t }.sections();
        assert_eq!(secs.len(), 5);
        assert_eq!(secs[3].1.output, Some(PathBuf::from("out/h4")));
        assert_eq!(secs[3].1.anon_cache, Some(PathBuf::from("out/anon")));
        assert_eq!(secs[3].1.grid.n_identities, vec![57, 28, 14, 7, 3]);
        for (_, c) in &secs {
            c.grid.validate(Modality::Gait).unwrap();
        }
        let f = SweepConfig::template(Modality::Face, "faces".into(), 20);
        for (_, c) in f.sections() {
            c.grid.validate(Modality::Face).unwrap();
        }
    }
}
