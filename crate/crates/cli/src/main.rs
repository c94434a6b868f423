//! `anonbench`: generate datasets, anonymize them, select identity subsets,
//! run evaluation grids and emit plotting tables.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 when some grid cells failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anonbench::dataset::synth_face::generate_synthetic_faces;
use anonbench::dataset::synth_gait::generate_synthetic_gait;
use anonbench::dataset::Dataset;
use anonbench::harness::{
    anonymize_dataset, load_background, run_grid, select_identities, write_report, AnonymizerSpec, GridOutcome,
    RecognizerSpec, RunConfig, SelectionRequest, SweepConfig, ERRORS_FILE,
};
use anonbench::image_anon::ImageAnonymizerSpec;
use anonbench::selection::{write_selection, SelectionStrategy};
use clap::{Parser, Subcommand, ValueEnum};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "ANONBENCH_OUT";
const DEFAULT_OUT: &str = "out";

#[derive(Parser, Debug)]
#[command(name = "anonbench", version, about = "Benchmark biometric anonymizers against recognition attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModalityArg {
    Gait,
    Face,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    All,
    Random,
    Classification,
    Metadata,
    Distinctive,
    Center,
}

impl From<StrategyArg> for SelectionStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::All => SelectionStrategy::All,
            StrategyArg::Random => SelectionStrategy::Random,
            StrategyArg::Classification => SelectionStrategy::Classification,
            StrategyArg::Metadata => SelectionStrategy::Metadata,
            StrategyArg::Distinctive => SelectionStrategy::Distinctive,
            StrategyArg::Center => SelectionStrategy::Center,
        }
    }
}

#[derive(clap::Args, Debug)]
struct Overrides {
    /// Master seed, replacing the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory, replacing the config value.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with its manifest.
    Generate {
        #[arg(long, value_enum)]
        modality: ModalityArg,
        #[arg(long)]
        identities: usize,
        /// Samples per identity (sequences for gait, images for face).
        #[arg(long, visible_aliases = ["images", "samples"])]
        sequences: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write an anonymized copy of a dataset.
    Anonymize {
        #[arg(long)]
        dataset: PathBuf,
        /// Anonymizer as JSON, e.g. '{"kind":"noise","scale":3}', or @file.
        #[arg(long)]
        anonymizer: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Background dataset for k-Same-Pixel.
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the identity list chosen by a selection strategy as JSON.
    Select {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Select on data anonymized by this anonymizer (JSON or @file).
        #[arg(long)]
        anonymizer: Option<String>,
        /// Recognizer for the classification strategy (JSON or @file).
        #[arg(long)]
        recognizer: Option<String>,
        #[arg(long)]
        background: Option<PathBuf>,
        /// Output file; the list goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one evaluation grid.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the experiment sections h1..h5 of a sweep config.
    Sweep {
        #[arg(long, required_unless_present = "template")]
        config: Option<PathBuf>,
        /// Run only these sections (comma separated).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Print a sweep config for this dataset instead of running.
        #[arg(long, value_name = "DATASET", conflicts_with = "config")]
        template: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Turn results into per-figure CSV tables.
    Report {
        /// A results directory or a sweep output directory.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

type CmdResult = Result<u8, Failure>;

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

const RUN_SCHEMA: &str = r#"evaluate config (JSON):
  {
    "dataset": "path/to/dataset",          required
    "background": "path/to/background",    optional
    "seed": 42,                            optional, default 0
    "output": "out/run",                   optional
    "jobs": 4,                             optional
    "cache_anonymized": true,              optional
    "grid": {
      "anonymizers": [{"kind": "noise", "scale": 3}],
      "recognizers": [{"features": "flatten", "classifier": {"kind": "svm"}}],
      "protocols": [{"kind": "parrot"}, {"kind": "percent_parrot", "anon_fraction": 0.5}],
      "selections": ["random"],           optional, default ["all"]
      "n_identities": [57, 28, 14],       optional, default all identities
      "repeats": 10,                      optional, default 1
      "train_fraction": 0.75,             optional
      "selection_source": "anonymized"    optional
    }
  }
sweep config: the same top-level fields with grids under "h1" .. "h5"
instead of "grid"; `anonbench sweep --template <dataset>` prints one."#;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {what} {}: {e}\n\n{RUN_SCHEMA}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid {what} {}: {e}\n\n{RUN_SCHEMA}", path.display())))
}

fn inline_json<T: serde::de::DeserializeOwned>(arg: &str, what: &str) -> Result<T, Failure> {
    let text = match arg.strip_prefix('@') {
        Some(p) => fs::read_to_string(p).map_err(|e| usage(format!("cannot read {what} {p}: {e}")))?,
        None => arg.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid {what}: {e}")))
}

fn load(path: &Path) -> Result<Dataset, Failure> {
    Dataset::load(path).map_err(|e| usage(format!("cannot load dataset {}: {e}", path.display())))
}

// Paths in a config file are relative to the file's directory.
fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_anonymizers(base: &Path, anonymizers: &mut [AnonymizerSpec]) {
    for a in anonymizers {
        if let AnonymizerSpec::Face(ImageAnonymizerSpec::KSamePixel { background: Some(p), .. }) = a {
            rebase(base, p);
        }
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn report_outcome(label: &str, outcome: &GridOutcome, out: &Path) -> u8 {
    eprintln!(
        "{label}: {} cells, {} evaluated, {} failed -> {}",
        outcome.n_cells,
        outcome.results.len(),
        outcome.errors.len(),
        out.display()
    );
    if outcome.errors.is_empty() {
        0
    } else {
        eprintln!("{label}: failed cells are listed in {}", out.join(ERRORS_FILE).display());
        2
    }
}

fn generate(modality: ModalityArg, identities: usize, samples: usize, seed: u64, out: Option<PathBuf>) -> CmdResult {
    let (mut ds, name) = match modality {
        ModalityArg::Gait => (generate_synthetic_gait(identities, samples, seed), "gait"),
        ModalityArg::Face => (generate_synthetic_faces(identities, samples, seed), "face"),
    };
    let ds = ds.as_mut().map_err(|e| usage(e.to_string()))?;
    let dir =
        out.unwrap_or_else(|| out_root().join("datasets").join(format!("{name}-{identities}x{samples}-seed{seed}")));
    ds.write(&dir).map_err(|e| Failure { code: 1, message: e.to_string() })?;
    println!("{}", dir.display());
    Ok(0)
}

fn anonymize(
    dataset: &Path,
    anonymizer: &str,
    seed: u64,
    background: Option<&Path>,
    out: Option<PathBuf>,
) -> CmdResult {
    let spec: AnonymizerSpec = inline_json(anonymizer, "anonymizer")?;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let ds = load(dataset)?;
    let bg = background.map(load).transpose()?;
    let ksame = load_background(&spec, bg.as_ref()).map_err(|e| usage(e.to_string()))?;
    let mut anon = anonymize_dataset(&ds, &spec, seed, ksame.as_ref()).map_err(|e| usage(e.to_string()))?;
    let label = if spec.params().is_empty() {
        spec.name().to_string()
    } else {
        format!("{}-{}", spec.name(), spec.params().replace([';', '='], "_"))
    };
    let dir = out.unwrap_or_else(|| out_root().join("anonymized").join(format!("{label}-seed{seed}")));
    anon.write(&dir).map_err(|e| Failure { code: 1, message: e.to_string() })?;
    println!("{}", dir.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn select(
    dataset: &Path,
    strategy: StrategyArg,
    n: usize,
    repeat: usize,
    seed: u64,
    anonymizer: Option<&str>,
    recognizer: Option<&str>,
    background: Option<&Path>,
    out: Option<PathBuf>,
) -> CmdResult {
    let mut req = SelectionRequest::new(strategy.into(), n);
    req.repeat = repeat;
    req.seed = seed;
    req.anonymizer = anonymizer.map(|a| inline_json::<AnonymizerSpec>(a, "anonymizer")).transpose()?;
    req.recognizer = recognizer.map(|r| inline_json::<RecognizerSpec>(r, "recognizer")).transpose()?;
    let ds = load(dataset)?;
    let bg = background.map(load).transpose()?;
    let ids = select_identities(&ds, bg.as_ref(), &req).map_err(|e| usage(e.to_string()))?;
    match out {
        Some(path) => {
            write_selection(&path, &ids).map_err(|e| usage(e.to_string()))?;
            println!("{}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&ids).expect("ids serialize")),
    }
    Ok(0)
}

fn apply_overrides(
    seed: &mut u64,
    jobs: &mut Option<usize>,
    output: &mut Option<PathBuf>,
    o: &Overrides,
    default_name: &str,
) {
    if let Some(s) = o.seed {
        *seed = s;
    }
    if o.jobs.is_some() {
        *jobs = o.jobs;
    }
    if let Some(out) = &o.out {
        *output = Some(out.clone());
    }
    if output.is_none() {
        *output = Some(out_root().join(default_name));
    }
}

fn evaluate(config_path: &Path, overrides: &Overrides) -> CmdResult {
    let mut cfg: RunConfig = read_json(config_path, "evaluate config")?;
    let base = config_dir(config_path);
    rebase(&base, &mut cfg.dataset);
    if let Some(b) = cfg.background.as_mut() {
        rebase(&base, b);
    }
    if let Some(o) = cfg.output.as_mut() {
        rebase(&base, o);
    }
    if let Some(c) = cfg.anon_cache.as_mut() {
        rebase(&base, c);
    }
    rebase_anonymizers(&base, &mut cfg.grid.anonymizers);
    apply_overrides(&mut cfg.seed, &mut cfg.jobs, &mut cfg.output, overrides, "evaluate");
    if cfg.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let outcome = run_grid(&cfg).map_err(|e| usage(format!("{e}\n\n{RUN_SCHEMA}")))?;
    Ok(report_outcome("evaluate", &outcome, cfg.output.as_deref().unwrap_or(Path::new("."))))
}

fn sweep_template(dataset: &Path) -> CmdResult {
    let ds = load(dataset)?;
    let dataset = fs::canonicalize(dataset).map_err(|e| usage(format!("{}: {e}", dataset.display())))?;
    let t = SweepConfig::template(ds.modality(), dataset, ds.n_identities());
    println!("{}", serde_json::to_string_pretty(&t).expect("config serializes"));
    Ok(0)
}

fn sweep(config_path: &Path, only: &[String], overrides: &Overrides) -> CmdResult {
    let mut cfg: SweepConfig = read_json(config_path, "sweep config")?;
    let base = config_dir(config_path);
    rebase(&base, &mut cfg.dataset);
    if let Some(b) = cfg.background.as_mut() {
        rebase(&base, b);
    }
    if let Some(o) = cfg.output.as_mut() {
        rebase(&base, o);
    }
    for g in [&mut cfg.h1, &mut cfg.h2, &mut cfg.h3, &mut cfg.h4, &mut cfg.h5].into_iter().flatten() {
        rebase_anonymizers(&base, &mut g.anonymizers);
    }
    apply_overrides(&mut cfg.seed, &mut cfg.jobs, &mut cfg.output, overrides, "sweep");
    if cfg.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let sections = cfg.sections();
    if let Some(bad) = only.iter().find(|s| !sections.iter().any(|(name, _)| name == s)) {
        return Err(usage(format!("section {bad:?} is not in the config")));
    }
    if sections.is_empty() {
        return Err(usage(format!("sweep config has no sections\n\n{RUN_SCHEMA}")));
    }
    let mut code = 0;
    for (name, section) in sections {
        if !only.is_empty() && !only.iter().any(|s| s == name) {
            continue;
        }
        let outcome = run_grid(&section).map_err(|e| usage(format!("{name}: {e}")))?;
        code = code.max(report_outcome(name, &outcome, section.output.as_deref().unwrap_or(Path::new("."))));
    }
    Ok(code)
}

fn report(results: &Path, out: Option<PathBuf>) -> CmdResult {
    let out = out.unwrap_or_else(|| results.join("report"));
    let written = write_report(results, &out).map_err(|e| usage(e.to_string()))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(0)
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Generate { modality, identities, sequences, seed, out } => {
            generate(modality, identities, sequences, seed, out)
        }
        Command::Anonymize { dataset, anonymizer, seed, background, out } => {
            anonymize(&dataset, &anonymizer, seed, background.as_deref(), out)
        }
        Command::Select { dataset, strategy, n, repeat, seed, anonymizer, recognizer, background, out } => select(
            &dataset,
            strategy,
            n,
            repeat,
            seed,
            anonymizer.as_deref(),
            recognizer.as_deref(),
            background.as_deref(),
            out,
        ),
        Command::Evaluate { config, overrides } => evaluate(&config, &overrides),
        Command::Sweep { config, only, template, overrides } => match (template, config) {
            (Some(dataset), _) => sweep_template(&dataset),
            (None, Some(config)) => sweep(&config, &only, &overrides),
            (None, None) => Err(usage("sweep needs --config or --template")),
        },
        Command::Report { results, out } => report(&results, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
