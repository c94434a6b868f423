//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use anonbench::classify::ClassifierSpec;
use anonbench::dataset::synth_face::generate_synthetic_faces;
use anonbench::dataset::synth_gait::generate_synthetic_gait;
use anonbench::dataset::{Dataset, DatasetManifest, FaceImage, GaitSequence, IdentityRecord, Modality, GAIT_FRAMES};
use anonbench::gait_anon::{anonymize_motion_extraction, GaitAnonymizerSpec, Region};
use anonbench::harness::{
    run_grid, run_grid_on, AnonymizerSpec, EvaluationResult, FeatureKind, GridOutcome, GridSpec, ProtocolSpec,
    RecognizerSpec, RunConfig, SweepConfig, RESULTS_FILE,
};
use anonbench::image_anon::{dp_pix, dp_snow, ImageAnonymizerSpec, KSameBackground, SNOW_GRAY};
use anonbench::selection::{compute_identity_scores, select_center, select_metadata, FeatureMap, SelectionStrategy};
use anonbench::FeatureVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASTER_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn noise(scale: f64) -> AnonymizerSpec {
    AnonymizerSpec::Gait(GaitAnonymizerSpec::Noise { scale })
}
fn keep_legs() -> AnonymizerSpec {
    AnonymizerSpec::Gait(GaitAnonymizerSpec::Keep { region: Region::Legs })
}
fn motion() -> AnonymizerSpec {
    AnonymizerSpec::Gait(GaitAnonymizerSpec::MotionExtraction)
}
fn svm_flatten() -> RecognizerSpec {
    RecognizerSpec::new(FeatureKind::Flatten, ClassifierSpec::svm())
}
fn svm_simple() -> RecognizerSpec {
    RecognizerSpec::new(FeatureKind::Simple, ClassifierSpec::svm())
}
fn knn_flatten() -> RecognizerSpec {
    RecognizerSpec::new(FeatureKind::Flatten, ClassifierSpec::knn())
}

fn run(ds: &Dataset, grid: GridSpec, seed: u64) -> GridOutcome {
    let mut cfg = RunConfig::new("synthetic", grid);
    cfg.seed = seed;
    cfg.cache_anonymized = false;
    let out = run_grid_on(&cfg, ds, None).expect("grid runs");
    for e in &out.errors {
        eprintln!("cell error: {e:?}");
    }
    out
}

fn mean_where(rows: &[EvaluationResult], pred: impl Fn(&EvaluationResult) -> bool) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| pred(r)).map(|r| r.accuracy).collect();
    assert!(!v.is_empty(), "no matching results");
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn criterion_1(gait: &Dataset) -> Verdict {
    let start = Instant::now();
    let out = run(gait, GridSpec::new(vec![noise(3.0)], vec![svm_flatten()], vec![ProtocolSpec::clear()]), 42);
    let secs = start.elapsed().as_secs_f64();
    let acc = out.results.first().map(|r| r.accuracy).unwrap_or(0.0);
    verdict(
        acc >= 0.90 && secs <= 300.0,
        format!("svm+flatten clear accuracy {acc:.3} (>= 0.90), {secs:.1}s (<= 300s)"),
    )
}

/// Per master seed: accuracy by (anonymizer params, protocol, fraction).
fn h1_h2_runs(gait: &Dataset) -> Vec<Vec<EvaluationResult>> {
    MASTER_SEEDS
        .iter()
        .map(|&seed| {
            let grid = GridSpec::new(
                vec![noise(3.0), noise(100.0)],
                vec![svm_simple()],
                vec![
                    ProtocolSpec::naive(),
                    ProtocolSpec::parrot(),
                    ProtocolSpec::percent_parrot(0.25),
                    ProtocolSpec::percent_parrot(0.5),
                    ProtocolSpec::percent_parrot(0.75),
                ],
            );
            run(gait, grid, seed).results
        })
        .collect()
}

fn acc_of(rows: &[EvaluationResult], params: &str, protocol: &str, fraction: Option<f64>) -> f64 {
    mean_where(rows, |r| r.anonymizer_params == params && r.protocol == protocol && r.anon_fraction == fraction)
}

fn criterion_2(runs: &[Vec<EvaluationResult>]) -> Verdict {
    let gaps: Vec<f64> =
        runs.iter().map(|r| acc_of(r, "scale=3", "parrot", None) - acc_of(r, "scale=3", "naive", None)).collect();
    let naive100 = median(runs.iter().map(|r| acc_of(r, "scale=100", "naive", None)).collect());
    let gap = median(gaps);
    let chance = runs[0][0].chance_level;
    verdict(
        gap >= 0.20 && naive100 <= chance + 0.05,
        format!(
            "median parrot-naive gap on Noise(3) {gap:.3} (>= 0.20); naive on Noise(100) {naive100:.3} (<= {:.3})",
            chance + 0.05
        ),
    )
}

fn criterion_3(runs: &[Vec<EvaluationResult>]) -> Verdict {
    let naive = median(runs.iter().map(|r| acc_of(r, "scale=3", "naive", None)).collect());
    let mut parts = Vec::new();
    let mut pass = false;
    for f in [0.25, 0.5, 0.75] {
        let m = median(runs.iter().map(|r| acc_of(r, "scale=3", "percent_parrot", Some(f))).collect());
        pass |= m >= naive + 0.10;
        parts.push(format!("{:.0}%-parrot {m:.3}", f * 100.0));
    }
    verdict(pass, format!("naive {naive:.3}, {} (need one >= {:.3})", parts.join(", "), naive + 0.10))
}

fn criterion_4(gait: &Dataset) -> Verdict {
    let grid = GridSpec::new(
        vec![noise(10.0), keep_legs(), motion()],
        vec![svm_flatten(), svm_simple(), knn_flatten()],
        vec![ProtocolSpec::parrot()],
    );
    let out = run(gait, grid, 42);
    let mut best: BTreeMap<String, (String, f64)> = BTreeMap::new();
    let mut table = Vec::new();
    for r in &out.results {
        let key = if r.anonymizer_params.is_empty() {
            r.anonymizer.clone()
        } else {
            format!("{}({})", r.anonymizer, r.anonymizer_params)
        };
        table.push(format!("{key}/{}={:.3}", r.recognizer, r.accuracy));
        let e = best.entry(key).or_insert((r.recognizer.clone(), f64::NEG_INFINITY));
        if r.accuracy > e.1 {
            *e = (r.recognizer.clone(), r.accuracy);
        }
    }
    let winners: std::collections::BTreeSet<&String> = best.values().map(|(r, _)| r).collect();
    let summary: Vec<String> = best.iter().map(|(a, (r, _))| format!("{a} -> {r}")).collect();
    verdict(
        winners.len() >= 2 && out.errors.is_empty(),
        format!("best recognizer: {} [{}]", summary.join(", "), table.join(" ")),
    )
}

fn criterion_5(gait: &Dataset) -> Verdict {
    let mut grid = GridSpec::new(vec![keep_legs(), noise(100.0)], vec![svm_flatten()], vec![ProtocolSpec::parrot()]);
    grid.selections = vec![SelectionStrategy::Random];
    grid.n_identities = vec![57, 28, 14, 7, 3];
    grid.repeats = 10;
    let out = run(gait, grid, 42);
    let mut pass = out.errors.is_empty();
    let mut legs = Vec::new();
    let mut loud = Vec::new();
    let mut prev: Option<f64> = None;
    for n in [57usize, 28, 14, 7, 3] {
        let at = |params: &str| mean_where(&out.results, |r| r.anonymizer_params == params && r.n_identities == n);
        let chance_ok = out.results.iter().filter(|r| r.n_identities == n).all(|r| r.chance_level == 1.0 / n as f64);
        let (k, z) = (at("region=legs"), at("scale=100"));
        if let Some(p) = prev {
            pass &= k >= p - 0.05;
        }
        prev = Some(k);
        pass &= chance_ok && z <= 1.0 / n as f64 + 0.05;
        legs.push(format!("{n}:{k:.3}"));
        loud.push(format!("{n}:{z:.3}/{:.3}", 1.0 / n as f64 + 0.05));
    }
    verdict(pass, format!("Keep(legs) {}; Noise(100) vs bound {}", legs.join(" "), loud.join(" ")))
}

fn criterion_6(gait: &Dataset) -> Verdict {
    let mut grid =
        GridSpec::new(vec![noise(10.0), keep_legs(), motion()], vec![svm_flatten()], vec![ProtocolSpec::parrot()]);
    grid.selections = vec![SelectionStrategy::Classification, SelectionStrategy::Random];
    grid.n_identities = vec![14, 28];
    grid.repeats = 10;
    let out = run(gait, grid, 42);
    let mut wins = 0;
    let mut parts = Vec::new();
    for params in ["scale=10", "region=legs", ""] {
        let mut ok = true;
        for n in [14usize, 28] {
            let at = |s: &str| {
                mean_where(&out.results, |r| r.anonymizer_params == params && r.n_identities == n && r.selection == s)
            };
            let (c, r) = (at("classification"), at("random"));
            ok &= c >= r;
            parts.push(format!("{}@{n}: {c:.3} vs {r:.3}", if params.is_empty() { "motion" } else { params }));
        }
        wins += usize::from(ok);
    }
    verdict(
        wins >= 2 && out.errors.is_empty(),
        format!("classification beats random for {wins}/3 anonymizers [{}]", parts.join(", ")),
    )
}

// Exhaustive greedy: every step scans all remaining candidates and keeps
// the first maximum in id order.
fn oracle_greedy(points: &[(String, Vec<f64>)], n: usize) -> Vec<String> {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.cmp(&b.0));
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            if i < j && d(&pts[i].1, &pts[j].1) > best.0 {
                best = (d(&pts[i].1, &pts[j].1), i, j);
            }
        }
    }
    let mut chosen = vec![best.1, best.2];
    while chosen.len() < n {
        let dim = pts[0].1.len();
        let centroid: Vec<f64> =
            (0..dim).map(|k| chosen.iter().map(|&c| pts[c].1[k]).sum::<f64>() / chosen.len() as f64).collect();
        let mut pick = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in pts.iter().enumerate() {
            if !chosen.contains(&i) && d(&p.1, &centroid) > pick.0 {
                pick = (d(&p.1, &centroid), i);
            }
        }
        chosen.push(pick.1);
    }
    chosen.into_iter().map(|i| pts[i].0.clone()).collect()
}

fn criterion_7() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    for instance in 0..25 {
        let ids: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
        let map: FeatureMap = ids
            .iter()
            .map(|id| {
                let vs = (0..3)
                    .map(|_| FeatureVector::new(vec![r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)]))
                    .collect();
                (id.clone(), vs)
            })
            .collect();
        let means: Vec<(String, Vec<f64>)> = map
            .iter()
            .map(|(id, vs)| {
                let m = (0..2).map(|k| vs.iter().map(|v| v.values[k]).sum::<f64>() / vs.len() as f64).collect();
                (id.clone(), m)
            })
            .collect();
        let records: Vec<IdentityRecord> = ids
            .iter()
            .map(|id| IdentityRecord {
                id: id.clone(),
                metadata: [
                    ("age".to_string(), f64::from(r.random_range(18..80u32))),
                    ("height".to_string(), r.random_range(150.0..200.0)),
                    ("sex".to_string(), f64::from(r.random_range(0..2u32))),
                ]
                .into(),
                samples: vec!["a.csv".into()],
            })
            .collect();
        let manifest = DatasetManifest::new(Modality::Gait, records.clone());
        let lo_hi = |k: &str| {
            let v: Vec<f64> = records.iter().map(|x| x.metadata[k]).collect();
            (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        };
        let meta: Vec<(String, Vec<f64>)> = records
            .iter()
            .map(|x| {
                let v = ["age", "height", "sex"]
                    .iter()
                    .map(|k| {
                        let (lo, hi) = lo_hi(k);
                        if hi > lo {
                            (x.metadata[*k] - lo) / (hi - lo)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (x.id.clone(), v)
            })
            .collect();
        for n in 2..=6 {
            if select_center(&map, n).unwrap() != oracle_greedy(&means, n) {
                failures.push(format!("center instance {instance} n={n}"));
            }
            if select_metadata(&manifest, n).unwrap() != oracle_greedy(&meta, n) {
                failures.push(format!("metadata instance {instance} n={n}"));
            }
        }
    }
    let toy: FeatureMap = [
        ("a".to_string(), vec![FeatureVector::new(vec![-1.0, 0.0]), FeatureVector::new(vec![1.0, 0.0])]),
        ("b".to_string(), vec![FeatureVector::new(vec![3.0, 0.0]), FeatureVector::new(vec![5.0, 0.0])]),
    ]
    .into();
    let scores = compute_identity_scores(&toy).unwrap();
    for s in &scores {
        if (s.genuine_score - 1.0).abs() > 1e-9 || (s.imposter_score - 3.0).abs() > 1e-9 {
            failures.push(format!("scores of {}: genuine {} imposter {}", s.id, s.genuine_score, s.imposter_score));
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "center, metadata and identity scores match the oracles".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn criterion_8() -> Verdict {
    let mut failures = Vec::new();
    let mut r = ChaCha8Rng::seed_from_u64(8);
    // No pixel starts out as the snow gray, so replaced pixels are countable.
    let img = FaceImage::from_fn(224, 224, |_, _| {
        let mut v = r.random_range(0..=254u8);
        if v >= 127 {
            v += 1;
        }
        [v, r.random(), r.random()]
    });
    for seed in 0..20 {
        let out = dp_snow(&img, 0.01, seed).unwrap();
        let replaced =
            (0..224).flat_map(|y| (0..224).map(move |x| (x, y))).filter(|&(x, y)| out.pixel(x, y) == SNOW_GRAY).count();
        let frac = replaced as f64 / (224.0 * 224.0);
        if !(0.005..=0.015).contains(&frac) {
            failures.push(format!("dp-snow fraction {frac:.4} at seed {seed}"));
        }
    }
    for b in [16usize, 12, 7] {
        let out = dp_pix(&img, f64::INFINITY, b, 16, 3).unwrap();
        for y in 0..224 {
            for x in 0..224 {
                let (by, bx) = (y / b * b, x / b * b);
                let (ye, xe) = ((by + b).min(224), (bx + b).min(224));
                let want: [u8; 3] = std::array::from_fn(|c| {
                    let mut s = 0u64;
                    for yy in by..ye {
                        for xx in bx..xe {
                            s += u64::from(img.pixel(xx, yy)[c]);
                        }
                    }
                    let n = ((ye - by) * (xe - bx)) as f64;
                    (s as f64 / n).round() as u8
                });
                if out.pixel(x, y) != want {
                    failures.push(format!("dp-pix b={b} differs at ({x},{y})"));
                }
            }
        }
    }
    let mut seq = vec![0.0; GAIT_FRAMES * 156];
    for v in seq.iter_mut() {
        *v = f64::from(r.random_range(-8000..8000i32)) / 8.0;
    }
    let seq = GaitSequence::from_vec(seq).unwrap();
    let shift = [12.5, -3.25, 100.0];
    let mut moved = seq.clone();
    for (k, v) in moved.as_mut_slice().iter_mut().enumerate() {
        *v += shift[k % 156 % 3];
    }
    if anonymize_motion_extraction(&seq).unwrap() != anonymize_motion_extraction(&moved).unwrap() {
        failures.push("motion extraction not translation invariant".into());
    }
    for spec in [
        GaitAnonymizerSpec::Noise { scale: 3.0 },
        GaitAnonymizerSpec::Keep { region: Region::Legs },
        GaitAnonymizerSpec::Keep { region: Region::Head },
        GaitAnonymizerSpec::MotionExtraction,
    ] {
        let out = spec.apply(&seq, 1).unwrap();
        if out.n_frames() != seq.n_frames() || out.as_slice().len() != seq.as_slice().len() {
            failures.push(format!("{spec} changed the sequence shape"));
        }
    }
    let faces = generate_synthetic_faces(12, 8, 3).unwrap();
    let bg = KSameBackground::from_dataset(&faces).unwrap();
    let face = faces.samples[0][0].as_face().unwrap();
    for spec in ImageAnonymizerSpec::all_defaults() {
        match spec.apply(face, 5, Some(&bg)) {
            // u8 channels are always inside [0, 255]; the shape is what can break.
            Ok(out) if out.same_shape(face) && out.as_bytes().len() == face.as_bytes().len() => {}
            Ok(_) => failures.push(format!("{spec} changed the image shape")),
            Err(e) => failures.push(format!("{spec} failed: {e}")),
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "dp-snow fraction, dp-pix block means, translation invariance, ranges and shapes hold".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = generate_synthetic_gait(8, 8, 9).unwrap();
    ds.write(&dir.path().join("data")).unwrap();
    let mut sweep = SweepConfig::template(Modality::Gait, dir.path().join("data"), 8);
    sweep.seed = 11;
    for g in [&mut sweep.h1, &mut sweep.h2, &mut sweep.h3, &mut sweep.h4, &mut sweep.h5].into_iter().flatten() {
        g.repeats = g.repeats.min(2);
        g.anonymizers.truncate(2);
    }
    let read = |out: &std::path::Path, name: &str| fs::read(out.join(name).join(RESULTS_FILE)).unwrap();
    let mut mismatches = Vec::new();
    let mut rows = 0;
    for (out_name, jobs) in [("a", Some(1)), ("b", Some(3)), ("a", Some(2))] {
        let cfg = SweepConfig { output: Some(dir.path().join(out_name)), jobs, ..sweep.clone() };
        for (name, section) in cfg.sections() {
            let outcome = run_grid(&section).unwrap();
            rows += outcome.results.len();
            if !outcome.errors.is_empty() {
                mismatches.push(format!("{name}: {} failed cells", outcome.errors.len()));
            }
        }
    }
    for (name, _) in sweep.sections() {
        if read(&dir.path().join("a"), name) != read(&dir.path().join("b"), name) {
            mismatches.push(format!("{name} differs between output directories"));
        }
    }
    let first = read(&dir.path().join("a"), "h1");
    verdict(
        mismatches.is_empty() && !first.is_empty(),
        if mismatches.is_empty() {
            format!("{rows} result rows identical across reruns, thread counts and cache reuse")
        } else {
            mismatches.join("; ")
        },
    )
}

fn main() {
    let gait = generate_synthetic_gait(57, 20, 42).expect("synthetic gait");
    let mut all_pass = true;
    let mut report = |n: usize, name: &str, v: Verdict| {
        all_pass &= v.pass;
        println!("criterion {n} ({name}): {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    report(1, "clear baseline", criterion_1(&gait));
    let runs = h1_h2_runs(&gait);
    report(2, "naive vs parrot", criterion_2(&runs));
    report(3, "percent parrot", criterion_3(&runs));
    report(4, "no single best recognizer", criterion_4(&gait));
    report(5, "identity count sweep", criterion_5(&gait));
    report(6, "classification selection", criterion_6(&gait));
    report(7, "selection oracles", criterion_7());
    report(8, "mechanism invariants", criterion_8());
    report(9, "determinism", criterion_9());
    if !all_pass {
        std::process::exit(1);
    }
}
