//! Identity-selection strategies that reduce an evaluation set to a small,
//! deliberately easy-to-distinguish subset of identities.
//!
//! Random sampling, metadata spread, per-identity distinctiveness
//! (genuine/imposter scores), spread of identity means in feature space
//! ("center") and top per-identity accuracy ("classification"; the
//! accuracies come from a full evaluation run in the harness).
//! All ties resolve toward the lexicographically smaller identity id.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetManifest;
use crate::features::FeatureVector;
use crate::linalg::{dist, mean_vector, Pca};
use crate::seed::derive_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("cannot select {n} identities from {available}")]
    NTooLarge { n: usize, available: usize },
    #[error("selection size {n} is below the minimum of {min}")]
    NTooSmall { n: usize, min: usize },
    #[error("identity {identity} lacks metadata attribute {key:?}")]
    MissingMetadata { identity: String, key: String },
    #[error("need feature vectors for at least 2 identities")]
    SingleIdentity,
    #[error("identity {0} has no feature vectors")]
    NoFeatures(String),
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("selection file {path}: {message}")]
    Storage { path: String, message: String },
}

type Result<T> = std::result::Result<T, SelectionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionStrategy {
    /// Every identity; the unreduced evaluation set.
    All,
    Random,
    Classification,
    Metadata,
    Distinctive,
    Center,
}

impl SelectionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::All => "all",
            SelectionStrategy::Random => "random",
            SelectionStrategy::Classification => "classification",
            SelectionStrategy::Metadata => "metadata",
            SelectionStrategy::Distinctive => "distinctive",
            SelectionStrategy::Center => "center",
        }
    }

    /// Only random selections differ between repeats.
    pub fn is_randomized(self) -> bool {
        self == SelectionStrategy::Random
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub strategy: SelectionStrategy,
    pub n_identities: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

pub fn default_repeats() -> usize {
    10
}

fn check_n(n: usize, available: usize, min: usize) -> Result<()> {
    if n > available {
        return Err(SelectionError::NTooLarge { n, available });
    }
    if n < min {
        return Err(SelectionError::NTooSmall { n, min });
    }
    Ok(())
}

/// Uniform sample of `n` ids without replacement, fixed by `(seed, repeat_index)`.
pub fn select_random(ids: &[String], n: usize, repeat_index: usize, seed: u64) -> Result<Vec<String>> {
    check_n(n, ids.len(), 0)?;
    let mut pool = ids.to_vec();
    pool.sort();
    let (chosen, _) = pool.partial_shuffle(&mut derive_rng(seed, "select-random", &[repeat_index as u64]), n);
    Ok(chosen.to_vec())
}

/// Greedy spread: the farthest pair first, then repeatedly the point
/// farthest from the mean of the points chosen so far. `points` must be
/// sorted by id; ties keep the earlier (smaller) id.
pub fn greedy_farthest(points: &[(String, Vec<f64>)], n: usize) -> Result<Vec<String>> {
    check_n(n, points.len(), 2)?;
    let mut pair = (0, 1);
    let mut best = -1.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = dist(&points[i].1, &points[j].1);
            if d > best {
                best = d;
                pair = (i, j);
            }
        }
    }
    let mut chosen = vec![pair.0, pair.1];
    let mut taken = vec![false; points.len()];
    taken[pair.0] = true;
    taken[pair.1] = true;
    while chosen.len() < n {
        let selected: Vec<&[f64]> = chosen.iter().map(|&i| points[i].1.as_slice()).collect();
        let center = mean_vector(&selected);
        let mut pick = None;
        let mut far = -1.0;
        for (i, (_, v)) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist(v, &center);
            if d > far {
                far = d;
                pick = Some(i);
            }
        }
        let i = pick.expect("n <= number of points");
        taken[i] = true;
        chosen.push(i);
    }
    Ok(chosen.into_iter().map(|i| points[i].0.clone()).collect())
}

/// Metadata vectors min-max normalized per attribute, sorted by id.
pub fn normalized_metadata(manifest: &DatasetManifest) -> Result<Vec<(String, Vec<f64>)>> {
    let keys: Vec<String> =
        manifest.identities.first().map(|r| r.metadata.keys().cloned().collect()).unwrap_or_default();
    let mut rows: Vec<(String, Vec<f64>)> = Vec::with_capacity(manifest.identities.len());
    for rec in &manifest.identities {
        let mut v = Vec::with_capacity(keys.len());
        for k in &keys {
            match rec.metadata.get(k) {
                Some(x) => v.push(*x),
                None => return Err(SelectionError::MissingMetadata { identity: rec.id.clone(), key: k.clone() }),
            }
        }
        rows.push((rec.id.clone(), v));
    }
    for a in 0..keys.len() {
        let lo = rows.iter().map(|r| r.1[a]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.1[a]).fold(f64::NEG_INFINITY, f64::max);
        for r in &mut rows {
            r.1[a] = if hi > lo { (r.1[a] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(rows)
}

pub fn select_metadata(manifest: &DatasetManifest, n: usize) -> Result<Vec<String>> {
    greedy_farthest(&normalized_metadata(manifest)?, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityScores {
    pub id: String,
    /// Largest distance of the identity's vectors to their own mean.
    pub genuine_score: f64,
    /// Smallest distance of the identity's mean to another identity's vector.
    pub imposter_score: f64,
    pub mean_feature: FeatureVector,
}

impl IdentityScores {
    /// Ranking key of the distinctive strategy: half the margin between
    /// inter-class distance and intra-class spread.
    pub fn composite(&self) -> f64 {
        (self.imposter_score - self.genuine_score) / 2.0
    }
}

pub type FeatureMap = BTreeMap<String, Vec<FeatureVector>>;

fn check_features(features: &FeatureMap) -> Result<usize> {
    if features.len() < 2 {
        return Err(SelectionError::SingleIdentity);
    }
    let mut dim = None;
    for (id, vs) in features {
        if vs.is_empty() {
            return Err(SelectionError::NoFeatures(id.clone()));
        }
        for v in vs {
            match dim {
                None => dim = Some(v.dim()),
                Some(d) if d != v.dim() => return Err(SelectionError::DimMismatch(d, v.dim())),
                _ => {}
            }
        }
    }
    Ok(dim.unwrap_or(0))
}

/// Genuine and imposter scores per identity, sorted by id.
pub fn compute_identity_scores(features: &FeatureMap) -> Result<Vec<IdentityScores>> {
    check_features(features)?;
    let means: Vec<(&String, Vec<f64>)> = features.iter().map(|(id, vs)| (id, mean_vector(vs))).collect();
    Ok(means
        .iter()
        .map(|(id, mean)| {
            let genuine = features[*id].iter().map(|v| dist(&v.values, mean)).fold(0.0, f64::max);
            let imposter = features
                .iter()
                .filter(|(other, _)| other != id)
                .flat_map(|(_, vs)| vs.iter())
                .map(|v| dist(&v.values, mean))
                .fold(f64::INFINITY, f64::min);
            IdentityScores {
                id: (*id).clone(),
                genuine_score: genuine,
                imposter_score: imposter,
                mean_feature: FeatureVector::new(mean.clone()),
            }
        })
        .collect())
}

/// Top `n` identities by descending composite score.
pub fn select_distinctive(features: &FeatureMap, n: usize) -> Result<Vec<String>> {
    let mut scores = compute_identity_scores(features)?;
    check_n(n, scores.len(), 0)?;
    scores.sort_by(|a, b| b.composite().total_cmp(&a.composite()).then_with(|| a.id.cmp(&b.id)));
    Ok(scores.into_iter().take(n).map(|s| s.id).collect())
}

/// Greedy spread over per-identity mean vectors.
pub fn select_center(features: &FeatureMap, n: usize) -> Result<Vec<String>> {
    check_features(features)?;
    let means: Vec<(String, Vec<f64>)> = features.iter().map(|(id, vs)| (id.clone(), mean_vector(vs))).collect();
    greedy_farthest(&means, n)
}

/// Top `n` identities by per-identity accuracy.
pub fn select_by_accuracy(per_identity: &BTreeMap<String, f64>, n: usize) -> Result<Vec<String>> {
    check_n(n, per_identity.len(), 0)?;
    let mut ranked: Vec<(&String, f64)> = per_identity.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(n).map(|(k, _)| k.clone()).collect())
}

/// Projects every vector onto a `p`-component PCA fitted over all vectors.
pub fn pca_features(features: &FeatureMap, p: usize) -> Result<FeatureMap> {
    check_features(features)?;
    let all: Vec<&[f64]> = features.values().flatten().map(|v| v.values.as_slice()).collect();
    let pca = Pca::fit(&all, p);
    Ok(features
        .iter()
        .map(|(id, vs)| {
            let projected = vs
                .iter()
                .map(|v| {
                    let mut c = pca.project(&v.values);
                    c.resize(p, 0.0);
                    FeatureVector::new(c)
                })
                .collect();
            (id.clone(), projected)
        })
        .collect())
}

pub fn write_selection(path: &Path, ids: &[String]) -> Result<()> {
    let storage = |e: &dyn std::fmt::Display| SelectionError::Storage {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut text = serde_json::to_string_pretty(ids).map_err(|e| storage(&e))?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| storage(&e))?;
    }
    fs::write(path, text).map_err(|e| storage(&e))
}

pub fn read_selection(path: &Path) -> Result<Vec<String>> {
    let storage = |e: &dyn std::fmt::Display| SelectionError::Storage {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let text = fs::read_to_string(path).map_err(|e| storage(&e))?;
    serde_json::from_str(&text).map_err(|e| storage(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{IdentityRecord, Modality};
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i:03}")).collect()
    }

    fn fmap(entries: &[(&str, &[[f64; 2]])]) -> FeatureMap {
        entries
            .iter()
            .map(|(id, vs)| (id.to_string(), vs.iter().map(|v| FeatureVector::new(v.to_vec())).collect()))
            .collect()
    }

    fn meta_manifest(rows: &[(f64, f64)]) -> DatasetManifest {
        let identities = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| IdentityRecord {
                id: format!("id{i:03}"),
                metadata: BTreeMap::from([("age".into(), a), ("sex".into(), b)]),
                samples: vec!["x".into(), "y".into()],
            })
            .collect();
        DatasetManifest::new(Modality::Gait, identities)
    }

    #[test]
    fn random_selection() {
        let all = ids(57);
        let mut full = select_random(&all, 57, 0, 1).unwrap();
        full.sort();
        assert_eq!(full, all);
        let a = select_random(&all, 3, 4, 9).unwrap();
        assert_eq!(a, select_random(&all, 3, 4, 9).unwrap());
        assert_ne!(a, select_random(&all, 3, 5, 9).unwrap());
        assert_eq!(select_random(&all, 58, 0, 0), Err(SelectionError::NTooLarge { n: 58, available: 57 }));
    }

    #[test]
    fn identity_scores_hand_case() {
        let s = compute_identity_scores(&fmap(&[("A", &[[0.0, 0.0], [0.0, 2.0]]), ("B", &[[3.0, 1.0]])])).unwrap();
        assert_eq!(s[0].mean_feature.values, vec![0.0, 1.0]);
        assert!((s[0].genuine_score - 1.0).abs() < 1e-9);
        assert!((s[0].imposter_score - 3.0).abs() < 1e-9);
        assert_eq!(s[1].genuine_score, 0.0);
        assert!(matches!(compute_identity_scores(&fmap(&[("A", &[[0.0, 0.0]])])), Err(SelectionError::SingleIdentity)));
    }

    #[test]
    fn duplicated_vectors_keep_scores() {
        let base = fmap(&[("A", &[[0.0, 0.0], [1.0, 2.0]]), ("B", &[[3.0, 1.0], [4.0, 4.0]]), ("C", &[[-2.0, 5.0]])]);
        let doubled: FeatureMap = base.iter().map(|(k, v)| (k.clone(), v.iter().chain(v).cloned().collect())).collect();
        let (a, b) = (compute_identity_scores(&base).unwrap(), compute_identity_scores(&doubled).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.genuine_score - y.genuine_score).abs() < 1e-12);
            assert!((x.imposter_score - y.imposter_score).abs() < 1e-12);
        }
    }

    #[test]
    fn distinctive_prefers_isolated() {
        let f = fmap(&[
            ("a", &[[0.0, 0.0], [1.0, 0.0]]),
            ("b", &[[0.1, 0.0], [0.9, 0.0]]),
            ("c", &[[50.0, 50.0], [50.5, 50.0]]),
        ]);
        assert_eq!(select_distinctive(&f, 1).unwrap(), vec!["c"]);
    }

    #[test]
    fn center_on_a_line() {
        let f = fmap(&[("p0", &[[0.0, 0.0]]), ("p1", &[[1.0, 0.0]]), ("p10", &[[10.0, 0.0]])]);
        assert_eq!(select_center(&f, 2).unwrap(), vec!["p0", "p10"]);
        assert_eq!(select_center(&f, 3).unwrap(), vec!["p0", "p10", "p1"]);
        assert!(matches!(select_center(&f, 1), Err(SelectionError::NTooSmall { .. })));
    }

    #[test]
    fn metadata_cases() {
        let m = meta_manifest(&[(0.0, 0.0), (1.0, 1.0), (0.5, 0.5)]);
        assert_eq!(select_metadata(&m, 2).unwrap(), vec!["id000", "id001"]);
        let three = select_metadata(&m, 3).unwrap();
        assert_eq!(&three[..2], &select_metadata(&m, 2).unwrap()[..]);
        let constant = meta_manifest(&[(5.0, 1.0); 4]);
        assert_eq!(select_metadata(&constant, 3).unwrap(), vec!["id000", "id001", "id002"]);
        let mut missing = m.clone();
        missing.identities[2].metadata.remove("sex");
        assert!(matches!(select_metadata(&missing, 2), Err(SelectionError::MissingMetadata { .. })));
    }

    #[test]
    fn accuracy_ranking() {
        let acc: BTreeMap<String, f64> =
            [("a", 1.0), ("b", 0.0), ("c", 1.0), ("d", 0.6)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(select_by_accuracy(&acc, 3).unwrap(), vec!["a", "c", "d"]);
        assert_eq!(select_by_accuracy(&acc, 4).unwrap().len(), 4);
    }

    #[test]
    fn selection_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sel.json");
        write_selection(&p, &ids(3)).unwrap();
        assert_eq!(read_selection(&p).unwrap(), ids(3));
        assert!(fs::read_to_string(&p).unwrap().trim_start().starts_with('['));
    }

    fn toy(points: &[(f64, f64)], per: usize) -> FeatureMap {
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let vs =
                    (0..per).map(|k| FeatureVector::new(vec![x + k as f64 * 0.25, y - (k * k) as f64 * 0.1])).collect();
                (format!("id{i:03}"), vs)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn strategies_return_n_distinct_known_ids(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..10),
            n_frac in 0.0f64..1.0,
            shift in (-1e3f64..1e3, -1e3f64..1e3),
        ) {
            let f = toy(&pts, 2);
            let n = 2 + ((pts.len() - 2) as f64 * n_frac) as usize;
            for sel in [select_center(&f, n).unwrap(), select_distinctive(&f, n).unwrap()] {
                let mut s = sel.clone();
                s.sort();
                s.dedup();
                prop_assert_eq!(s.len(), n);
                prop_assert!(sel.iter().all(|id| f.contains_key(id)));
            }
            // Prefix monotonicity of the greedy strategy.
            if n < pts.len() {
                let a = select_center(&f, n).unwrap();
                let b = select_center(&f, n + 1).unwrap();
                prop_assert_eq!(&b[..n], &a[..]);
            }
            // Translating every vector leaves distance-based rankings unchanged
            // up to rounding; compare when no near-ties exist.
            let moved: FeatureMap = f.iter().map(|(k, vs)| (k.clone(), vs.iter().map(|v| FeatureVector::new(vec![v.values[0] + shift.0, v.values[1] + shift.1])).collect())).collect();
            let scores = compute_identity_scores(&f).unwrap();
            let moved_scores = compute_identity_scores(&moved).unwrap();
            for (a, b) in scores.iter().zip(&moved_scores) {
                prop_assert!((a.composite() - b.composite()).abs() < 1e-9);
            }
        }
    }
}
