//! Closed-set classifiers: one-vs-rest linear SVM, k-nearest neighbors and
//! a random forest of CART trees.
//!
//! Labels are kept sorted, so every score vector is indexed by the
//! lexicographic label order and argmax ties resolve to the smaller label.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SampleRef;
use crate::linalg::Standardizer;
use crate::seed::derive_rng;

pub use crate::features::FeatureVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("training set has a single label; need at least 2")]
    SingleClass,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("k = {k} exceeds the {n} training samples")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite feature value")]
    NonFinite,
}

type Result<T> = std::result::Result<T, ClassifyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Svm,
    Knn,
    RandomForest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { lambda: 1e-4, epochs: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { label: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

impl Tree {
    fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { label } => return label,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    /// One weight row and bias per label, over standardized features.
    Svm {
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
    },
    /// Standardized exemplars and their label indices.
    Knn {
        k: usize,
        exemplars: Vec<Vec<f64>>,
        exemplar_labels: Vec<usize>,
    },
    Forest {
        trees: Vec<Tree>,
        oob_accuracy: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    /// Sorted, distinct training labels.
    pub labels: Vec<String>,
    pub dim: usize,
    pub standardizer: Option<Standardizer>,
    pub model: Model,
}

/// Raw output for one query: scores aligned with the model's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample: SampleRef,
    pub true_label: String,
    pub scores: BTreeMap<String, f64>,
    pub predicted: String,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted == self.true_label
    }
}

/// Index of the largest score; the first (smallest label) wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

struct Encoded {
    labels: Vec<String>,
    y: Vec<usize>,
    dim: usize,
}

fn encode(features: &[FeatureVector], labels: &[String], min_classes: usize) -> Result<Encoded> {
    if features.len() != labels.len() {
        return Err(ClassifyError::LengthMismatch { features: features.len(), labels: labels.len() });
    }
    if features.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    let dim = features[0].dim();
    for f in features {
        if f.dim() != dim {
            return Err(ClassifyError::DimMismatch { expected: dim, got: f.dim() });
        }
        if !f.is_finite() {
            return Err(ClassifyError::NonFinite);
        }
    }
    let set: BTreeSet<&String> = labels.iter().collect();
    if set.len() < min_classes {
        return Err(ClassifyError::SingleClass);
    }
    let sorted: Vec<String> = set.into_iter().cloned().collect();
    let y = labels.iter().map(|l| sorted.binary_search(l).expect("label present")).collect();
    Ok(Encoded { labels: sorted, y, dim })
}

fn standardize_all(s: &Standardizer, features: &[FeatureVector]) -> Vec<Vec<f64>> {
    features.iter().map(|f| s.transform(&f.values)).collect()
}

/// One-vs-rest linear SVMs on standardized features, trained with the
/// kernelized form of Pegasos (regularized hinge loss, step size 1/(λt)).
/// A constant feature carries the bias. All heads share one seeded
/// permutation per epoch.
pub fn fit_svm(
    features: &[FeatureVector],
    labels: &[String],
    params: &SvmParams,
    seed: u64,
) -> Result<TrainedClassifier> {
    if !(params.lambda > 0.0) || params.epochs == 0 {
        return Err(ClassifyError::InvalidParameter(format!("svm needs lambda > 0 and epochs >= 1: {params:?}")));
    }
    let enc = encode(features, labels, 2)?;
    let standardizer = Standardizer::fit(features);
    let rows = standardize_all(&standardizer, features);
    let (n, d, c) = (rows.len(), enc.dim, enc.labels.len());
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j < d { rows[i][j] } else { 1.0 });
    drop(rows);
    let k = &a * a.transpose();
    let ky = |i: usize, cls: usize| if enc.y[i] == cls { 1.0 } else { -1.0 };

    // g[cls][j] = Σ_i αy[cls][i] · K[i][j]
    let mut alpha_y = vec![vec![0.0f64; n]; c];
    let mut g = vec![vec![0.0f64; n]; c];
    let mut t = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..params.epochs {
        order.shuffle(&mut derive_rng(seed, "svm-epoch", &[epoch as u64]));
        for &i in &order {
            t += 1;
            let step = params.lambda * t as f64;
            for cls in 0..c {
                let yi = ky(i, cls);
                if yi * g[cls][i] / step < 1.0 {
                    alpha_y[cls][i] += yi;
                    let row = k.column(i);
                    for (gj, kij) in g[cls].iter_mut().zip(row.iter()) {
                        *gj += yi * kij;
                    }
                }
            }
        }
    }
    let scale = 1.0 / (params.lambda * t as f64);
    let coef = DMatrix::from_fn(c, n, |cls, i| alpha_y[cls][i] * scale);
    let w = coef * &a;
    let weights: Vec<Vec<f64>> = (0..c).map(|cls| (0..d).map(|j| w[(cls, j)]).collect()).collect();
    let biases = (0..c).map(|cls| w[(cls, d)]).collect();
    Ok(TrainedClassifier {
        labels: enc.labels,
        dim: d,
        standardizer: Some(standardizer),
        model: Model::Svm { weights, biases },
    })
}

/// Stores standardized exemplars for k-nearest-neighbor voting.
pub fn fit_knn(features: &[FeatureVector], labels: &[String], k: usize) -> Result<TrainedClassifier> {
    let enc = encode(features, labels, 1)?;
    if k == 0 {
        return Err(ClassifyError::InvalidParameter("knn needs k >= 1".into()));
    }
    if k > features.len() {
        return Err(ClassifyError::KTooLarge { k, n: features.len() });
    }
    let standardizer = Standardizer::fit(features);
    let exemplars = standardize_all(&standardizer, features);
    Ok(TrainedClassifier {
        labels: enc.labels,
        dim: enc.dim,
        standardizer: Some(standardizer),
        model: Model::Knn { k, exemplars, exemplar_labels: enc.y },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100 }
    }
}

struct TreeBuilder<'a> {
    x: &'a [&'a [f64]],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn majority(&self, idx: &[usize]) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        best
    }

    /// Best Gini split over up to `mtry` non-constant candidate features.
    fn best_split(&self, idx: &[usize], r: &mut impl Rng) -> Option<(usize, f64)> {
        let dim = self.x[0].len();
        let mut features: Vec<usize> = (0..dim).collect();
        let mut tried = 0;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        let n = idx.len() as f64;
        let mut total = vec![0usize; self.n_classes];
        for &i in idx {
            total[self.y[i]] += 1;
        }
        for pos in 0..dim {
            if tried == self.mtry {
                break;
            }
            let pick = r.random_range(pos..dim);
            features.swap(pos, pick);
            let f = features[pos];
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            tried += 1;
            let mut left = vec![0usize; self.n_classes];
            let mut left_sq = 0.0f64;
            let mut right_sq: f64 = total.iter().map(|&c| (c * c) as f64).sum();
            let mut right = total.clone();
            for s in 0..pairs.len() - 1 {
                let cls = pairs[s].1;
                left_sq += (2 * left[cls] + 1) as f64;
                left[cls] += 1;
                right_sq -= (2 * right[cls] - 1) as f64;
                right[cls] -= 1;
                if pairs[s].0 == pairs[s + 1].0 {
                    continue;
                }
                let nl = (s + 1) as f64;
                let score = left_sq / nl + right_sq / (n - nl);
                if best.is_none_or(|(b, _, _)| score > b) {
                    best = Some((score, f, 0.5 * (pairs[s].0 + pairs[s + 1].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, r: &mut impl Rng) -> usize {
        let id = self.nodes.len();
        let first = self.y[idx[0]];
        if idx.iter().all(|&i| self.y[i] == first) {
            self.nodes.push(Node::Leaf { label: first });
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&idx, r) else {
            let label = self.majority(&idx);
            self.nodes.push(Node::Leaf { label });
            return id;
        };
        self.nodes.push(Node::Leaf { label: 0 });
        let (l, rr): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, r);
        let right = self.grow(rr, r);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

/// Bagged CART trees (Gini, √dim candidate features per split, grown to
/// purity). Tree `t` uses a seed derived from `(seed, t)`.
pub fn fit_forest(
    features: &[FeatureVector],
    labels: &[String],
    params: &ForestParams,
    seed: u64,
) -> Result<TrainedClassifier> {
    if params.n_trees == 0 {
        return Err(ClassifyError::InvalidParameter("forest needs at least one tree".into()));
    }
    let enc = encode(features, labels, 2)?;
    let n = features.len();
    let x: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
    let mtry = ((enc.dim as f64).sqrt().floor() as usize).max(1);
    let n_classes = enc.labels.len();
    let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = derive_rng(seed, "forest-tree", &[t as u64]);
            let sample: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let mut in_bag = vec![false; n];
            sample.iter().for_each(|&i| in_bag[i] = true);
            let mut b = TreeBuilder { x: &x, y: &enc.y, n_classes, mtry, nodes: Vec::new() };
            b.grow(sample, &mut r);
            (Tree { nodes: b.nodes }, in_bag)
        })
        .collect();
    let mut votes = vec![vec![0usize; n_classes]; n];
    for (tree, in_bag) in &grown {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            votes[i][tree.predict(x[i])] += 1;
        }
    }
    let voted: Vec<usize> = (0..n).filter(|&i| votes[i].iter().any(|&v| v > 0)).collect();
    let oob_accuracy = (!voted.is_empty()).then(|| {
        let correct = voted
            .iter()
            .filter(|&&i| argmax(&votes[i].iter().map(|&v| v as f64).collect::<Vec<_>>()) == enc.y[i])
            .count();
        correct as f64 / voted.len() as f64
    });
    Ok(TrainedClassifier {
        labels: enc.labels,
        dim: enc.dim,
        standardizer: None,
        model: Model::Forest { trees: grown.into_iter().map(|(t, _)| t).collect(), oob_accuracy },
    })
}

impl TrainedClassifier {
    pub fn kind(&self) -> ClassifierKind {
        match self.model {
            Model::Svm { .. } => ClassifierKind::Svm,
            Model::Knn { .. } => ClassifierKind::Knn,
            Model::Forest { .. } => ClassifierKind::RandomForest,
        }
    }

    pub fn oob_accuracy(&self) -> Option<f64> {
        match self.model {
            Model::Forest { oob_accuracy, .. } => oob_accuracy,
            _ => None,
        }
    }

    fn predict_one(&self, x: &[f64]) -> Prediction {
        let c = self.labels.len();
        match &self.model {
            Model::Svm { weights, biases } => {
                let scores: Vec<f64> = weights
                    .iter()
                    .zip(biases)
                    .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
                    .collect();
                let predicted = argmax(&scores);
                Prediction { scores, predicted }
            }
            Model::Knn { k, exemplars, exemplar_labels } => {
                let mut d: Vec<(f64, usize)> = exemplars
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (e.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                knn_vote(&d[..*k], exemplar_labels, c)
            }
            Model::Forest { trees, .. } => {
                let mut scores = vec![0.0; c];
                for t in trees {
                    scores[t.predict(x)] += 1.0;
                }
                scores.iter_mut().for_each(|s| *s /= trees.len() as f64);
                let predicted = argmax(&scores);
                Prediction { scores, predicted }
            }
        }
    }

    /// Scores and decisions for each query, in order.
    pub fn predict(&self, test: &[FeatureVector]) -> Result<Vec<Prediction>> {
        for f in test {
            if f.dim() != self.dim {
                return Err(ClassifyError::DimMismatch { expected: self.dim, got: f.dim() });
            }
        }
        Ok(test
            .par_iter()
            .map(|f| match &self.standardizer {
                Some(s) => self.predict_one(&s.transform(&f.values)),
                None => self.predict_one(&f.values),
            })
            .collect())
    }

    /// Like [`TrainedClassifier::predict`], attaching sample references, true labels and named scores.
    pub fn predict_records(
        &self,
        test: &[FeatureVector],
        refs: &[SampleRef],
        true_labels: &[String],
    ) -> Result<Vec<PredictionRecord>> {
        if test.len() != refs.len() || test.len() != true_labels.len() {
            return Err(ClassifyError::LengthMismatch { features: test.len(), labels: true_labels.len() });
        }
        Ok(self
            .predict(test)?
            .into_iter()
            .zip(refs.iter().zip(true_labels))
            .map(|(p, (r, t))| PredictionRecord {
                sample: r.clone(),
                true_label: t.clone(),
                scores: self.labels.iter().cloned().zip(p.scores).collect(),
                predicted: self.labels[p.predicted].clone(),
            })
            .collect())
    }
}

/// Majority vote among the neighbors; ties by smaller mean distance, then
/// smaller label. Scores are inverse-distance-weighted vote shares.
fn knn_vote(neighbors: &[(f64, usize)], exemplar_labels: &[usize], n_labels: usize) -> Prediction {
    let mut count = vec![0usize; n_labels];
    let mut dist_sum = vec![0.0f64; n_labels];
    let mut weight = vec![0.0f64; n_labels];
    let exact: Vec<usize> = neighbors.iter().filter(|(d, _)| *d == 0.0).map(|&(_, i)| exemplar_labels[i]).collect();
    for &(d, i) in neighbors {
        let l = exemplar_labels[i];
        count[l] += 1;
        dist_sum[l] += d;
        weight[l] += if exact.is_empty() {
            1.0 / d
        } else if d == 0.0 {
            1.0
        } else {
            0.0
        };
    }
    let total: f64 = weight.iter().sum();
    let scores = weight.iter().map(|w| w / total).collect();
    let mut predicted = exemplar_labels[neighbors[0].1];
    for l in 0..n_labels {
        if count[l] == 0 {
            continue;
        }
        let (cl, cp) = (count[l], count[predicted]);
        let (ml, mp) = (dist_sum[l] / cl as f64, dist_sum[predicted] / cp as f64);
        if cl > cp || (cl == cp && (ml < mp || (ml == mp && l < predicted))) {
            predicted = l;
        }
    }
    Prediction { scores, predicted }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierSpec {
    Svm {
        #[serde(default = "d_lambda")]
        lambda: f64,
        #[serde(default = "d_epochs")]
        epochs: usize,
    },
    Knn {
        #[serde(default = "d_k")]
        k: usize,
    },
    RandomForest {
        #[serde(default = "d_trees")]
        n_trees: usize,
    },
}

fn d_lambda() -> f64 {
    SvmParams::default().lambda
}
fn d_epochs() -> usize {
    SvmParams::default().epochs
}
fn d_k() -> usize {
    1
}
fn d_trees() -> usize {
    ForestParams::default().n_trees
}

impl ClassifierSpec {
    pub fn svm() -> Self {
        Self::Svm { lambda: d_lambda(), epochs: d_epochs() }
    }
    pub fn knn() -> Self {
        Self::Knn { k: d_k() }
    }
    pub fn random_forest() -> Self {
        Self::RandomForest { n_trees: d_trees() }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Self::Svm { .. } => ClassifierKind::Svm,
            Self::Knn { .. } => ClassifierKind::Knn,
            Self::RandomForest { .. } => ClassifierKind::RandomForest,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Svm { .. } => "svm",
            Self::Knn { .. } => "knn",
            Self::RandomForest { .. } => "random_forest",
        }
    }

    pub fn fit(&self, features: &[FeatureVector], labels: &[String], seed: u64) -> Result<TrainedClassifier> {
        match *self {
            Self::Svm { lambda, epochs } => fit_svm(features, labels, &SvmParams { lambda, epochs }, seed),
            Self::Knn { k } => fit_knn(features, labels, k),
            Self::RandomForest { n_trees } => fit_forest(features, labels, &ForestParams { n_trees }, seed),
        }
    }
}
