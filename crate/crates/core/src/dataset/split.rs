use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetManifest, Result};
use crate::seed::{derive_rng, hash_str};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub identity: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Train share of `n` samples: round-half-up, leaving at least one test sample.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    round_half_up(train_fraction * n as f64).min(n.saturating_sub(1))
}

/// Per-identity shuffle, first `train_count` samples to train, rest to test.
///
/// Each identity's shuffle is seeded from `(seed, identity id)`, so the split
/// of one identity does not depend on which other identities are selected.
pub fn split(
    manifest: &DatasetManifest,
    identity_ids: &[String],
    train_fraction: f64,
    seed: u64,
) -> Result<SplitResult> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidCount(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut seen = HashSet::new();
    let mut out = SplitResult { train: Vec::new(), test: Vec::new() };
    for id in identity_ids {
        let rec = manifest.identity(id).ok_or_else(|| DatasetError::UnknownIdentity(id.clone()))?;
        if !seen.insert(id.as_str()) {
            continue;
        }
        let n = rec.samples.len();
        let n_train = train_count(n, train_fraction);
        if n_train == 0 || n_train >= n {
            return Err(DatasetError::DegenerateSplit(id.clone()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derive_rng(seed, "split", &[hash_str(id)]));
        let refs = order.into_iter().map(|index| SampleRef { identity: id.clone(), index });
        for (k, r) in refs.enumerate() {
            if k < n_train {
                out.train.push(r);
            } else {
                out.test.push(r);
            }
        }
    }
    Ok(out)
}
