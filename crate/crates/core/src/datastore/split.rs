use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("split ratios {r:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` groups: each size is the floor
/// or ceiling of its exact share, leftovers going to the largest fractional
/// parts (lower partition first on ties).
pub fn partition_sizes(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let exact = [ratios.train, ratios.val, ratios.test].map(|r| r * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n.saturating_sub(sizes.iter().sum());
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Split {
    /// `image_id -> partition name`.
    pub fn assignments(&self) -> BTreeMap<String, &'static str> {
        let mut out = BTreeMap::new();
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for r in part.rows() {
                out.insert(r.image_id.clone(), name);
            }
        }
        out
    }
}

/// Partitions by `lesion_id` so no lesion straddles two partitions. Lesions
/// are shuffled with `seed` and apportioned with [`partition_sizes`].
pub fn split_dataset(dataset: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    let mut lesions: Vec<String> = dataset
        .rows()
        .map(|r| r.lesion_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if lesions.len() < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 lesions to split, found {}",
            lesions.len()
        )));
    }
    lesions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [n_train, n_val, _] = partition_sizes(lesions.len(), &ratios);
    let part: BTreeMap<&str, usize> = lesions
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let p = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            (l.as_str(), p)
        })
        .collect();
    let pick = |p: usize| dataset.filtered(|item| part[item.row.lesion_id.as_str()] == p);
    Ok(Split {
        train: pick(0),
        val: pick(1),
        test: pick(2),
    })
}
