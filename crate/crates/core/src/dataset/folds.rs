use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Assignment of sample ids to `k` folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldSplit {
    /// Ids in fold `f`, in the order they were given to [`make_folds`].
    pub fn fold<'a>(&self, ids: &'a [String], f: usize) -> Vec<&'a String> {
        ids.iter().filter(|id| self.assignments.get(*id) == Some(&f)).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle followed by round-robin assignment, so fold sizes differ by
/// at most one.
pub fn make_folds(ids: &[String], k: usize, seed: u64) -> Result<FoldSplit, DataError> {
    if k < 2 {
        return Err(DataError::Config(format!("fold count must be at least 2, got {k}")));
    }
    if ids.len() < k {
        return Err(DataError::Config(format!("{} samples cannot fill {k} folds", ids.len())));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(DataError::Config(format!("duplicate sample id {dup:?}")));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = order
        .into_iter()
        .enumerate()
        .map(|(pos, i)| (ids[i].clone(), pos % k))
        .collect();
    Ok(FoldSplit { k, assignments })
}
