use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Train to validation proportion.
pub const DEFAULT_RATIO: (u32, u32) = (10, 1);

/// Disjoint train/validation id lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratio: (u32, u32),
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

impl SplitSpec {
    pub fn len(&self) -> usize {
        self.train_ids.len() + self.val_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle, then the first `floor(N * r_val / (r_train + r_val))`
/// ids go to validation and the remainder to training.
pub fn split(ids: &[String], ratio: (u32, u32), seed: u64) -> SplitSpec {
    let (r_train, r_val) = ratio;
    let n = ids.len();
    let total = (r_train + r_val).max(1) as usize;
    let n_val = n * r_val as usize / total;
    if n_val == 0 {
        log::warn!("split of {n} ids at {r_train}:{r_val} leaves the validation set empty");
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng::derived(seed, rng::stream::SPLIT, 0));
    let train_ids = shuffled.split_off(n_val);
    SplitSpec { ratio, train_ids, val_ids: shuffled }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i}")).collect()
    }

    #[test]
    fn ten_to_one() {
        let s = split(&ids(22), DEFAULT_RATIO, 1);
        assert_eq!(s.train_ids.len(), 20);
        assert_eq!(s.val_ids.len(), 2);
        assert_eq!(s, split(&ids(22), DEFAULT_RATIO, 1));
    }

    #[test]
    fn small_set_has_empty_validation() {
        let s = split(&ids(5), DEFAULT_RATIO, 3);
        assert_eq!(s.train_ids.len(), 5);
        assert!(s.val_ids.is_empty());
    }

    proptest! {
        #[test]
        fn partition_law(n in 0usize..200, seed in any::<u64>()) {
            let all = ids(n);
            let s = split(&all, DEFAULT_RATIO, seed);
            prop_assert_eq!(s.val_ids.len(), n / 11);
            let train: HashSet<_> = s.train_ids.iter().collect();
            let val: HashSet<_> = s.val_ids.iter().collect();
            prop_assert!(train.is_disjoint(&val));
            prop_assert_eq!(train.len() + val.len(), n);
            prop_assert!(all.iter().all(|id| train.contains(id) || val.contains(id)));
        }
    }
}
