use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    Fractions { train: f64, val: f64, test: f64 },
    /// A held-out test set, with k cross-validation folds over the rest.
    HoldoutPlusKfold {
        test_fraction: f64,
        #[serde(default = "default_k")]
        k: usize,
    },
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    #[serde(flatten)]
    pub kind: SplitKind,
    pub seed: u64,
}

impl SplitPlan {
    pub fn fractions(train: f64, val: f64, test: f64, seed: u64) -> Self {
        SplitPlan {
            kind: SplitKind::Fractions { train, val, test },
            seed,
        }
    }

    pub fn kfold(test_fraction: f64, k: usize, seed: u64) -> Self {
        SplitPlan {
            kind: SplitKind::HoldoutPlusKfold { test_fraction, k },
            seed,
        }
    }
}

/// Disjoint, exhaustive index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Validation folds over `train` (empty for fractional plans).
    pub folds: Vec<Vec<usize>>,
}

impl SplitIndices {
    /// Training indices of fold `f`: every train index not in `folds[f]`.
    pub fn fold_train(&self, f: usize) -> Vec<usize> {
        let held = &self.folds[f];
        self.train
            .iter()
            .copied()
            .filter(|i| held.binary_search(i).is_err())
            .collect()
    }
}

// floor with a nudge so that e.g. 60000 * 0.2 is not rounded down to 11999
fn floor_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction + 1e-9).floor() as usize
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Split(format!("{name} fraction {f} outside [0, 1]")));
    }
    Ok(())
}

/// Seeded permutation split. Sizes are floor-rounded; the remainder goes to
/// the training set.
pub fn make_split(n_items: usize, plan: &SplitPlan) -> Result<SplitIndices> {
    let mut perm: Vec<usize> = (0..n_items).collect();
    perm.shuffle(&mut stream(derive_seed(plan.seed, "split")));
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    match plan.kind {
        SplitKind::Fractions { train, val, test } => {
            check_fraction("train", train)?;
            check_fraction("val", val)?;
            check_fraction("test", test)?;
            if (train + val + test - 1.0).abs() > 1e-9 {
                return Err(Error::Split(format!(
                    "fractions sum to {}, not 1",
                    train + val + test
                )));
            }
            if n_items < 10 {
                return Err(Error::Split(format!("need at least 10 items, got {n_items}")));
            }
            let n_test = floor_count(n_items, test);
            let n_val = floor_count(n_items, val);
            let test_idx = perm[..n_test].to_vec();
            let val_idx = perm[n_test..n_test + n_val].to_vec();
            let train_idx = perm[n_test + n_val..].to_vec();
            Ok(SplitIndices {
                train: sorted(train_idx),
                val: sorted(val_idx),
                test: sorted(test_idx),
                folds: Vec::new(),
            })
        }
        SplitKind::HoldoutPlusKfold { test_fraction, k } => {
            check_fraction("test", test_fraction)?;
            if k < 2 {
                return Err(Error::Split(format!("k must be >= 2, got {k}")));
            }
            let n_test = floor_count(n_items, test_fraction);
            let rest = &perm[n_test..];
            if rest.len() < k {
                return Err(Error::Split(format!(
                    "{} training items cannot fill {k} folds",
                    rest.len()
                )));
            }
            let mut folds = vec![Vec::new(); k];
            for (pos, &i) in rest.iter().enumerate() {
                folds[pos % k].push(i);
            }
            Ok(SplitIndices {
                train: sorted(rest.to_vec()),
                val: Vec::new(),
                test: sorted(perm[..n_test].to_vec()),
                folds: folds.into_iter().map(sorted).collect(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn amazon_sized_split() {
        let s = make_split(60_000, &SplitPlan::fractions(0.6, 0.2, 0.2, 7)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (36_000, 12_000, 12_000));
    }

    #[test]
    fn empty_validation_set() {
        let s = make_split(10, &SplitPlan::fractions(0.8, 0.0, 0.2, 1)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 0, 2));
    }

    #[test]
    fn deterministic() {
        let plan = SplitPlan::fractions(0.6, 0.2, 0.2, 99);
        assert_eq!(make_split(1234, &plan).unwrap(), make_split(1234, &plan).unwrap());
        let other = SplitPlan::fractions(0.6, 0.2, 0.2, 100);
        assert_ne!(make_split(1234, &plan).unwrap(), make_split(1234, &other).unwrap());
    }

    #[test]
    fn remainder_goes_to_train() {
        let s = make_split(17, &SplitPlan::fractions(0.5, 0.25, 0.25, 3)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (9, 4, 4));
    }

    #[test]
    fn infeasible_plans() {
        assert!(make_split(9, &SplitPlan::fractions(0.6, 0.2, 0.2, 0)).is_err());
        assert!(make_split(100, &SplitPlan::fractions(0.6, 0.2, 0.3, 0)).is_err());
        assert!(make_split(100, &SplitPlan::fractions(1.2, -0.1, -0.1, 0)).is_err());
        assert!(make_split(100, &SplitPlan::kfold(0.2, 1, 0)).is_err());
        assert!(make_split(4, &SplitPlan::kfold(0.5, 3, 0)).is_err());
    }

    #[test]
    fn k_defaults_to_five() {
        let plan: SplitPlan =
            serde_json::from_str(r#"{"kind":"holdout_plus_kfold","test_fraction":0.2,"seed":1}"#).unwrap();
        assert_eq!(plan, SplitPlan::kfold(0.2, 5, 1));
    }

    fn assert_partition(n: usize, parts: &[&Vec<usize>]) {
        let mut all: Vec<usize> = parts.iter().flat_map(|p| p.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn fractions_partition(n in 10usize..400, seed: u64, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let plan = SplitPlan::fractions(1.0 - hi, hi - lo, lo, seed);
            let s = make_split(n, &plan).unwrap();
            assert_partition(n, &[&s.train, &s.val, &s.test]);
        }

        #[test]
        fn kfold_partition(n in 10usize..400, seed: u64, k in 2usize..10) {
            let s = make_split(n, &SplitPlan::kfold(0.2, k, seed)).unwrap();
            assert_partition(n, &[&s.train, &s.test]);
            let refs: Vec<&Vec<usize>> = s.folds.iter().collect();
            assert_partition_of(&s.train, &refs);
            let sizes: Vec<usize> = s.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in 0..k {
                prop_assert_eq!(s.fold_train(f).len() + s.folds[f].len(), s.train.len());
            }
        }
    }

    fn assert_partition_of(whole: &[usize], parts: &[&Vec<usize>]) {
        let mut all: Vec<usize> = parts.iter().flat_map(|p| p.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, whole);
    }
}
