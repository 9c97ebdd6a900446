use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum SplitScheme {
    Kfold { k: usize },
    Fixed { train: usize, test: usize },
}

impl Default for SplitScheme {
    fn default() -> Self {
        SplitScheme::Kfold { k: 10 }
    }
}

/// Which partition a run trains on and whether features are standardized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub split: SplitScheme,
    /// Fold held out as the test set.
    pub fold: usize,
    /// Fit per-feature mean/scale on the training rows.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            split: SplitScheme::default(),
            fold: 0,
            standardize: true,
        }
    }
}

impl DataConfig {
    /// Train/test rows of `n` samples under `seed`.
    pub fn resolve(&self, n: usize, seed: u64) -> Result<Split> {
        make_splits(n, self.split, seed)?.split(self.fold)
    }
}

/// One train/test partition; both index lists ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded partition of `0..n` into test folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub n: usize,
    pub scheme: SplitScheme,
    pub seed: u64,
    /// Test indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
}

impl Splits {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    /// Fold `f` as test set, everything else as training set.
    pub fn split(&self, f: usize) -> Result<Split> {
        let test = self
            .folds
            .get(f)
            .ok_or_else(|| Error::Config(format!("fold {f} out of range for {} folds", self.folds.len())))?
            .clone();
        let mut in_test = vec![false; self.n];
        for &i in &test {
            in_test[i] = true;
        }
        let train = (0..self.n).filter(|&i| !in_test[i]).collect();
        Ok(Split { train, test })
    }
}

pub fn make_splits(n: usize, scheme: SplitScheme, seed: u64) -> Result<Splits> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).fork("splits").shuffle(&mut order);
    let mut folds = match scheme {
        SplitScheme::Kfold { k } => {
            if k < 2 || k > n {
                return Err(Error::Config(format!("k-fold needs 2 ≤ k ≤ n, got k={k}, n={n}")));
            }
            let (base, extra) = (n / k, n % k);
            let mut folds = Vec::with_capacity(k);
            let mut start = 0;
            for f in 0..k {
                let len = base + usize::from(f < extra);
                folds.push(order[start..start + len].to_vec());
                start += len;
            }
            folds
        }
        SplitScheme::Fixed { train, test } => {
            if train + test != n || test == 0 || train == 0 {
                return Err(Error::Input(format!(
                    "fixed split {train}/{test} does not match {n} samples"
                )));
            }
            vec![order[train..].to_vec()]
        }
    };
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(Splits { n, scheme, seed, folds })
}
