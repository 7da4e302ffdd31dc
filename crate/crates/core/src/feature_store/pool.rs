use std::collections::BTreeSet;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, EngineRng};

/// Labeled / unlabeled / calibration partition of the training indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolState {
    n_train: usize,
    seed_size: usize,
    labeled: BTreeSet<usize>,
    unlabeled: BTreeSet<usize>,
    calibration: BTreeSet<usize>,
    round: usize,
}

/// Draws `seed_size` indices uniformly without replacement as the initial
/// labeled set; everything else starts unlabeled.
pub fn init_pool(n_train: usize, seed_size: usize, seed: u64) -> Result<PoolState> {
    if seed_size > n_train {
        return Err(Error::invalid(format!(
            "seed set of {seed_size} exceeds the {n_train} training samples"
        )));
    }
    let labeled: BTreeSet<usize> = index::sample(&mut rng_from_seed(seed), n_train, seed_size).into_iter().collect();
    let unlabeled = (0..n_train).filter(|i| !labeled.contains(i)).collect();
    Ok(PoolState {
        n_train,
        seed_size,
        labeled,
        unlabeled,
        calibration: BTreeSet::new(),
        round: 0,
    })
}

impl PoolState {
    pub fn labeled(&self) -> Vec<usize> {
        self.labeled.iter().copied().collect()
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }

    pub fn calibration(&self) -> Vec<usize> {
        self.calibration.iter().copied().collect()
    }

    /// Labeled plus calibration indices, ascending.
    pub fn purchased(&self) -> Vec<usize> {
        self.labeled.union(&self.calibration).copied().collect()
    }

    pub fn n_purchased(&self) -> usize {
        self.labeled.len() + self.calibration.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_unlabeled(&self, i: usize) -> bool {
        self.unlabeled.contains(&i)
    }

    /// Buys the labels of `batch`. The calibration split is topped up so that
    /// it holds `floor(cal_fraction * purchased_since_seed)` indices, the
    /// diverted ones drawn uniformly from the batch; the rest become labeled.
    pub fn acquire(&mut self, batch: &[usize], cal_fraction: f64, rng: &mut EngineRng) -> Result<()> {
        if !(0.0..1.0).contains(&cal_fraction) {
            return Err(Error::invalid(format!("cal_fraction {cal_fraction} outside [0, 1)")));
        }
        let mut seen = BTreeSet::new();
        for &i in batch {
            if !self.unlabeled.contains(&i) {
                return Err(Error::invalid(format!("index {i} is not in the unlabeled pool")));
            }
            if !seen.insert(i) {
                return Err(Error::invalid(format!("index {i} appears twice in the batch")));
            }
        }
        let bought = self.n_purchased() - self.seed_size + batch.len();
        let target = (cal_fraction * bought as f64).floor() as usize;
        let n_cal = target.saturating_sub(self.calibration.len()).min(batch.len());
        let diverted: BTreeSet<usize> = index::sample(rng, batch.len(), n_cal).into_iter().collect();
        for (pos, &i) in batch.iter().enumerate() {
            self.unlabeled.remove(&i);
            if diverted.contains(&pos) {
                self.calibration.insert(i);
            } else {
                self.labeled.insert(i);
            }
        }
        self.round += 1;
        Ok(())
    }

    /// Checks disjointness and containment of the three index sets.
    pub fn check_invariants(&self) -> Result<()> {
        let total = self.labeled.len() + self.unlabeled.len() + self.calibration.len();
        let union: BTreeSet<usize> = self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(&self.calibration)
            .copied()
            .collect();
        if union.len() != total {
            return Err(Error::invalid("pool index sets overlap"));
        }
        if union.iter().next_back().is_some_and(|&m| m >= self.n_train) {
            return Err(Error::invalid("pool index out of range"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_partition() {
        let pool = init_pool(50_000, 100, 3).unwrap();
        assert_eq!(pool.labeled().len(), 100);
        assert_eq!(pool.n_unlabeled(), 49_900);
        pool.check_invariants().unwrap();
    }

    #[test]
    fn seed_is_deterministic() {
        let a = init_pool(1000, 10, 9).unwrap();
        let b = init_pool(1000, 10, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_seed_errors() {
        assert!(init_pool(10, 11, 0).is_err());
    }

    #[test]
    fn acquisition_diverts_fraction() {
        let mut rng = rng_from_seed(1);
        let mut pool = init_pool(100, 10, 1).unwrap();
        for _ in 0..5 {
            let batch: Vec<usize> = pool.unlabeled().into_iter().take(10).collect();
            pool.acquire(&batch, 0.2, &mut rng).unwrap();
            pool.check_invariants().unwrap();
        }
        assert_eq!(pool.n_purchased(), 60);
        assert_eq!(pool.calibration().len(), 10);
        assert_eq!(pool.labeled().len(), 50);
        assert_eq!(pool.round(), 5);
    }

    #[test]
    fn fractional_diversion_accumulates() {
        let mut rng = rng_from_seed(1);
        let mut pool = init_pool(100, 0, 1).unwrap();
        for _ in 0..5 {
            let batch: Vec<usize> = pool.unlabeled().into_iter().take(1).collect();
            pool.acquire(&batch, 0.2, &mut rng).unwrap();
        }
        assert_eq!(pool.calibration().len(), 1);
    }

    #[test]
    fn rejects_foreign_or_duplicate_indices() {
        let mut rng = rng_from_seed(2);
        let mut pool = init_pool(20, 5, 2).unwrap();
        let l = pool.labeled()[0];
        assert!(pool.acquire(&[l], 0.0, &mut rng).is_err());
        let u = pool.unlabeled()[0];
        assert!(pool.acquire(&[u, u], 0.0, &mut rng).is_err());
    }
}
