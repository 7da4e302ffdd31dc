//! Greedy maximization of the uncertainty-weighted coverage objective
//!
//! `F(S) = (1/|U|) * sum_u w(u) * max_{s in S} k(phi(u), phi(s))`
//!
//! with a Gaussian kernel on squared Euclidean distance. `F` is monotone
//! submodular for non-negative weights, so the greedy batch is within
//! `1 - 1/e` of the optimum.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_store::EmbeddingTable;
use crate::matrix::squared_distance_f32;
use crate::rng::rng_from_seed;

/// Largest sample used by the median-distance bandwidth heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 1024;

#[inline]
pub fn gaussian_kernel(sq_dist: f64, sigma: f64) -> f64 {
    (-sq_dist / (2.0 * sigma * sigma)).exp()
}

/// Median pairwise Euclidean distance over at most 1024 rows (sampled with
/// `seed` when the table is larger). Falls back to 1 for degenerate inputs.
pub fn median_heuristic_sigma(feats: &EmbeddingTable, seed: u64) -> f64 {
    let n = feats.n();
    let rows: Vec<usize> = if n <= MEDIAN_SUBSAMPLE {
        (0..n).collect()
    } else {
        let mut r = index::sample(&mut rng_from_seed(seed), n, MEDIAN_SUBSAMPLE).into_vec();
        r.sort_unstable();
        r
    };
    let mut dists: Vec<f64> = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            dists.push(squared_distance_f32(feats.row(i), feats.row(j)).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if *median > 0.0 {
        *median
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyResult {
    /// Pool positions in the order they were added.
    pub selected: Vec<usize>,
    /// Marginal gain of each addition.
    pub gains: Vec<f64>,
    /// `F` of the final set.
    pub objective: f64,
    /// Set when fewer candidates than the batch size were supplied.
    pub short: bool,
}

struct Problem {
    candidates: Vec<usize>,
    /// Row `c` holds `k(phi(u), phi(candidates[c]))` for every pool row `u`.
    kernel: Vec<Vec<f64>>,
    weights: Vec<f64>,
    norm: f64,
}

impl Problem {
    fn new(candidates: &[usize], feats: &EmbeddingTable, weights: &[f64], sigma: f64) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Empty("greedy candidates"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("kernel bandwidth must be positive, got {sigma}")));
        }
        if weights.len() != feats.n() {
            return Err(Error::DimensionMismatch {
                expected: feats.n(),
                got: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!("coverage weights must be finite and >= 0, got {w}")));
        }
        let mut sorted = candidates.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != candidates.len() {
            return Err(Error::invalid("duplicate greedy candidates"));
        }
        if sorted.last().is_some_and(|&c| c >= feats.n()) {
            return Err(Error::invalid("greedy candidate outside the pool"));
        }
        let kernel = sorted
            .par_iter()
            .map(|&c| {
                let s = feats.row(c);
                (0..feats.n())
                    .map(|u| gaussian_kernel(squared_distance_f32(feats.row(u), s), sigma))
                    .collect()
            })
            .collect();
        Ok(Problem {
            candidates: sorted,
            kernel,
            weights: weights.to_vec(),
            norm: 1.0 / feats.n() as f64,
        })
    }

    fn gain(&self, c: usize, cover: &[f64]) -> f64 {
        let mut g = 0.0;
        for ((&k, &cur), &w) in self.kernel[c].iter().zip(cover).zip(&self.weights) {
            if k > cur {
                g += w * (k - cur);
            }
        }
        g * self.norm
    }

    fn absorb(&self, c: usize, cover: &mut [f64]) {
        for (cur, &k) in cover.iter_mut().zip(&self.kernel[c]) {
            if k > *cur {
                *cur = k;
            }
        }
    }

    fn objective(&self, cover: &[f64]) -> f64 {
        cover.iter().zip(&self.weights).map(|(c, w)| c * w).sum::<f64>() * self.norm
    }
}

/// Naive greedy: every step re-evaluates all remaining candidates and keeps
/// the largest gain, the smaller pool position on ties.
pub fn coverage_greedy(
    candidates: &[usize],
    pool_feats: &EmbeddingTable,
    pool_scores: &[f64],
    b: usize,
    sigma: f64,
) -> Result<GreedyResult> {
    let problem = Problem::new(candidates, pool_feats, pool_scores, sigma)?;
    let m = problem.candidates.len();
    let steps = b.min(m);
    let mut cover = vec![0.0; pool_feats.n()];
    let mut used = vec![false; m];
    let mut result = GreedyResult {
        selected: Vec::with_capacity(steps),
        gains: Vec::with_capacity(steps),
        objective: 0.0,
        short: m < b,
    };
    for _ in 0..steps {
        let gains: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|c| if used[c] { f64::NEG_INFINITY } else { problem.gain(c, &cover) })
            .collect();
        let mut best = None;
        for (c, &g) in gains.iter().enumerate() {
            if !used[c] && best.is_none_or(|(_, bg)| g > bg) {
                best = Some((c, g));
            }
        }
        let (c, g) = best.expect("steps <= candidates");
        used[c] = true;
        problem.absorb(c, &mut cover);
        result.selected.push(problem.candidates[c]);
        result.gains.push(g);
    }
    result.objective = problem.objective(&cover);
    Ok(result)
}

#[derive(PartialEq)]
struct Entry {
    bound: f64,
    candidate: Reverse<usize>,
    stamp: usize,
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.candidate.cmp(&other.candidate))
    }
}

/// Lazy greedy with stale upper bounds in a max-heap. Produces the same
/// sequence as [`coverage_greedy`]: gains only shrink as the cover grows, and
/// a fresh entry is accepted only when no other bound beats it.
pub fn coverage_greedy_lazy(
    candidates: &[usize],
    pool_feats: &EmbeddingTable,
    pool_scores: &[f64],
    b: usize,
    sigma: f64,
) -> Result<GreedyResult> {
    let problem = Problem::new(candidates, pool_feats, pool_scores, sigma)?;
    let m = problem.candidates.len();
    let steps = b.min(m);
    let mut cover = vec![0.0; pool_feats.n()];
    let initial: Vec<f64> = (0..m).into_par_iter().map(|c| problem.gain(c, &cover)).collect();
    let mut heap: BinaryHeap<Entry> = initial
        .into_iter()
        .enumerate()
        .map(|(c, bound)| Entry {
            bound,
            candidate: Reverse(c),
            stamp: 0,
        })
        .collect();
    let mut result = GreedyResult {
        selected: Vec::with_capacity(steps),
        gains: Vec::with_capacity(steps),
        objective: 0.0,
        short: m < b,
    };
    for step in 0..steps {
        loop {
            let top = heap.pop().expect("heap holds the remaining candidates");
            let c = top.candidate.0;
            if top.stamp == step {
                problem.absorb(c, &mut cover);
                result.selected.push(problem.candidates[c]);
                result.gains.push(top.bound);
                break;
            }
            heap.push(Entry {
                bound: problem.gain(c, &cover),
                candidate: top.candidate,
                stamp: step,
            });
        }
    }
    result.objective = problem.objective(&cover);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(xs: &[f32]) -> EmbeddingTable {
        EmbeddingTable::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn single_pick_maximizes_weighted_similarity() {
        let pool = line(&[0.0, 0.2, 0.4, 5.0]);
        let w = [1.0, 1.0, 1.0, 0.5];
        let r = coverage_greedy(&[0, 1, 2, 3], &pool, &w, 1, 1.0).unwrap();
        let score = |s: usize| -> f64 {
            (0..4)
                .map(|u| {
                    let d = f64::from(pool.row(u)[0] - pool.row(s)[0]);
                    w[u] * (-d * d / 2.0).exp()
                })
                .sum()
        };
        let best = (0..4).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap();
        assert_eq!(r.selected, vec![best]);
        assert_eq!(best, 1);
    }

    #[test]
    fn zero_weights_take_first_candidates() {
        let pool = line(&[3.0, 1.0, 2.0, 0.0, 9.0]);
        let r = coverage_greedy(&[4, 1, 2, 3], &pool, &[0.0; 5], 2, 1.0).unwrap();
        assert_eq!(r.selected, vec![1, 2]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn short_candidate_list_returns_all() {
        let pool = line(&[0.0, 1.0, 2.0]);
        let r = coverage_greedy(&[2, 0], &pool, &[1.0; 3], 5, 1.0).unwrap();
        assert!(r.short);
        assert_eq!(r.selected.len(), 2);
    }

    #[test]
    fn gains_non_negative_and_sum_to_objective() {
        let xs: Vec<f32> = (0..40).map(|i| ((i * 17) % 23) as f32 * 0.3).collect();
        let pool = line(&xs);
        let w: Vec<f64> = (0..40).map(|i| f64::from((i * 7) % 5)).collect();
        let cands: Vec<usize> = (0..40).step_by(3).collect();
        let r = coverage_greedy(&cands, &pool, &w, 6, 0.8).unwrap();
        assert!(r.gains.iter().all(|&g| g >= 0.0));
        assert!(r.gains.windows(2).all(|g| g[1] <= g[0] + 1e-15));
        assert_abs_diff_eq!(r.gains.iter().sum::<f64>(), r.objective, epsilon = 1e-12);
    }

    #[test]
    fn lazy_matches_naive() {
        for seed in 0..20u64 {
            let xs: Vec<f32> = (0..60)
                .map(|i| (crate::rng::splitmix64(seed * 1000 + i) % 1000) as f32 / 100.0)
                .collect();
            let pool = EmbeddingTable::new(30, 2, xs).unwrap();
            let w: Vec<f64> = (0..30)
                .map(|i| (crate::rng::splitmix64(seed + 77 * i) % 7) as f64)
                .collect();
            let cands: Vec<usize> = (0..30).filter(|i| i % 2 == (seed % 2) as usize).collect();
            let a = coverage_greedy(&cands, &pool, &w, 6, 1.5).unwrap();
            let b = coverage_greedy_lazy(&cands, &pool, &w, 6, 1.5).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn invalid_inputs() {
        let pool = line(&[0.0, 1.0]);
        assert!(coverage_greedy(&[], &pool, &[1.0; 2], 1, 1.0).is_err());
        assert!(coverage_greedy(&[0], &pool, &[1.0; 2], 1, 0.0).is_err());
        assert!(coverage_greedy(&[0, 0], &pool, &[1.0; 2], 1, 1.0).is_err());
        assert!(coverage_greedy(&[0], &pool, &[-1.0, 1.0], 1, 1.0).is_err());
    }

    #[test]
    fn median_sigma() {
        let t = line(&[0.0, 1.0, 3.0]);
        // Distances 1, 3, 2 -> median 2.
        assert_eq!(median_heuristic_sigma(&t, 0), 2.0);
        assert_eq!(median_heuristic_sigma(&line(&[4.0, 4.0]), 0), 1.0);
    }
}
