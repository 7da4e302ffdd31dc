//! Lloyd's k-means with k-means++ seeding, deterministic per seed.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_store::EmbeddingTable;
use crate::matrix::{squared_distance, Matrix};
use crate::rng::{rng_from_seed, EngineRng};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// `k x d` centroids.
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
}

/// Picks `k` seeds by D^2 sampling; the first is `first` or a uniform draw.
/// When every remaining point coincides with a seed, the next seed is drawn
/// uniformly from the points not yet chosen.
pub(crate) fn kmeans_pp_seeds(points: &[Vec<f64>], k: usize, rng: &mut EngineRng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut d2 = vec![f64::INFINITY; n];
    for _ in 0..k.min(n) {
        let total: f64 = d2.iter().enumerate().filter(|(i, _)| !taken[*i]).map(|(_, v)| *v).sum();
        let pick = if chosen.is_empty() || !(total > 0.0) || !total.is_finite() {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for i in 0..n {
                if taken[i] || d2[i] == 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d2[i] {
                    break;
                }
                target -= d2[i];
            }
            pick.expect("positive mass implies a candidate")
        };
        taken[pick] = true;
        chosen.push(pick);
        let seed = &points[pick];
        d2.par_iter_mut().zip(points).for_each(|(d, p)| {
            let nd = squared_distance(p, seed);
            if nd < *d {
                *d = nd;
            }
        });
    }
    chosen
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub(crate) fn table_rows(points: &EmbeddingTable) -> Vec<Vec<f64>> {
    points
        .iter_rows()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

pub fn kmeans(points: &EmbeddingTable, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    kmeans_rows(&table_rows(points), k, seed, max_iter)
}

pub(crate) fn kmeans_rows(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} points")));
    }
    let d = points[0].len();
    let mut rng = rng_from_seed(seed);
    let seeds = kmeans_pp_seeds(points, k, &mut rng);
    let mut centroids = Matrix::zeros(k, d);
    for (j, &s) in seeds.iter().enumerate() {
        centroids.row_mut(j).copy_from_slice(&points[s]);
    }

    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut iterations = 0;
    for _ in 0..max_iter {
        let next: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = next.iter().zip(&assignment).any(|((a, _), b)| a != b);
        for (slot, (a, _)) in assignment.iter_mut().zip(&next) {
            *slot = *a;
        }
        if !changed {
            break;
        }
        iterations += 1;

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(p) {
                *s += v;
            }
        }
        // Empty clusters take the point farthest from its own centroid.
        let mut dist: Vec<f64> = next.iter().map(|(_, dd)| *dd).collect();
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    let old = assignment[i];
                    counts[old] -= 1;
                    for (s, v) in sums.row_mut(old).iter_mut().zip(&points[i]) {
                        *s -= v;
                    }
                    assignment[i] = j;
                    counts[j] = 1;
                    sums.row_mut(j).copy_from_slice(&points[i]);
                    dist[i] = 0.0;
                }
            }
        }
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                let (src, dst) = (sums.row(j).to_vec(), centroids.row_mut(j));
                for (c, s) in dst.iter_mut().zip(src) {
                    *c = s * inv;
                }
            }
        }
    }

    let final_pass: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
    let assignment = final_pass.iter().map(|(a, _)| *a).collect();
    let inertia = final_pass.iter().map(|(_, dd)| dd).sum();
    Ok(KMeansResult {
        centroids,
        assignment,
        inertia,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(xs: &[f32]) -> EmbeddingTable {
        EmbeddingTable::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn two_blobs() {
        let r = kmeans(&line(&[0.0, 0.1, 10.0, 10.1]), 2, 3, 100).unwrap();
        let mut cs: Vec<f64> = r.centroids.iter_rows().map(|c| c[0]).collect();
        cs.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(cs[0], 0.05, epsilon = 1e-6);
        assert_abs_diff_eq!(cs[1], 10.05, epsilon = 1e-6);
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_ne!(r.assignment[0], r.assignment[2]);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let r = kmeans(&line(&[0.0, 1.0, 3.0, 7.0, 7.5]), 5, 1, 10).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn repeated_point() {
        let r = kmeans(&line(&[2.5; 6]), 1, 9, 10).unwrap();
        assert_eq!(r.centroids.row(0), &[2.5]);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn k_larger_than_n_errors() {
        assert!(kmeans(&line(&[1.0, 2.0]), 3, 0, 10).is_err());
    }

    #[test]
    fn deterministic_and_consistent() {
        let xs: Vec<f32> = (0..200).map(|i| ((i * 37) % 101) as f32 * 0.1).collect();
        let pts = EmbeddingTable::new(100, 2, xs).unwrap();
        let a = kmeans(&pts, 7, 42, 50).unwrap();
        let b = kmeans(&pts, 7, 42, 50).unwrap();
        assert_eq!(a, b);
        let rows = table_rows(&pts);
        let mut inertia = 0.0;
        for (p, &j) in rows.iter().zip(&a.assignment) {
            let own = squared_distance(p, a.centroids.row(j));
            for c in a.centroids.iter_rows() {
                assert!(own <= squared_distance(p, c) + 1e-9);
            }
            inertia += own;
        }
        assert_abs_diff_eq!(inertia, a.inertia, epsilon = 1e-9);
    }
}
