//! Comparison acquisition strategies.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::EmbeddingTable;
use crate::matrix::{squared_distance, squared_distance_f32, Matrix};
use crate::posterior::{entropy, PosteriorMatrix};
use crate::rng::rng_from_seed;
use crate::selection::kmeans::kmeans_pp_seeds;

/// Acquisition strategy names accepted in configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    /// Least confidence: lowest top-1 probability first.
    Uncertainty,
    Entropy,
    Margins,
    Coreset,
    Bald,
    Badge,
    Ccma,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Random,
        Strategy::Uncertainty,
        Strategy::Entropy,
        Strategy::Margins,
        Strategy::Coreset,
        Strategy::Bald,
        Strategy::Badge,
        Strategy::Ccma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Uncertainty => "uncertainty",
            Strategy::Entropy => "entropy",
            Strategy::Margins => "margins",
            Strategy::Coreset => "coreset",
            Strategy::Bald => "bald",
            Strategy::Badge => "badge",
            Strategy::Ccma => "ccma",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

/// Uniform draw of `min(B, |unlabeled|)` indices without replacement.
pub fn select_random(unlabeled: &[usize], b: usize, seed: u64) -> Vec<usize> {
    let k = b.min(unlabeled.len());
    index::sample(&mut rng_from_seed(seed), unlabeled.len(), k)
        .into_iter()
        .map(|i| unlabeled[i])
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMode {
    LeastConfidence,
    Entropy,
    Margins,
}

/// Larger means more uncertain.
pub fn uncertainty_score(p: &[f64], mode: UncertaintyMode) -> f64 {
    match mode {
        UncertaintyMode::LeastConfidence => -p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        UncertaintyMode::Entropy => entropy(p),
        UncertaintyMode::Margins => {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &v in p {
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            let second = if second.is_finite() { second } else { 0.0 };
            -(first - second)
        }
    }
}

fn top_b(scores: &[f64], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order.truncate(b.min(scores.len()));
    order
}

/// Row positions of the `B` most uncertain posteriors; ties by position.
pub fn select_uncertainty(posteriors: &PosteriorMatrix, b: usize, mode: UncertaintyMode) -> Vec<usize> {
    let scores: Vec<f64> = posteriors.iter_rows().map(|p| uncertainty_score(p, mode)).collect();
    top_b(&scores, b)
}

/// k-center greedy in the student embedding space. Each step adds the
/// unlabeled point farthest from everything covered so far (`labeled` plus
/// earlier picks). With nothing labeled, the first pick is the point
/// farthest from the unlabeled centroid.
pub fn select_coreset(embeds: &EmbeddingTable, labeled: &[usize], unlabeled: &[usize], b: usize) -> Vec<usize> {
    let k = b.min(unlabeled.len());
    if k == 0 {
        return Vec::new();
    }
    let mut min_d2: Vec<f64> = unlabeled
        .iter()
        .map(|&u| {
            labeled
                .iter()
                .map(|&l| squared_distance_f32(embeds.row(u), embeds.row(l)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; unlabeled.len()];
    if labeled.is_empty() {
        let d = embeds.d();
        let mut centroid = vec![0.0; d];
        for &u in unlabeled {
            for (c, &v) in centroid.iter_mut().zip(embeds.row(u)) {
                *c += f64::from(v);
            }
        }
        centroid.iter_mut().for_each(|c| *c /= unlabeled.len() as f64);
        for (slot, &u) in min_d2.iter_mut().zip(unlabeled) {
            let row: Vec<f64> = embeds.row(u).iter().map(|&v| f64::from(v)).collect();
            *slot = squared_distance(&row, &centroid);
        }
    }
    for step in 0..k {
        let mut best: Option<usize> = None;
        for (i, &d) in min_d2.iter().enumerate() {
            if !taken[i] && best.is_none_or(|bi| d > min_d2[bi]) {
                best = Some(i);
            }
        }
        let pick = best.expect("k <= unlabeled");
        taken[pick] = true;
        chosen.push(unlabeled[pick]);
        if step == 0 && labeled.is_empty() {
            min_d2.iter_mut().for_each(|d| *d = f64::INFINITY);
        }
        let p = embeds.row(unlabeled[pick]);
        for (i, &u) in unlabeled.iter().enumerate() {
            let d = squared_distance_f32(embeds.row(u), p);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }
    chosen
}

/// Mutual information `H(mean_k p_k) - mean_k H(p_k)` per row.
pub fn bald_scores(mc_posteriors: &[PosteriorMatrix]) -> Result<Vec<f64>> {
    let k = mc_posteriors.len();
    if k < 2 {
        return Err(Error::invalid(format!("BALD needs at least 2 passes, got {k}")));
    }
    let (n, c) = (mc_posteriors[0].rows(), mc_posteriors[0].num_classes());
    if mc_posteriors.iter().any(|p| p.rows() != n || p.num_classes() != c) {
        return Err(Error::invalid("MC passes differ in shape"));
    }
    let mut scores = Vec::with_capacity(n);
    let mut mean = vec![0.0; c];
    for i in 0..n {
        mean.iter_mut().for_each(|m| *m = 0.0);
        let mut mean_entropy = 0.0;
        for pass in mc_posteriors {
            let row = pass.row(i);
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v / k as f64;
            }
            mean_entropy += entropy(row) / k as f64;
        }
        scores.push((entropy(&mean) - mean_entropy).max(0.0));
    }
    Ok(scores)
}

/// Row positions of the `B` highest mutual-information scores.
pub fn select_bald(mc_posteriors: &[PosteriorMatrix], b: usize) -> Result<Vec<usize>> {
    Ok(top_b(&bald_scores(mc_posteriors)?, b))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BadgeSelection {
    /// Row positions, in seeding order.
    pub positions: Vec<usize>,
    /// Some seeds had to be drawn uniformly because all D^2 mass was zero.
    pub random_fallback: bool,
}

/// k-means++ seeding over gradient embeddings; the seeds are the batch. The
/// first seed is uniform, later seeds are D^2 draws.
pub fn select_badge(grad_embeds: &Matrix, b: usize, seed: u64) -> BadgeSelection {
    let rows: Vec<Vec<f64>> = grad_embeds.iter_rows().map(<[f64]>::to_vec).collect();
    let k = b.min(rows.len());
    let positions = kmeans_pp_seeds(&rows, k, &mut rng_from_seed(seed));
    // Zero D^2 mass after the first seed means the rest were uniform draws.
    let mut random_fallback = false;
    for (step, &p) in positions.iter().enumerate().skip(1) {
        let min_d = positions[..step]
            .iter()
            .map(|&q| squared_distance(&rows[p], &rows[q]))
            .fold(f64::INFINITY, f64::min);
        if min_d == 0.0 {
            random_fallback = true;
        }
    }
    if rows.iter().all(|r| r.iter().all(|&v| v == 0.0)) {
        random_fallback = true;
    }
    BadgeSelection {
        positions,
        random_fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn post(rows: &[Vec<f64>]) -> PosteriorMatrix {
        PosteriorMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn random_full_and_seeded() {
        let u: Vec<usize> = (10..20).collect();
        let mut all = select_random(&u, 10, 3);
        all.sort_unstable();
        assert_eq!(all, u);
        assert_eq!(select_random(&u, 4, 9), select_random(&u, 4, 9));
        assert_eq!(select_random(&u, 40, 9).len(), 10);
    }

    #[test]
    fn uniform_row_is_most_uncertain() {
        let p = post(&[vec![0.9, 0.1], vec![0.5, 0.5]]);
        for mode in [UncertaintyMode::LeastConfidence, UncertaintyMode::Entropy, UncertaintyMode::Margins] {
            assert_eq!(select_uncertainty(&p, 1, mode), vec![1]);
        }
    }

    #[test]
    fn one_hot_margin_is_last() {
        assert_eq!(uncertainty_score(&[0.0, 1.0, 0.0], UncertaintyMode::Margins), -1.0);
        let p = post(&[vec![0.0, 1.0, 0.0], vec![0.4, 0.35, 0.25], vec![0.98, 0.01, 0.01]]);
        assert_eq!(select_uncertainty(&p, 3, UncertaintyMode::Margins), vec![1, 2, 0]);
    }

    #[test]
    fn coreset_trace() {
        let e = EmbeddingTable::new(3, 1, vec![0.0, 1.0, 10.0]).unwrap();
        assert_eq!(select_coreset(&e, &[0], &[1, 2], 1), vec![2]);
        assert_eq!(select_coreset(&e, &[0], &[1, 2], 2), vec![2, 1]);
    }

    #[test]
    fn coreset_skips_duplicates_of_labeled() {
        let e = EmbeddingTable::new(4, 1, vec![0.0, 0.0, 0.5, 3.0]).unwrap();
        assert_eq!(select_coreset(&e, &[0], &[1, 2, 3], 2), vec![3, 2]);
    }

    #[test]
    fn coreset_cold_start_uses_centroid() {
        let e = EmbeddingTable::new(4, 1, vec![0.0, 1.0, 2.0, 9.0]).unwrap();
        // Centroid 3: farthest point is 9.0, then 0.0.
        assert_eq!(select_coreset(&e, &[], &[0, 1, 2, 3], 2), vec![3, 0]);
    }

    #[test]
    fn bald_cases() {
        let a = post(&[vec![0.3, 0.7], vec![0.5, 0.5]]);
        let s = bald_scores(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert!(s.iter().all(|&v| v.abs() < 1e-15));
        let p = post(&[vec![1.0, 0.0]]);
        let q = post(&[vec![0.0, 1.0]]);
        let s = bald_scores(&[p, q]).unwrap();
        assert!((s[0] - LN_2).abs() < 1e-12);
        assert!(bald_scores(&[a]).is_err());
    }

    fn far_rows(scale: f64) -> Matrix {
        let mut rows: Vec<Vec<f64>> = (0..50).map(|i| vec![1e-3 * i as f64, 0.0]).collect();
        rows[7] = vec![scale, 0.0];
        rows[31] = vec![0.0, -scale];
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn badge_reaches_far_rows() {
        // Once a near-zero row is the first seed, the second D^2 draw lands
        // on a far row with probability -> 1 as the far rows move out.
        let m = far_rows(1e4);
        let trials = 400;
        let mut hits = 0;
        for seed in 0..trials {
            let s = select_badge(&m, 2, seed).positions;
            if s.contains(&7) || s.contains(&31) {
                hits += 1;
            }
        }
        assert_eq!(hits, trials);
        let s = select_badge(&m, 3, 5);
        assert_eq!(s, select_badge(&m, 3, 5));
    }

    #[test]
    fn badge_second_draw_matches_d2_mass() {
        // With the first seed fixed, the second pick follows D^2 exactly.
        let m = far_rows(10.0);
        let trials = 20_000u64;
        let mut count = 0;
        let mut firsts = 0;
        for seed in 0..trials {
            let s = select_badge(&m, 2, seed).positions;
            if s[0] == 7 {
                firsts += 1;
                if s[1] == 31 {
                    count += 1;
                }
            }
        }
        let rows: Vec<&[f64]> = m.iter_rows().collect();
        let d2: Vec<f64> = rows.iter().map(|r| squared_distance(r, rows[7])).collect();
        let expected = d2[31] / d2.iter().sum::<f64>();
        let observed = count as f64 / firsts as f64;
        let se = (expected * (1.0 - expected) / firsts as f64).sqrt();
        assert!((observed - expected).abs() < 5.0 * se, "{observed} vs {expected}");
    }

    #[test]
    fn badge_single_seed_is_uniform() {
        let m = far_rows(1e3);
        let trials = 25_000u64;
        let mut counts = vec![0usize; 50];
        for seed in 0..trials {
            counts[select_badge(&m, 1, seed).positions[0]] += 1;
        }
        let expected = trials as f64 / 50.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 49 degrees of freedom, 0.999 quantile is about 85.4.
        assert!(chi2 < 85.4, "chi2 = {chi2}");
    }

    #[test]
    fn badge_all_zero_flags_fallback() {
        let m = Matrix::zeros(10, 3);
        let s = select_badge(&m, 4, 1);
        assert!(s.random_fallback);
        let mut p = s.positions.clone();
        p.sort_unstable();
        p.dedup();
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("typiclust".parse::<Strategy>().is_err());
    }

    #[test]
    fn random_inclusion_is_uniform() {
        let u: Vec<usize> = (0..20).collect();
        let (trials, b) = (10_000u64, 5);
        let mut counts = vec![0usize; u.len()];
        for seed in 0..trials {
            for i in select_random(&u, b, seed) {
                counts[i] += 1;
            }
        }
        let p = b as f64 / u.len() as f64;
        let mean = trials as f64 * p;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - mean).abs() <= 3.5 * sd, "{counts:?}");
        }
    }

    #[test]
    fn entropy_ranking_matches_recomputation() {
        let mut rng = rng_from_seed(17);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let raw: Vec<f64> = (0..5).map(|_| rand::Rng::random::<f64>(&mut rng).powi(3)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let p = post(&rows);
        let h: Vec<f64> = rows
            .iter()
            .map(|r| -r.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
            .collect();
        let mut expected: Vec<usize> = (0..100).collect();
        expected.sort_by(|&i, &j| h[j].partial_cmp(&h[i]).unwrap().then(i.cmp(&j)));
        assert_eq!(select_uncertainty(&p, 100, UncertaintyMode::Entropy), expected);
        assert_eq!(select_uncertainty(&p, 7, UncertaintyMode::Entropy), expected[..7]);
    }
}
