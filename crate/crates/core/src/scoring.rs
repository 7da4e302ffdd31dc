//! Cross-modal disagreement score and its pool-level diagnostics.
//!
//! For one sample the teacher and student sets are merged into a support
//! `Omega`, both posteriors are renormalized on it and compared with the
//! Jensen-Shannon divergence. A confidence gate mixes that divergence with
//! the student's full-posterior entropy.

use std::f64::consts::LN_2;

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::PredictionSets;
use crate::error::{Error, Result};
use crate::matrix::argmax;
use crate::posterior::{entropy, PosteriorMatrix};

/// Stabilizer in the confidence gate denominator.
pub const GATE_EPS: f64 = 1e-8;

const MIN_SUPPORT_MASS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub delta: f64,
    pub w_js: f64,
    pub js: f64,
    pub h_s: f64,
    pub conf_s: f64,
    pub conf_t: f64,
    pub omega_size: usize,
    pub overlap: usize,
    pub symdiff: usize,
    pub top1_disagree: bool,
}

/// `gs | gt`; an empty union falls back to the two top-1 labels.
pub fn union_support(gs: &FixedBitSet, gt: &FixedBitSet, top_s: usize, top_t: usize) -> FixedBitSet {
    let mut omega = gs.clone();
    omega.union_with(gt);
    if omega.is_clear() {
        omega.insert(top_s);
        omega.insert(top_t);
    }
    omega
}

/// Zeroes mass outside `omega` and rescales the rest to sum to one.
pub fn renormalize(p: &[f64], omega: &FixedBitSet) -> Result<Vec<f64>> {
    if omega.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: omega.len(),
        });
    }
    let mass: f64 = omega.ones().map(|c| p[c]).sum();
    if !(mass >= MIN_SUPPORT_MASS) {
        return Err(Error::Renormalize { mass });
    }
    Ok(p.iter()
        .enumerate()
        .map(|(c, &v)| if omega.contains(c) { v / mass } else { 0.0 })
        .collect())
}

/// Jensen-Shannon divergence in nats, clamped to `[0, ln 2]`.
///
/// Each coordinate is evaluated on the ordered pair `(min, max)`, so
/// `js_divergence(p, r)` and `js_divergence(r, p)` perform identical
/// floating-point operations.
pub fn js_divergence(p: &[f64], r: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), r.len());
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(r) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m = 0.5 * (lo + hi);
        let mut t = 0.0;
        if lo > 0.0 {
            t += lo * (lo / m).ln();
        }
        if hi > 0.0 {
            t += hi * (hi / m).ln();
        }
        total += 0.5 * t;
    }
    total.clamp(0.0, LN_2)
}

/// `conf_t / (conf_t + conf_s + eps)`.
pub fn confidence_gate(conf_t: f64, conf_s: f64, eps: f64) -> f64 {
    conf_t / (conf_t + conf_s + eps)
}

fn max_prob(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Scores one sample: `delta = w_js * JS(p_s^Omega, p_t^Omega) + (1 - w_js) * H(p_s)`.
pub fn ccma_score(p_s: &[f64], p_t: &[f64], gs: &FixedBitSet, gt: &FixedBitSet, eps: f64) -> Result<ScoreRecord> {
    let c = p_s.len();
    if p_t.len() != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            got: p_t.len(),
        });
    }
    for set in [gs, gt] {
        if set.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                got: set.len(),
            });
        }
    }
    let (top_s, top_t) = (argmax(p_s), argmax(p_t));
    let omega = union_support(gs, gt, top_s, top_t);
    let js = js_divergence(&renormalize(p_s, &omega)?, &renormalize(p_t, &omega)?);
    let h_s = entropy(p_s);
    let (conf_s, conf_t) = (max_prob(p_s), max_prob(p_t));
    let w_js = confidence_gate(conf_t, conf_s, eps);
    let overlap = gs.intersection_count(gt);
    Ok(ScoreRecord {
        delta: w_js * js + (1.0 - w_js) * h_s,
        w_js,
        js,
        h_s,
        conf_s,
        conf_t,
        omega_size: omega.count_ones(..),
        overlap,
        symdiff: gs.count_ones(..) + gt.count_ones(..) - 2 * overlap,
        top1_disagree: top_s != top_t,
    })
}

/// Scores every row of a pool; rows of the four inputs must line up.
pub fn score_pool(
    p_s: &PosteriorMatrix,
    p_t: &PosteriorMatrix,
    sets_s: &PredictionSets,
    sets_t: &PredictionSets,
    eps: f64,
) -> Result<Vec<ScoreRecord>> {
    let n = p_s.rows();
    for got in [p_t.rows(), sets_s.len(), sets_t.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    (0..n)
        .into_par_iter()
        .map(|i| ccma_score(p_s.row(i), p_t.row(i), sets_s.set(i), sets_t.set(i), eps))
        .collect()
}

/// Pool means of the per-sample diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolDiagnostics {
    pub n: usize,
    pub mean_overlap: f64,
    pub mean_symdiff: f64,
    pub frac_top1_disagree: f64,
    pub mean_js: f64,
    pub mean_conf_s: f64,
    pub mean_conf_t: f64,
    pub mean_delta: f64,
}

pub fn pool_diagnostics(records: &[ScoreRecord]) -> Result<PoolDiagnostics> {
    if records.is_empty() {
        return Err(Error::Empty("score records"));
    }
    let n = records.len() as f64;
    let mean = |f: fn(&ScoreRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    Ok(PoolDiagnostics {
        n: records.len(),
        mean_overlap: mean(|r| r.overlap as f64),
        mean_symdiff: mean(|r| r.symdiff as f64),
        frac_top1_disagree: mean(|r| if r.top1_disagree { 1.0 } else { 0.0 }),
        mean_js: mean(|r| r.js),
        mean_conf_s: mean(|r| r.conf_s),
        mean_conf_t: mean(|r| r.conf_t),
        mean_delta: mean(|r| r.delta),
    })
}
