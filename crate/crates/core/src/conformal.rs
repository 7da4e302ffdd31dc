//! Split-conformal set predictors over `-log p` nonconformity scores.
//!
//! Two ways to pick the threshold `q`: bisection until the mean set size
//! over the calibration rows hits a target (label-free), or the
//! finite-sample `(1 - alpha)` quantile of the true-label scores.

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::LabelVector;
use crate::matrix::Matrix;
use crate::posterior::PosteriorMatrix;

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_SIZE_TOLERANCE: f64 = 0.05;

const MAX_BISECTION_STEPS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    SizeTarget,
    CoverageTarget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformalCalibrator {
    mode: CalibrationMode,
    target: f64,
    q: Option<f64>,
}

impl ConformalCalibrator {
    /// An unfitted calibrator.
    pub fn new(mode: CalibrationMode, target: f64) -> Self {
        ConformalCalibrator { mode, target, q: None }
    }

    pub fn mode(&self) -> CalibrationMode {
        self.mode
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn threshold(&self) -> Option<f64> {
        self.q
    }

    pub fn is_fitted(&self) -> bool {
        self.q.is_some()
    }
}

/// Entrywise `-ln(max(p, 1e-12))`.
pub fn nonconformity(p: &PosteriorMatrix) -> Matrix {
    let m = p.matrix();
    let data = m.as_slice().iter().map(|&v| -v.max(PROB_FLOOR).ln()).collect();
    Matrix::new(m.rows(), m.cols(), data).expect("same shape")
}

/// Nonconformity of the true label in each row.
pub fn scores_at_truth(scores: &Matrix, labels: &LabelVector) -> Result<Vec<f64>> {
    if labels.len() != scores.rows() {
        return Err(Error::DimensionMismatch {
            expected: scores.rows(),
            got: labels.len(),
        });
    }
    labels.check_classes(scores.cols())?;
    Ok((0..scores.rows()).map(|i| scores.get(i, labels.get(i))).collect())
}

/// Sorted flat view of a score matrix; counts entries `<= q` in O(log nC).
struct SortedScores {
    values: Vec<f64>,
    rows: usize,
}

impl SortedScores {
    fn new(scores: &Matrix) -> Self {
        let mut values = scores.as_slice().to_vec();
        values.sort_by(f64::total_cmp);
        SortedScores {
            values,
            rows: scores.rows(),
        }
    }

    fn mean_size(&self, q: f64) -> f64 {
        self.values.partition_point(|&v| v <= q) as f64 / self.rows as f64
    }
}

/// Bisects `q` on `[min score, max score]` until the mean set size is within
/// `tol` of `s`, or 60 steps elapse (then the closest threshold seen is kept,
/// the smaller one on ties).
pub fn calibrate_size_target(scores: &Matrix, s: f64, tol: f64) -> Result<ConformalCalibrator> {
    let (n, c) = (scores.rows(), scores.cols());
    if n == 0 || c == 0 {
        return Err(Error::Empty("calibration scores"));
    }
    if !(s >= 1.0 && s <= c as f64) {
        return Err(Error::invalid(format!("target set size {s} outside [1, {c}]")));
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid("bisection tolerance must be non-negative"));
    }
    if let Some(pos) = scores.as_slice().iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            row: pos / c,
            col: pos % c,
        });
    }
    let sorted = SortedScores::new(scores);
    let mut lo = sorted.values[0];
    let mut hi = *sorted.values.last().unwrap();
    let mut cal = ConformalCalibrator::new(CalibrationMode::SizeTarget, s);
    if s == c as f64 {
        cal.q = Some(hi);
        return Ok(cal);
    }

    let mut best = (f64::INFINITY, hi);
    let consider = |best: &mut (f64, f64), q: f64, size: f64| {
        let err = (size - s).abs();
        if err < best.0 || (err == best.0 && q < best.1) {
            *best = (err, q);
        }
    };
    consider(&mut best, lo, sorted.mean_size(lo));
    consider(&mut best, hi, sorted.mean_size(hi));
    for _ in 0..MAX_BISECTION_STEPS {
        if best.0 <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let size = sorted.mean_size(mid);
        consider(&mut best, mid, size);
        if size < s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    cal.q = Some(best.1);
    Ok(cal)
}

/// `q` = the `ceil((n+1)(1-alpha))`-th smallest true-label score, clamped to
/// the largest score when that rank exceeds `n`.
pub fn calibrate_coverage_target(scores_at_truth: &[f64], alpha: f64) -> Result<ConformalCalibrator> {
    let n = scores_at_truth.len();
    if n == 0 {
        return Err(Error::Empty("calibration scores"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    if scores_at_truth.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN calibration score"));
    }
    let mut sorted = scores_at_truth.to_vec();
    sorted.sort_by(f64::total_cmp);
    // The slack absorbs representation error in (n+1)(1-alpha) for exact ranks.
    let rank = (((n + 1) as f64) * (1.0 - alpha) - 1e-9).ceil().max(1.0) as usize;
    let q = sorted[rank.min(n) - 1];
    let mut cal = ConformalCalibrator::new(CalibrationMode::CoverageTarget, alpha);
    cal.q = Some(q);
    Ok(cal)
}

/// Per-sample label sets as fixed-width bitsets.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSets {
    sets: Vec<FixedBitSet>,
    sizes: Vec<usize>,
    num_classes: usize,
}

impl PredictionSets {
    pub fn from_sets(sets: Vec<FixedBitSet>, num_classes: usize) -> Result<Self> {
        if let Some(s) = sets.iter().find(|s| s.len() != num_classes) {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                got: s.len(),
            });
        }
        let sizes = sets.iter().map(|b| b.count_ones(..)).collect();
        Ok(PredictionSets {
            sets,
            sizes,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn set(&self, i: usize) -> &FixedBitSet {
        &self.sets[i]
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

/// `set_i = { c : scores[i, c] <= q }`; empty sets are allowed.
pub fn predict_sets(cal: &ConformalCalibrator, scores: &Matrix) -> Result<PredictionSets> {
    let q = cal.q.ok_or(Error::Unfitted)?;
    let c = scores.cols();
    let sets = scores
        .iter_rows()
        .map(|row| {
            let mut set = FixedBitSet::with_capacity(c);
            for (k, &a) in row.iter().enumerate() {
                if a <= q {
                    set.insert(k);
                }
            }
            set
        })
        .collect();
    PredictionSets::from_sets(sets, c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub coverage: f64,
    pub mean_size: f64,
}

/// Empirical coverage of the true labels and mean set size.
pub fn audit(sets: &PredictionSets, labels: &LabelVector) -> Result<Audit> {
    if sets.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: sets.len(),
            got: labels.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::Empty("audit sets"));
    }
    let n = sets.len() as f64;
    let covered = (0..sets.len())
        .filter(|&i| {
            let y = labels.get(i);
            y < sets.num_classes && sets.set(i).contains(y)
        })
        .count();
    Ok(Audit {
        coverage: covered as f64 / n,
        mean_size: sets.sizes.iter().sum::<usize>() as f64 / n,
    })
}
