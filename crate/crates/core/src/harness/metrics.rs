use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for the ceiling in [`labels_to_accuracy`], so that an exact
/// interpolated count is not bumped up by float noise.
const CEIL_SLACK: f64 = 1e-9;

/// Trapezoidal area under the accuracy-per-round curve divided by the
/// number of round intervals, i.e. a mean accuracy in `[0, 1]`. A single
/// round gives that round's accuracy.
pub const AULC_DEFINITION: &str =
    "trapezoidal mean over rounds: (1/(T-1)) * sum_{t=1}^{T-1} (acc_t + acc_{t+1})/2; equals acc_1 when T = 1";

pub fn compute_aulc(accuracies: &[f64]) -> Result<f64> {
    match accuracies {
        [] => Err(Error::Empty("accuracy curve")),
        [a] => Ok(*a),
        _ => {
            let area: f64 = accuracies.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
            Ok(area / (accuracies.len() - 1) as f64)
        }
    }
}

/// Smallest label count at which the curve reaches `threshold`.
///
/// `points` are `(n_labeled, accuracy)` in increasing `n_labeled`. Between
/// the last round below and the first round at or above the threshold the
/// count is interpolated linearly and rounded up; with `exact_rounds` the
/// first qualifying round's count is returned instead.
pub fn labels_to_accuracy(points: &[(usize, f64)], threshold: f64, exact_rounds: bool) -> Option<usize> {
    let hit = points.iter().position(|&(_, a)| a >= threshold)?;
    if hit == 0 || exact_rounds {
        return Some(points[hit].0);
    }
    let (n0, a0) = points[hit - 1];
    let (n1, a1) = points[hit];
    let frac = (threshold - a0) / (a1 - a0);
    let n = n0 as f64 + frac * (n1 as f64 - n0 as f64);
    Some(((n - CEIL_SLACK).ceil() as usize).clamp(n0, n1))
}

/// Per-round mean and sample standard deviation across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_seeds: usize,
    /// Only one seed: `std` is reported as 0.
    pub single_seed: bool,
}

pub fn aggregate_seeds(curves: &[Vec<f64>]) -> Result<SeedAggregate> {
    let first = curves.first().ok_or(Error::Empty("seed curves"))?;
    let t = first.len();
    if let Some(bad) = curves.iter().find(|c| c.len() != t) {
        return Err(Error::DimensionMismatch {
            expected: t,
            got: bad.len(),
        });
    }
    let k = curves.len() as f64;
    let mut mean = vec![0.0; t];
    let mut std = vec![0.0; t];
    for r in 0..t {
        let m = curves.iter().map(|c| c[r]).sum::<f64>() / k;
        mean[r] = m;
        if curves.len() > 1 {
            let ss: f64 = curves.iter().map(|c| (c[r] - m).powi(2)).sum();
            std[r] = (ss / (k - 1.0)).sqrt();
        }
    }
    Ok(SeedAggregate {
        mean,
        std,
        n_seeds: curves.len(),
        single_seed: curves.len() == 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn aulc_flat_and_ramp() {
        assert_abs_diff_eq!(compute_aulc(&[0.7; 6]).unwrap(), 0.7, epsilon = 1e-15);
        let ramp: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        assert_abs_diff_eq!(compute_aulc(&ramp).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(compute_aulc(&[0.42]).unwrap(), 0.42);
        assert!(compute_aulc(&[]).is_err());
    }

    #[test]
    fn aulc_matches_hand_trapezoid() {
        // (0.2+0.6)/2 + (0.6+0.4)/2 = 0.9, over 2 intervals.
        assert_abs_diff_eq!(compute_aulc(&[0.2, 0.6, 0.4]).unwrap(), 0.45, epsilon = 1e-15);
    }

    #[test]
    fn labels_to_accuracy_cases() {
        let pts = [(100, 0.70), (200, 0.90)];
        assert_eq!(labels_to_accuracy(&pts, 0.80, false), Some(150));
        assert_eq!(labels_to_accuracy(&pts, 0.80, true), Some(200));
        assert_eq!(labels_to_accuracy(&pts, 0.65, false), Some(100));
        assert_eq!(labels_to_accuracy(&pts, 0.95, false), None);
        assert_eq!(labels_to_accuracy(&pts, 0.90, false), Some(200));
        // 0.71 -> 105 exactly; 0.7101 -> 105.05 rounds up.
        assert_eq!(labels_to_accuracy(&pts, 0.71, false), Some(105));
        assert_eq!(labels_to_accuracy(&pts, 0.7101, false), Some(106));
    }

    #[test]
    fn labels_to_accuracy_uses_first_crossing() {
        let pts = [(10, 0.5), (20, 0.85), (30, 0.6), (40, 0.9)];
        assert_eq!(labels_to_accuracy(&pts, 0.8, false), Some(19));
    }

    #[test]
    fn aggregate_two_seeds() {
        let agg = aggregate_seeds(&[vec![0.8, 0.5], vec![0.9, 0.5]]).unwrap();
        assert_abs_diff_eq!(agg.mean[0], 0.85, epsilon = 1e-15);
        assert_abs_diff_eq!(agg.std[0], 0.005f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(agg.std[0], 0.0707, epsilon = 1e-4);
        assert_eq!(agg.std[1], 0.0);
        assert!(!agg.single_seed);
    }

    #[test]
    fn aggregate_single_and_mismatch() {
        let agg = aggregate_seeds(&[vec![0.3, 0.4]]).unwrap();
        assert!(agg.single_seed);
        assert_eq!(agg.std, vec![0.0, 0.0]);
        assert!(aggregate_seeds(&[vec![0.3], vec![0.3, 0.4]]).is_err());
        assert!(aggregate_seeds(&[]).is_err());
    }
}
