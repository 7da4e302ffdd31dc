//! Row-stochastic probability matrices and the stable softmax that makes them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// `n x C` matrix of class probabilities; each row is a distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMatrix(Matrix);

impl PosteriorMatrix {
    /// Wraps a matrix after checking every row is non-negative and sums to 1.
    pub fn new(m: Matrix) -> Result<Self> {
        for (i, row) in m.iter_rows().enumerate() {
            if let Some(j) = row.iter().position(|&p| !(p.is_finite() && p >= 0.0)) {
                return Err(Error::NonFinite { row: i, col: j });
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("posterior row {i} sums to {s}")));
            }
        }
        Ok(PosteriorMatrix(m))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.0.iter_rows()
    }

    pub fn select_rows(&self, indices: &[usize]) -> PosteriorMatrix {
        PosteriorMatrix(self.0.select_rows(indices))
    }

    /// Top-1 class per row (first on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.iter_rows().map(argmax).collect()
    }

    /// Top-1 probability per row.
    pub fn confidence(&self) -> Vec<f64> {
        self.iter_rows()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Fraction of rows whose top-1 class matches `labels`.
    pub fn accuracy(&self, labels: &[u32]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = self
            .iter_rows()
            .zip(labels)
            .filter(|(r, &y)| argmax(r) == y as usize)
            .count();
        hits as f64 / labels.len() as f64
    }
}

/// Max-shifted softmax of one row, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Result<PosteriorMatrix> {
    if let Some(pos) = logits.as_slice().iter().position(|v| !v.is_finite()) {
        let c = logits.cols().max(1);
        return Err(Error::NonFinite {
            row: pos / c,
            col: pos % c,
        });
    }
    let mut out = logits.clone();
    let c = out.cols();
    if c > 0 {
        out.as_mut_slice().par_chunks_mut(c).for_each(softmax_in_place);
    }
    Ok(PosteriorMatrix(out))
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_from_zero_logits() {
        let p = softmax_rows(&Matrix::zeros(1, 3)).unwrap();
        for &v in p.row(0) {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_two_class() {
        let p = softmax_rows(&Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p.row(0)[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p.row(0)[0], 0.73106, epsilon = 1e-5);
        assert_abs_diff_eq!(p.row(0)[1], 0.26894, epsilon = 1e-5);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax_rows(&Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(p.row(0)[0], 1.0);
        assert!(p.row(0)[1] < 1e-300);
    }

    #[test]
    fn nan_rejected() {
        assert!(softmax_rows(&Matrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap()).is_err());
    }

    #[test]
    fn entropy_of_uniform() {
        assert_abs_diff_eq!(entropy(&[0.25; 4]), 4f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }
}
