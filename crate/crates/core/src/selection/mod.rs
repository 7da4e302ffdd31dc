//! The three CCMA selection stages (subpool, top-kappa oversampling, greedy
//! coverage) and their ablation switches.

mod ccma;
mod greedy;
pub(crate) mod kmeans;
mod subpool;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ccma::{ccma_select, score_candidates, CalibrationRows, CcmaInputs, CcmaOutcome, ConformalConfig, ScoredPool};
pub use greedy::{
    coverage_greedy, coverage_greedy_lazy, gaussian_kernel, median_heuristic_sigma, GreedyResult, MEDIAN_SUBSAMPLE,
};
pub use kmeans::{kmeans, KMeansResult};
pub use subpool::{build_subpool, Subpool, SubpoolMode};

/// Kernel bandwidth: a fixed positive value or the median-distance heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSigma {
    Fixed(f64),
    Named(SigmaKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaKeyword {
    Median,
}

impl KernelSigma {
    pub const MEDIAN: KernelSigma = KernelSigma::Named(SigmaKeyword::Median);
}

/// Which pool the coverage sum ranges over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoveragePool {
    /// The scored subpool.
    Subpool,
    /// Every unlabeled sample (scores the whole pool for the weights).
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub kappa: f64,
    /// `None` means `min(|U|, 50 * B)`.
    pub subpool_size: Option<usize>,
    pub subpool_mode: SubpoolMode,
    pub diversity: bool,
    pub kernel_sigma: KernelSigma,
    pub coverage_pool: CoveragePool,
    pub kmeans_max_iter: usize,
    pub lazy_greedy: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            kappa: 20.0,
            subpool_size: None,
            subpool_mode: SubpoolMode::Selective,
            diversity: true,
            kernel_sigma: KernelSigma::MEDIAN,
            coverage_pool: CoveragePool::Subpool,
            kmeans_max_iter: 50,
            lazy_greedy: true,
        }
    }
}

pub const SUBPOOL_BATCH_MULTIPLE: usize = 50;

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa >= 1.0) {
            return Err(Error::invalid(format!("kappa must be >= 1, got {}", self.kappa)));
        }
        if self.subpool_size == Some(0) {
            return Err(Error::invalid("subpool_size must be positive"));
        }
        if let KernelSigma::Fixed(s) = self.kernel_sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(format!("kernel_sigma must be positive, got {s}")));
            }
        }
        if self.kmeans_max_iter == 0 {
            return Err(Error::invalid("kmeans_max_iter must be positive"));
        }
        Ok(())
    }

    pub fn resolved_subpool_size(&self, n_unlabeled: usize, batch: usize) -> usize {
        self.subpool_size
            .unwrap_or(SUBPOOL_BATCH_MULTIPLE * batch)
            .min(n_unlabeled)
    }

    /// Applies the subpool/diversity switches of an ablation variant.
    pub fn with_variant(mut self, v: Variant) -> Self {
        let (mode, diversity) = v.switches();
        self.subpool_mode = mode;
        self.diversity = diversity;
        self
    }
}

/// Ablation variants of the acquisition pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Selective subpool + final diversity.
    V1,
    /// No subpool + final diversity.
    V2,
    /// Random subpool + final diversity.
    V3,
    /// Selective subpool, no diversity.
    V4,
    /// No subpool, no diversity.
    V5,
}

impl Variant {
    pub fn switches(self) -> (SubpoolMode, bool) {
        match self {
            Variant::V1 => (SubpoolMode::Selective, true),
            Variant::V2 => (SubpoolMode::None, true),
            Variant::V3 => (SubpoolMode::Random, true),
            Variant::V4 => (SubpoolMode::Selective, false),
            Variant::V5 => (SubpoolMode::None, false),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "V1" => Ok(Variant::V1),
            "V2" => Ok(Variant::V2),
            "V3" => Ok(Variant::V3),
            "V4" => Ok(Variant::V4),
            "V5" => Ok(Variant::V5),
            _ => Err(Error::invalid(format!("unknown variant {s:?}"))),
        }
    }
}

/// Positions of the `ceil(kappa * B)` largest scores, best first; ties go to
/// the smaller position.
pub fn top_kappa(scores: &[f64], b: usize, kappa: f64) -> Vec<usize> {
    let want = ((kappa * b as f64).ceil() as usize).min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order.truncate(want);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_kappa_rules() {
        let s = [0.1, 0.9, 0.5, 0.9, 0.3];
        assert_eq!(top_kappa(&s, 2, 1.0), vec![1, 3]);
        assert_eq!(top_kappa(&[0.2; 6], 2, 1.5), vec![0, 1, 2]);
        assert_eq!(top_kappa(&s, 4, 2.0).len(), 5);
        let many: Vec<f64> = (0..5000).map(|i| f64::from(i % 97)).collect();
        assert_eq!(top_kappa(&many, 100, 20.0).len(), 2000);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("v4".parse::<Variant>().unwrap().switches(), (SubpoolMode::Selective, false));
        assert_eq!("V2".parse::<Variant>().unwrap().switches(), (SubpoolMode::None, true));
        assert!("V6".parse::<Variant>().is_err());
    }

    #[test]
    fn sigma_serde() {
        let c: SelectionConfig = serde_json::from_str(r#"{"kernel_sigma": "median"}"#).unwrap();
        assert_eq!(c.kernel_sigma, KernelSigma::MEDIAN);
        let c: SelectionConfig = serde_json::from_str(r#"{"kernel_sigma": 0.5}"#).unwrap();
        assert_eq!(c.kernel_sigma, KernelSigma::Fixed(0.5));
        assert!(serde_json::from_str::<SelectionConfig>(r#"{"kernel_sigma": "mean"}"#).is_err());
    }
}
