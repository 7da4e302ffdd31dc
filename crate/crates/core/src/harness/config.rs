use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::Strategy;
use crate::error::{Error, Result};
use crate::feature_store::SyntheticSpec;
use crate::selection::{ConformalConfig, SelectionConfig, Variant};
use crate::student::TrainConfig;

pub const DEFAULT_SEEDS: [u64; 5] = [1, 10, 100, 1000, 10000];

/// Where the embeddings come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// Directory holding an EMBC bundle.
    CacheDir(PathBuf),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

/// One experiment: a strategy run for `rounds` rounds under every seed.
///
/// Every field has a default, so `{}` is a valid config. `batch_size` and
/// `seed_size` default to the number of classes and to the batch size; they
/// are filled in by [`ExperimentConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub strategy: Strategy,
    /// Ablation switches for `ccma`; overrides `selection.subpool_mode` and
    /// `selection.diversity`.
    pub variant: Option<Variant>,
    pub rounds: usize,
    pub batch_size: Option<usize>,
    pub seed_size: Option<usize>,
    pub seeds: Vec<u64>,
    pub selection: SelectionConfig,
    pub train: TrainConfig,
    pub conformal: ConformalConfig,
    /// Teacher softmax temperature.
    pub tau: f64,
    /// Share of purchased labels held out for conformal calibration.
    pub cal_fraction: f64,
    /// MC dropout passes for BALD.
    pub bald_passes: usize,
    pub gate_eps: f64,
    /// Record wall-clock times. When off the time columns are written as 0,
    /// which makes the CSVs byte-reproducible.
    pub timings: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::default(),
            strategy: Strategy::Ccma,
            variant: None,
            rounds: 20,
            batch_size: None,
            seed_size: None,
            seeds: DEFAULT_SEEDS.to_vec(),
            selection: SelectionConfig::default(),
            train: TrainConfig::default(),
            conformal: ConformalConfig::default(),
            tau: crate::teacher::DEFAULT_TAU,
            cal_fraction: 0.2,
            bald_passes: 10,
            gate_eps: crate::scoring::GATE_EPS,
            timings: true,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.seed_size == Some(0) {
            return Err(Error::invalid("seed_size must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(0.0..1.0).contains(&self.cal_fraction) {
            return Err(Error::invalid("cal_fraction must lie in [0, 1)"));
        }
        if self.strategy == Strategy::Bald && self.bald_passes < 2 {
            return Err(Error::invalid("bald_passes must be at least 2"));
        }
        if !(self.gate_eps.is_finite() && self.gate_eps > 0.0) {
            return Err(Error::invalid("gate_eps must be positive"));
        }
        if self.variant.is_some() && self.strategy != Strategy::Ccma {
            return Err(Error::invalid("variant only applies to the ccma strategy"));
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        self.selection.validate()?;
        self.train.validate()?;
        self.conformal.validate()
    }

    /// Fills the data-dependent defaults and folds the variant into the
    /// selection switches. Resolving twice is a no-op.
    pub fn resolve(&self, num_classes: usize) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        let b = self.batch_size.unwrap_or(num_classes);
        out.batch_size = Some(b);
        out.seed_size = Some(self.seed_size.unwrap_or(b));
        if let Some(v) = self.variant {
            out.selection = out.selection.with_variant(v);
        }
        Ok(out)
    }

    /// Batch size after [`resolve`](Self::resolve).
    pub fn batch(&self) -> usize {
        self.batch_size.expect("config not resolved")
    }

    pub fn seed_set(&self) -> usize {
        self.seed_size.expect("config not resolved")
    }
}
