use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig};
use super::metrics::{aggregate_seeds, compute_aulc, SeedAggregate};
use crate::baselines::{
    select_badge, select_bald, select_coreset, select_random, select_uncertainty, Strategy, UncertaintyMode,
};
use crate::conformal::{audit, nonconformity, predict_sets, Audit};
use crate::error::Result;
use crate::feature_store::{generate_synthetic, init_pool, load_bundle, DatasetBundle, PoolState};
use crate::posterior::PosteriorMatrix;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scoring::{pool_diagnostics, PoolDiagnostics};
use crate::selection::{ccma_select, score_candidates, CalibrationRows, CcmaInputs};
use crate::student::{train_student, StudentModel};
use crate::teacher::{teacher_posterior, TeacherModel};

/// One evaluated round: accuracy after training on the purchased labels,
/// then diagnostics and timing of the query that followed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    /// Labels bought so far, calibration split included.
    pub n_labeled: usize,
    pub test_acc: f64,
    pub query_sec: f64,
    pub train_sec: f64,
    /// Over the unlabeled pool; `None` once it is empty.
    pub diagnostics: Option<PoolDiagnostics>,
    /// Student / teacher set audits on the calibration split; `None` while
    /// the split is empty.
    pub audit_s: Option<Audit>,
    pub audit_t: Option<Audit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub aulc: f64,
    /// The unlabeled pool ran out before all rounds were played.
    pub truncated: bool,
}

impl SeedRun {
    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.test_acc).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Fully resolved configuration.
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedRun>,
    /// Accuracy mean / std per round over the rounds every seed reached.
    pub accuracy: SeedAggregate,
    /// Single-entry aggregate of the per-seed AULCs.
    pub aulc: SeedAggregate,
    /// Mean labeled count per round over the same rounds.
    pub n_labeled: Vec<f64>,
    pub truncated: bool,
}

pub fn load_dataset(source: &DatasetSource) -> Result<DatasetBundle> {
    match source {
        DatasetSource::Synthetic(spec) => generate_synthetic(spec),
        DatasetSource::CacheDir(dir) => load_bundle(dir),
    }
}

/// Runs every seed of `cfg` on the dataset it names.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    run_on_dataset(cfg, &data)
}

/// Like [`run_experiment`] with the data already in memory.
pub fn run_on_dataset(cfg: &ExperimentConfig, data: &DatasetBundle) -> Result<RunResult> {
    data.validate()?;
    let cfg = cfg.resolve(data.num_classes())?;
    let teacher = TeacherModel::new(&data.prototypes, cfg.tau)?;
    let teacher_post = teacher_posterior(&teacher, &data.train_teacher)?;
    let ctx = Context {
        cfg: &cfg,
        data,
        teacher_post: &teacher_post,
    };
    let seeds: Vec<SeedRun> = cfg
        .seeds
        .par_iter()
        .map(|&s| ctx.run_seed(s))
        .collect::<Result<_>>()?;

    let t = seeds.iter().map(|s| s.records.len()).min().unwrap_or(0);
    let curves: Vec<Vec<f64>> = seeds.iter().map(|s| s.accuracies()[..t].to_vec()).collect();
    let accuracy = aggregate_seeds(&curves)?;
    let aulc = aggregate_seeds(&seeds.iter().map(|s| vec![s.aulc]).collect::<Vec<_>>())?;
    let n_labeled = (0..t)
        .map(|r| seeds.iter().map(|s| s.records[r].n_labeled as f64).sum::<f64>() / seeds.len() as f64)
        .collect();
    let truncated = seeds.iter().any(|s| s.truncated);
    Ok(RunResult {
        config: cfg.clone(),
        seeds,
        accuracy,
        aulc,
        n_labeled,
        truncated,
    })
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a DatasetBundle,
    teacher_post: &'a PosteriorMatrix,
}

impl Context<'_> {
    fn run_seed(&self, seed: u64) -> Result<SeedRun> {
        let cfg = self.cfg;
        let data = self.data;
        let b = cfg.batch();
        let mut pool = init_pool(data.n_train(), cfg.seed_set(), derive_seed(seed, "pool", 0))?;
        let mut split_rng = rng_from_seed(derive_seed(seed, "calibration-split", 0));
        let mut records = Vec::with_capacity(cfg.rounds);
        let mut truncated = false;

        for round in 1..=cfg.rounds {
            let clock = Instant::now();
            let student = self.train(&pool, seed, round)?;
            let train_sec = clock.elapsed().as_secs_f64();
            let test_acc = student
                .predict(&data.test_student)?
                .accuracy(data.test_labels.as_slice());
            let (diagnostics, audit_s, audit_t) = self.diagnose(&pool, &student)?;

            let unlabeled = pool.unlabeled();
            let clock = Instant::now();
            let batch = if unlabeled.is_empty() {
                Vec::new()
            } else {
                self.query(&pool, &unlabeled, &student, derive_seed(seed, "query", round as u64))?
            };
            let query_sec = clock.elapsed().as_secs_f64();

            records.push(RoundRecord {
                round,
                n_labeled: pool.n_purchased(),
                test_acc,
                query_sec: if cfg.timings { query_sec } else { 0.0 },
                train_sec: if cfg.timings { train_sec } else { 0.0 },
                diagnostics,
                audit_s,
                audit_t,
            });
            if round == cfg.rounds {
                break;
            }
            if batch.is_empty() {
                warn!("seed {seed}: unlabeled pool exhausted after round {round}");
                truncated = true;
                break;
            }
            if batch.len() < b {
                truncated = true;
            }
            pool.acquire(&batch, cfg.cal_fraction, &mut split_rng)?;
        }
        let aulc = compute_aulc(&records.iter().map(|r| r.test_acc).collect::<Vec<_>>())?;
        info!("seed {seed}: {} rounds, AULC {aulc:.4}", records.len());
        Ok(SeedRun {
            seed,
            records,
            aulc,
            truncated,
        })
    }

    /// Cold start: a fresh head trained on the labeled split. The checkpoint
    /// is picked on the calibration split, or on the training rows while
    /// that split is still empty.
    fn train(&self, pool: &PoolState, seed: u64, round: usize) -> Result<StudentModel> {
        let data = self.data;
        let labeled = pool.labeled();
        let feats = data.train_student.select(&labeled)?;
        let labels = data.train_labels.select(&labeled);
        let cal = pool.calibration();
        let (vf, vl) = if cal.is_empty() {
            (feats.clone(), labels.clone())
        } else {
            (data.train_student.select(&cal)?, data.train_labels.select(&cal))
        };
        let mut train = self.cfg.train.clone();
        train.seed = derive_seed(seed, "train", round as u64).wrapping_add(self.cfg.train.seed);
        let (model, _) = train_student(&feats, &labels, data.num_classes(), Some((&vf, &vl)), &train)?;
        Ok(model)
    }

    /// Pool diagnostics with the configured conformal targets, plus set
    /// audits on the calibration split under the same thresholds.
    fn diagnose(
        &self,
        pool: &PoolState,
        student: &StudentModel,
    ) -> Result<(Option<PoolDiagnostics>, Option<Audit>, Option<Audit>)> {
        let data = self.data;
        let unlabeled = pool.unlabeled();
        if unlabeled.is_empty() {
            return Ok((None, None, None));
        }
        let student_post = student.predict(&data.train_student.select(&unlabeled)?)?;
        let teacher_post = self.teacher_post.select_rows(&unlabeled);
        let cal = pool.calibration();
        let cal_student;
        let cal_teacher;
        let cal_labels;
        let calibration = if cal.is_empty() {
            None
        } else {
            cal_student = student.predict(&data.train_student.select(&cal)?)?;
            cal_teacher = self.teacher_post.select_rows(&cal);
            cal_labels = data.train_labels.select(&cal);
            Some(CalibrationRows {
                student_post: &cal_student,
                teacher_post: &cal_teacher,
                labels: &cal_labels,
            })
        };
        let scored = score_candidates(
            &unlabeled,
            &student_post,
            &teacher_post,
            &self.cfg.conformal,
            calibration,
            self.cfg.gate_eps,
        )?;
        let diagnostics = pool_diagnostics(&scored.records)?;
        let (audit_s, audit_t) = match calibration {
            Some(rows) => {
                let sets_s = predict_sets(&scored.student_cal, &nonconformity(rows.student_post))?;
                let sets_t = predict_sets(&scored.teacher_cal, &nonconformity(rows.teacher_post))?;
                (Some(audit(&sets_s, rows.labels)?), Some(audit(&sets_t, rows.labels)?))
            }
            None => (None, None),
        };
        Ok((Some(diagnostics), audit_s, audit_t))
    }

    /// Global train indices of the next batch.
    fn query(&self, pool: &PoolState, unlabeled: &[usize], student: &StudentModel, seed: u64) -> Result<Vec<usize>> {
        let cfg = self.cfg;
        let data = self.data;
        let b = cfg.batch();
        let to_global = |positions: Vec<usize>| positions.into_iter().map(|p| unlabeled[p]).collect::<Vec<_>>();
        let uncertainty = |mode| -> Result<Vec<usize>> {
            let post = student.predict(&data.train_student.select(unlabeled)?)?;
            Ok(to_global(select_uncertainty(&post, b, mode)))
        };
        Ok(match cfg.strategy {
            Strategy::Random => select_random(unlabeled, b, seed),
            Strategy::Uncertainty => uncertainty(UncertaintyMode::LeastConfidence)?,
            Strategy::Entropy => uncertainty(UncertaintyMode::Entropy)?,
            Strategy::Margins => uncertainty(UncertaintyMode::Margins)?,
            Strategy::Coreset => {
                let embeds = student.embed(&data.train_student)?;
                select_coreset(&embeds, &pool.purchased(), unlabeled, b)
            }
            Strategy::Bald => {
                let feats = data.train_student.select(unlabeled)?;
                let passes = student.mc_dropout_posteriors(&feats, cfg.bald_passes, seed)?;
                to_global(select_bald(&passes, b)?)
            }
            Strategy::Badge => {
                let grads = student.grad_embedding(&data.train_student.select(unlabeled)?)?;
                let picked = select_badge(&grads, b, seed);
                if picked.random_fallback {
                    warn!("BADGE fell back to uniform draws (zero gradient mass)");
                }
                to_global(picked.positions)
            }
            Strategy::Ccma => {
                let calibration = pool.calibration();
                let inputs = CcmaInputs {
                    unlabeled,
                    teacher_feats: &data.train_teacher,
                    teacher_post: self.teacher_post,
                    student_feats: &data.train_student,
                    student,
                    calibration: &calibration,
                    labels: &data.train_labels,
                    conformal: &cfg.conformal,
                    gate_eps: cfg.gate_eps,
                };
                let out = ccma_select(&inputs, &cfg.selection, b, seed)?;
                if out.scored.fell_back_to_size {
                    warn!("coverage calibration without a calibration split; used size targets");
                }
                out.batch
            }
        })
    }
}
