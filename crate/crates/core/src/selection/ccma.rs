use serde::{Deserialize, Serialize};

use super::greedy::{coverage_greedy, coverage_greedy_lazy, median_heuristic_sigma};
use super::subpool::build_subpool;
use super::{top_kappa, CoveragePool, KernelSigma, SelectionConfig};
use crate::conformal::{
    calibrate_coverage_target, calibrate_size_target, nonconformity, predict_sets, scores_at_truth, CalibrationMode,
    ConformalCalibrator,
};
use crate::error::{Error, Result};
use crate::feature_store::{EmbeddingTable, LabelVector};
use crate::posterior::PosteriorMatrix;
use crate::rng::derive_seed;
use crate::scoring::{score_pool, ScoreRecord};
use crate::student::StudentModel;

/// Conformal targets for the two set predictors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalConfig {
    pub mode: CalibrationMode,
    pub s_teacher: f64,
    pub s_student: f64,
    pub tol: f64,
    pub alpha_teacher: f64,
    pub alpha_student: f64,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        ConformalConfig {
            mode: CalibrationMode::SizeTarget,
            s_teacher: 3.0,
            s_student: 5.0,
            tol: crate::conformal::DEFAULT_SIZE_TOLERANCE,
            alpha_teacher: 0.1,
            alpha_student: 0.1,
        }
    }
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("s_teacher", self.s_teacher), ("s_student", self.s_student)] {
            if !(s.is_finite() && s >= 1.0) {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        for (name, a) in [("alpha_teacher", self.alpha_teacher), ("alpha_student", self.alpha_student)] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be non-negative"));
        }
        Ok(())
    }
}

/// Labeled calibration rows used by coverage-targeted thresholds.
#[derive(Clone, Copy)]
pub struct CalibrationRows<'a> {
    pub student_post: &'a PosteriorMatrix,
    pub teacher_post: &'a PosteriorMatrix,
    pub labels: &'a LabelVector,
}

/// Scores and fitted thresholds for one pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPool {
    /// Global train indices, aligned with `records`.
    pub indices: Vec<usize>,
    pub records: Vec<ScoreRecord>,
    pub teacher_cal: ConformalCalibrator,
    pub student_cal: ConformalCalibrator,
    /// Coverage mode was requested but no calibration rows existed, so
    /// size-targeted thresholds were used instead.
    pub fell_back_to_size: bool,
}

impl ScoredPool {
    pub fn deltas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.delta).collect()
    }
}

/// Calibrates both set predictors and scores every pool row.
///
/// Size-targeted thresholds are fit on the pool itself (no labels needed);
/// coverage-targeted ones on `calibration`. Targets above `C` are clamped.
pub fn score_candidates(
    indices: &[usize],
    student_post: &PosteriorMatrix,
    teacher_post: &PosteriorMatrix,
    conformal: &ConformalConfig,
    calibration: Option<CalibrationRows<'_>>,
    gate_eps: f64,
) -> Result<ScoredPool> {
    if indices.is_empty() {
        return Err(Error::Empty("scored pool"));
    }
    if student_post.rows() != indices.len() || teacher_post.rows() != indices.len() {
        return Err(Error::DimensionMismatch {
            expected: indices.len(),
            got: student_post.rows().min(teacher_post.rows()),
        });
    }
    let c = teacher_post.num_classes() as f64;
    let scores_t = nonconformity(teacher_post);
    let scores_s = nonconformity(student_post);

    let calibration = calibration.filter(|cal| !cal.labels.is_empty());
    let use_coverage = conformal.mode == CalibrationMode::CoverageTarget && calibration.is_some();
    let (teacher_cal, student_cal) = match calibration {
        Some(cal) if use_coverage => {
            let at_t = scores_at_truth(&nonconformity(cal.teacher_post), cal.labels)?;
            let at_s = scores_at_truth(&nonconformity(cal.student_post), cal.labels)?;
            (
                calibrate_coverage_target(&at_t, conformal.alpha_teacher)?,
                calibrate_coverage_target(&at_s, conformal.alpha_student)?,
            )
        }
        _ => (
            calibrate_size_target(&scores_t, conformal.s_teacher.min(c), conformal.tol)?,
            calibrate_size_target(&scores_s, conformal.s_student.min(c), conformal.tol)?,
        ),
    };
    let sets_t = predict_sets(&teacher_cal, &scores_t)?;
    let sets_s = predict_sets(&student_cal, &scores_s)?;
    let records = score_pool(student_post, teacher_post, &sets_s, &sets_t, gate_eps)?;
    Ok(ScoredPool {
        indices: indices.to_vec(),
        records,
        teacher_cal,
        student_cal,
        fell_back_to_size: conformal.mode == CalibrationMode::CoverageTarget && !use_coverage,
    })
}

/// Everything one CCMA query needs.
pub struct CcmaInputs<'a> {
    pub unlabeled: &'a [usize],
    /// Full training tables / posteriors, indexed by global train index.
    pub teacher_feats: &'a EmbeddingTable,
    pub teacher_post: &'a PosteriorMatrix,
    pub student_feats: &'a EmbeddingTable,
    pub student: &'a StudentModel,
    pub calibration: &'a [usize],
    pub labels: &'a LabelVector,
    pub conformal: &'a ConformalConfig,
    pub gate_eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcmaOutcome {
    /// Global train indices, in selection order.
    pub batch: Vec<usize>,
    pub scored: ScoredPool,
    pub subpool_size: usize,
    pub subpool_clamped: bool,
    /// Fewer candidates than the batch size reached the final stage.
    pub short: bool,
    pub sigma: Option<f64>,
}

/// subpool -> score -> top `kappa * B` -> greedy coverage (or plain top-B
/// when diversity is off).
pub fn ccma_select(inputs: &CcmaInputs<'_>, cfg: &SelectionConfig, b: usize, seed: u64) -> Result<CcmaOutcome> {
    cfg.validate()?;
    if b == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let size = cfg.resolved_subpool_size(inputs.unlabeled.len(), b);
    let subpool = build_subpool(
        inputs.unlabeled,
        inputs.teacher_feats,
        cfg.subpool_mode,
        cfg.subpool_size.unwrap_or(size),
        derive_seed(seed, "subpool", 0),
        cfg.kmeans_max_iter,
    )?;

    // Rows over which the coverage sum (and hence scoring) ranges.
    let pool: Vec<usize> = match cfg.coverage_pool {
        CoveragePool::Subpool => subpool.indices.clone(),
        CoveragePool::Full => inputs.unlabeled.to_vec(),
    };
    let student_post = inputs.student.predict(&inputs.student_feats.select(&pool)?)?;
    let teacher_post = inputs.teacher_post.select_rows(&pool);

    let cal_rows;
    let cal_student;
    let cal_teacher;
    let calibration = if inputs.calibration.is_empty() {
        None
    } else {
        cal_student = inputs.student.predict(&inputs.student_feats.select(inputs.calibration)?)?;
        cal_teacher = inputs.teacher_post.select_rows(inputs.calibration);
        cal_rows = inputs.labels.select(inputs.calibration);
        Some(CalibrationRows {
            student_post: &cal_student,
            teacher_post: &cal_teacher,
            labels: &cal_rows,
        })
    };
    let scored = score_candidates(
        &pool,
        &student_post,
        &teacher_post,
        inputs.conformal,
        calibration,
        inputs.gate_eps,
    )?;
    let deltas = scored.deltas();

    // Candidate positions (within `pool`) that belong to the subpool.
    let members: Vec<usize> = match cfg.coverage_pool {
        CoveragePool::Subpool => (0..pool.len()).collect(),
        CoveragePool::Full => {
            let mut out = Vec::with_capacity(subpool.indices.len());
            let mut it = subpool.indices.iter().peekable();
            for (pos, g) in pool.iter().enumerate() {
                if it.peek() == Some(&g) {
                    out.push(pos);
                    it.next();
                }
            }
            out
        }
    };
    let member_scores: Vec<f64> = members.iter().map(|&p| deltas[p]).collect();

    let (positions, short, sigma) = if cfg.diversity {
        let top: Vec<usize> = top_kappa(&member_scores, b, cfg.kappa)
            .into_iter()
            .map(|i| members[i])
            .collect();
        let pool_feats = inputs.teacher_feats.select(&pool)?;
        let sigma = match cfg.kernel_sigma {
            KernelSigma::Fixed(s) => s,
            KernelSigma::Named(_) => median_heuristic_sigma(&pool_feats, derive_seed(seed, "sigma", 0)),
        };
        let greedy = if cfg.lazy_greedy {
            coverage_greedy_lazy(&top, &pool_feats, &deltas, b, sigma)?
        } else {
            coverage_greedy(&top, &pool_feats, &deltas, b, sigma)?
        };
        (greedy.selected, greedy.short, Some(sigma))
    } else {
        let top: Vec<usize> = top_kappa(&member_scores, b, 1.0)
            .into_iter()
            .map(|i| members[i])
            .collect();
        let short = top.len() < b;
        (top, short, None)
    };

    Ok(CcmaOutcome {
        batch: positions.iter().map(|&p| pool[p]).collect(),
        scored,
        subpool_size: subpool.indices.len(),
        subpool_clamped: subpool.clamped,
        short,
        sigma,
    })
}
