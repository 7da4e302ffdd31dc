//! Zero-shot teacher: temperature-scaled cosine similarity against class
//! prototypes, followed by a softmax.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_store::{EmbeddingTable, PrototypeTable};
use crate::matrix::Matrix;
use crate::posterior::{softmax_rows, PosteriorMatrix};

/// Default softmax temperature.
pub const DEFAULT_TAU: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct TeacherModel {
    prototypes: PrototypeTable,
    tau: f64,
}

impl TeacherModel {
    /// Normalizes the prototypes if needed; `tau` must be positive.
    pub fn new(prototypes: &PrototypeTable, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        Ok(TeacherModel {
            prototypes: prototypes.normalized()?,
            tau,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.num_classes()
    }

    pub fn prototypes(&self) -> &PrototypeTable {
        &self.prototypes
    }
}

/// Logit `(i, c) = <phi_i, t_c> / tau`.
pub fn teacher_logits(model: &TeacherModel, feats: &EmbeddingTable) -> Result<Matrix> {
    let protos = model.prototypes.table();
    if feats.d() != protos.d() {
        return Err(Error::DimensionMismatch {
            expected: protos.d(),
            got: feats.d(),
        });
    }
    if !feats.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let c = protos.n();
    let mut out = Matrix::zeros(feats.n(), c);
    out.as_mut_slice()
        .par_chunks_mut(c)
        .enumerate()
        .for_each(|(i, row)| {
            let phi = feats.row(i);
            for (logit, t) in row.iter_mut().zip(protos.iter_rows()) {
                let dot: f64 = phi.iter().zip(t).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                *logit = dot / model.tau;
            }
        });
    Ok(out)
}

pub fn teacher_posterior(model: &TeacherModel, feats: &EmbeddingTable) -> Result<PosteriorMatrix> {
    softmax_rows(&teacher_logits(model, feats)?)
}
