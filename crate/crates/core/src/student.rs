//! The trainable student: a linear softmax head over frozen features with
//! inverted dropout on the inputs, trained by minibatch cross-entropy and
//! AdamW. Also provides the "embed" and "grad" prediction modes and
//! Monte-Carlo dropout sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{EmbeddingTable, LabelVector};
use crate::matrix::{argmax, Matrix};
use crate::posterior::{softmax_in_place, PosteriorMatrix};
use crate::rng::{derive_seed, rng_from_seed, EngineRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// `None` means `min(512, n_labeled)`.
    pub batch_size: Option<usize>,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 200,
            batch_size: None,
            dropout: 0.75,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid("lr must be finite and non-negative"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be finite and non-negative"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        if self.epochs == 0 || self.batch_size == Some(0) {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        check_dropout(self.dropout)
    }
}

fn check_dropout(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::invalid(format!("dropout rate {rho} outside [0, 1)")))
    }
}

/// Linear head `h = W x + b`, `W` stored `C x D` row-major.
#[derive(Clone, Debug)]
pub struct StudentModel {
    num_classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    dropout: f64,
    rng: EngineRng,
}

impl PartialEq for StudentModel {
    fn eq(&self, other: &Self) -> bool {
        self.num_classes == other.num_classes
            && self.dim == other.dim
            && self.weights == other.weights
            && self.bias == other.bias
            && self.dropout == other.dropout
    }
}

/// `W ~ N(0, 1/D)`, `b = 0`.
pub fn init_student(num_classes: usize, dim: usize, dropout: f64, seed: u64) -> Result<StudentModel> {
    if num_classes == 0 || dim == 0 {
        return Err(Error::invalid("student head needs C >= 1 and D >= 1"));
    }
    check_dropout(dropout)?;
    let mut rng = rng_from_seed(derive_seed(seed, "student-init", 0));
    let std = 1.0 / (dim as f64).sqrt();
    let weights = (0..num_classes * dim)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(StudentModel {
        num_classes,
        dim,
        weights,
        bias: vec![0.0; num_classes],
        dropout,
        rng: rng_from_seed(derive_seed(seed, "student-dropout", 0)),
    })
}

/// What a prediction call returns, by mode.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Probs(PosteriorMatrix),
    Embed(EmbeddingTable),
    Grad(Matrix),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    Probs,
    Embed,
    Grad,
}

impl StudentModel {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Overwrites the parameters; shapes must match.
    pub fn set_parameters(&mut self, weights: Vec<f64>, bias: Vec<f64>) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: weights.len(),
            });
        }
        if bias.len() != self.bias.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bias.len(),
                got: bias.len(),
            });
        }
        self.weights = weights;
        self.bias = bias;
        Ok(())
    }

    fn check_dim(&self, feats: &EmbeddingTable) -> Result<()> {
        if feats.d() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: feats.d(),
            });
        }
        Ok(())
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        softmax_in_place(out);
    }

    fn masked_probs(&self, feats: &EmbeddingTable, rng: Option<&mut EngineRng>) -> PosteriorMatrix {
        let c = self.num_classes;
        let mut out = Matrix::zeros(feats.n(), c);
        match rng {
            None => {
                out.as_mut_slice()
                    .par_chunks_mut(c)
                    .enumerate()
                    .for_each(|(i, row)| {
                        let x: Vec<f64> = feats.row(i).iter().map(|&v| f64::from(v)).collect();
                        self.probs_into(&x, row);
                    });
            }
            Some(rng) => {
                let mut x = vec![0.0; self.dim];
                for i in 0..feats.n() {
                    dropout_into(feats.row(i), self.dropout, rng, &mut x);
                    self.probs_into(&x, out.row_mut(i));
                }
            }
        }
        PosteriorMatrix::new(out).expect("softmax rows are stochastic")
    }

    /// Deterministic posteriors (no dropout).
    pub fn predict(&self, feats: &EmbeddingTable) -> Result<PosteriorMatrix> {
        self.check_dim(feats)?;
        Ok(self.masked_probs(feats, None))
    }

    /// With `training` set, every feature passes through an inverted-dropout
    /// mask (keep probability `1 - rho`, survivors scaled by `1/(1 - rho)`)
    /// drawn from the model's own generator.
    pub fn forward(&mut self, feats: &EmbeddingTable, training: bool) -> Result<PosteriorMatrix> {
        self.check_dim(feats)?;
        if training && self.dropout > 0.0 {
            let mut rng = self.rng.clone();
            let out = self.masked_probs(feats, Some(&mut rng));
            self.rng = rng;
            Ok(out)
        } else {
            Ok(self.masked_probs(feats, None))
        }
    }

    /// `K` dropout-active passes with masks drawn from a generator seeded by
    /// `seed`; the model itself is not mutated.
    pub fn mc_dropout_posteriors(&self, feats: &EmbeddingTable, k: usize, seed: u64) -> Result<Vec<PosteriorMatrix>> {
        self.check_dim(feats)?;
        if self.dropout == 0.0 {
            return Err(Error::NoDropout);
        }
        if k < 2 {
            return Err(Error::invalid("MC dropout needs at least 2 passes"));
        }
        let mut rng = rng_from_seed(derive_seed(seed, "mc-dropout", 0));
        Ok((0..k).map(|_| self.masked_probs(feats, Some(&mut rng))).collect())
    }

    /// Features after the adapter, which is the identity here.
    pub fn embed(&self, feats: &EmbeddingTable) -> Result<EmbeddingTable> {
        self.check_dim(feats)?;
        Ok(feats.clone())
    }

    /// Row `i` is `(p_i - onehot(argmax p_i)) (x) x_i` flattened class-major:
    /// the last-layer cross-entropy gradient at the pseudo-label.
    pub fn grad_embedding(&self, feats: &EmbeddingTable) -> Result<Matrix> {
        let probs = self.predict(feats)?;
        let (c, d) = (self.num_classes, self.dim);
        let mut out = Matrix::zeros(feats.n(), c * d);
        out.as_mut_slice()
            .par_chunks_mut(c * d)
            .enumerate()
            .for_each(|(i, row)| {
                let p = probs.row(i);
                let yhat = argmax(p);
                let x = feats.row(i);
                for k in 0..c {
                    let g = p[k] - if k == yhat { 1.0 } else { 0.0 };
                    for (o, &xv) in row[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *o = g * f64::from(xv);
                    }
                }
            });
        Ok(out)
    }

    pub fn infer(&self, feats: &EmbeddingTable, mode: PredictionMode) -> Result<Prediction> {
        Ok(match mode {
            PredictionMode::Probs => Prediction::Probs(self.predict(feats)?),
            PredictionMode::Embed => Prediction::Embed(self.embed(feats)?),
            PredictionMode::Grad => Prediction::Grad(self.grad_embedding(feats)?),
        })
    }

    /// Mean cross-entropy over the rows (no dropout) and its analytic
    /// gradient with respect to `W` and `b`.
    pub fn loss_and_gradient(&self, feats: &EmbeddingTable, labels: &LabelVector) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check_dim(feats)?;
        if labels.len() != feats.n() {
            return Err(Error::DimensionMismatch {
                expected: feats.n(),
                got: labels.len(),
            });
        }
        labels.check_classes(self.num_classes)?;
        let rows: Vec<usize> = (0..feats.n()).collect();
        let mut grads = Gradients::new(self.num_classes, self.dim);
        let mut x = vec![0.0; self.dim];
        let mut p = vec![0.0; self.num_classes];
        for &i in &rows {
            x.iter_mut().zip(feats.row(i)).for_each(|(o, &v)| *o = f64::from(v));
            grads.accumulate(self, &x, labels.get(i), &mut p);
        }
        grads.scale(1.0 / rows.len() as f64);
        Ok((grads.loss, grads.w, grads.b))
    }
}

fn dropout_into(src: &[f32], rho: f64, rng: &mut EngineRng, out: &mut [f64]) {
    if rho == 0.0 {
        out.iter_mut().zip(src).for_each(|(o, &v)| *o = f64::from(v));
        return;
    }
    let keep = 1.0 - rho;
    let scale = 1.0 / keep;
    for (o, &v) in out.iter_mut().zip(src) {
        *o = if rng.random::<f64>() < keep {
            f64::from(v) * scale
        } else {
            0.0
        };
    }
}

struct Gradients {
    w: Vec<f64>,
    b: Vec<f64>,
    loss: f64,
    dim: usize,
}

impl Gradients {
    fn new(c: usize, d: usize) -> Self {
        Gradients {
            w: vec![0.0; c * d],
            b: vec![0.0; c],
            loss: 0.0,
            dim: d,
        }
    }

    fn accumulate(&mut self, model: &StudentModel, x: &[f64], y: usize, p: &mut [f64]) {
        model.probs_into(x, p);
        self.loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for (k, &pk) in p.iter().enumerate() {
            let g = pk - if k == y { 1.0 } else { 0.0 };
            self.b[k] += g;
            for (gw, &xv) in self.w[k * self.dim..(k + 1) * self.dim].iter_mut().zip(x) {
                *gw += g * xv;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        self.w.iter_mut().chain(self.b.iter_mut()).for_each(|v| *v *= s);
        self.loss *= s;
    }

    fn reset(&mut self) {
        self.w.iter_mut().chain(self.b.iter_mut()).for_each(|v| *v = 0.0);
        self.loss = 0.0;
    }
}

/// AdamW moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(model: &StudentModel) -> Self {
        OptimizerState {
            m_w: vec![0.0; model.weights.len()],
            v_w: vec![0.0; model.weights.len()],
            m_b: vec![0.0; model.bias.len()],
            v_b: vec![0.0; model.bias.len()],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One AdamW update: decoupled decay `theta *= 1 - lr*wd` on `W` only,
    /// then the bias-corrected Adam step on both `W` and `b`.
    pub fn apply(&mut self, model: &mut StudentModel, grad_w: &[f64], grad_b: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - cfg.lr * cfg.weight_decay;
        let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], decay: f64| {
            for i in 0..theta.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] = theta[i] * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        };
        update(&mut model.weights, grad_w, &mut self.m_w, &mut self.v_w, decay);
        update(&mut model.bias, grad_b, &mut self.m_b, &mut self.v_b, 1.0);
    }
}

/// Per-epoch training trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean minibatch cross-entropy seen during each epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation accuracy after each epoch (empty without validation data).
    pub val_accuracy: Vec<f64>,
    /// Zero-based epoch whose parameters were returned.
    pub best_epoch: usize,
}

/// Trains a freshly initialized head. Returns the snapshot with the highest
/// validation accuracy (earliest epoch on ties), or the final parameters
/// when no validation rows are given.
pub fn train_student(
    feats: &EmbeddingTable,
    labels: &LabelVector,
    num_classes: usize,
    validation: Option<(&EmbeddingTable, &LabelVector)>,
    cfg: &TrainConfig,
) -> Result<(StudentModel, TrainHistory)> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if labels.len() != feats.n() {
        return Err(Error::DimensionMismatch {
            expected: feats.n(),
            got: labels.len(),
        });
    }
    labels.check_classes(num_classes)?;
    if let Some((vf, vl)) = validation {
        if vf.d() != feats.d() {
            return Err(Error::DimensionMismatch {
                expected: feats.d(),
                got: vf.d(),
            });
        }
        if vl.len() != vf.n() {
            return Err(Error::DimensionMismatch {
                expected: vf.n(),
                got: vl.len(),
            });
        }
    }

    let n = feats.n();
    let d = feats.d();
    let mut model = init_student(num_classes, d, cfg.dropout, cfg.seed)?;
    let mut opt = OptimizerState::new(&model);
    let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, "student-shuffle", 0));
    let mut mask_rng = rng_from_seed(derive_seed(cfg.seed, "student-mask", 0));
    let batch_size = cfg.batch_size.unwrap_or(512).min(n);

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    let mut grads = Gradients::new(num_classes, d);
    let mut x = vec![0.0; d];
    let mut p = vec![0.0; num_classes];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            grads.reset();
            for &i in chunk {
                dropout_into(feats.row(i), model.dropout, &mut mask_rng, &mut x);
                grads.accumulate(&model, &x, labels.get(i), &mut p);
            }
            loss_sum += grads.loss;
            grads.scale(1.0 / chunk.len() as f64);
            opt.apply(&mut model, &grads.w, &grads.b, cfg);
        }
        history.epoch_loss.push(loss_sum / n as f64);

        if let Some((vf, vl)) = validation.filter(|(vf, _)| vf.n() > 0) {
            let acc = model.predict(vf)?.accuracy(vl.as_slice());
            history.val_accuracy.push(acc);
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, model.weights.clone(), model.bias.clone()));
                history.best_epoch = epoch;
            }
        } else {
            history.best_epoch = epoch;
        }
    }
    if let Some((_, w, b)) = best {
        model.weights = w;
        model.bias = b;
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table(rows: &[Vec<f32>]) -> EmbeddingTable {
        EmbeddingTable::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform() {
        let mut m = init_student(4, 3, 0.0, 1).unwrap();
        m.set_parameters(vec![0.0; 12], vec![0.0; 4]).unwrap();
        let p = m.predict(&table(&[vec![1.0, -2.0, 3.0]])).unwrap();
        for &v in p.row(0) {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = init_student(3, 5, 0.5, 7).unwrap();
        let b = init_student(3, 5, 0.5, 7).unwrap();
        let c = init_student(3, 5, 0.5, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.weights(), c.weights());
        assert!(a.bias().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_only_posterior() {
        let mut m = init_student(2, 2, 0.0, 0).unwrap();
        m.set_parameters(vec![0.0; 4], vec![1.0, 0.0]).unwrap();
        let p = m.predict(&table(&[vec![5.0, 1.0], vec![-1.0, 2.0]])).unwrap();
        for row in p.iter_rows() {
            assert_abs_diff_eq!(row[0], 0.731, epsilon = 1e-3);
            assert_abs_diff_eq!(row[1], 0.269, epsilon = 1e-3);
        }
    }

    #[test]
    fn no_dropout_forward_ignores_training_flag() {
        let mut m = init_student(3, 4, 0.0, 2).unwrap();
        let x = table(&[vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 0.0, -1.0, 2.0]]);
        let a = m.forward(&x, true).unwrap();
        let b = m.forward(&x, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_forward_is_stochastic() {
        let mut m = init_student(3, 4, 0.75, 2).unwrap();
        let x = table(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let a = m.forward(&x, true).unwrap();
        let b = m.forward(&x, true).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn dimension_mismatch() {
        let m = init_student(3, 4, 0.0, 2).unwrap();
        assert!(matches!(
            m.predict(&table(&[vec![1.0, 2.0]])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn grad_embedding_hand_expansion() {
        // p = [0.6, 0.4] from logits [ln 0.6, ln 0.4] at x = [1, 0].
        let mut m = init_student(2, 2, 0.0, 0).unwrap();
        m.set_parameters(vec![0.0; 4], vec![0.6f64.ln(), 0.4f64.ln()]).unwrap();
        let g = m.grad_embedding(&table(&[vec![1.0, 0.0]])).unwrap();
        let expected = [-0.4, 0.0, 0.4, 0.0];
        for (a, b) in g.row(0).iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn grad_embedding_norm_identity_and_confident_zero() {
        let m = init_student(3, 4, 0.0, 5).unwrap();
        let x = table(&[vec![0.3, -1.2, 2.0, 0.1], vec![1.0, 1.0, 1.0, 1.0]]);
        let g = m.grad_embedding(&x).unwrap();
        let p = m.predict(&x).unwrap();
        for i in 0..2 {
            let yhat = argmax(p.row(i));
            let r: f64 = p
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, &v)| (v - if k == yhat { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
                .sqrt();
            let xn: f64 = x.row(i).iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            let gn: f64 = g.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(gn, r * xn, epsilon = 1e-10);
        }
        let mut sure = init_student(2, 1, 0.0, 0).unwrap();
        sure.set_parameters(vec![0.0, 0.0], vec![1000.0, 0.0]).unwrap();
        let g = sure.grad_embedding(&table(&[vec![3.0]])).unwrap();
        assert!(g.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mc_dropout_contract() {
        let m = init_student(3, 4, 0.5, 2).unwrap();
        let x = table(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let a = m.mc_dropout_posteriors(&x, 2, 11).unwrap();
        let b = m.mc_dropout_posteriors(&x, 2, 11).unwrap();
        assert_eq!(a, b);
        assert!(m.mc_dropout_posteriors(&x, 1, 11).is_err());
        let plain = init_student(3, 4, 0.0, 2).unwrap();
        assert!(matches!(plain.mc_dropout_posteriors(&x, 2, 1), Err(Error::NoDropout)));
    }

    #[test]
    fn empty_training_set_errors() {
        let cfg = TrainConfig::default();
        let x = table(&[vec![1.0]]);
        let err = train_student(&x, &LabelVector::new(vec![]), 2, None, &cfg);
        assert!(err.is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 5,
            seed: 4,
            ..TrainConfig::default()
        };
        let x = table(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = LabelVector::new(vec![0, 1]);
        let (model, _) = train_student(&x, &y, 2, None, &cfg).unwrap();
        let init = init_student(2, 2, cfg.dropout, cfg.seed).unwrap();
        assert_eq!(model, init);
    }

    #[test]
    fn overfits_single_sample() {
        let cfg = TrainConfig {
            dropout: 0.0,
            epochs: 100,
            ..TrainConfig::default()
        };
        let x = table(&[vec![0.5, -1.0, 2.0]]);
        let y = LabelVector::new(vec![2]);
        let (model, _) = train_student(&x, &y, 3, None, &cfg).unwrap();
        assert_eq!(model.predict(&x).unwrap().argmax(), vec![2]);
    }

    #[test]
    fn best_checkpoint_earliest_on_ties() {
        let cfg = TrainConfig {
            dropout: 0.0,
            epochs: 30,
            ..TrainConfig::default()
        };
        let x = table(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = LabelVector::new(vec![0, 1]);
        let (_, h) = train_student(&x, &y, 2, Some((&x, &y)), &cfg).unwrap();
        let best = h.val_accuracy.iter().copied().fold(f64::MIN, f64::max);
        let first = h.val_accuracy.iter().position(|&a| a == best).unwrap();
        assert_eq!(h.best_epoch, first);
    }

    fn mean_rows(ps: &[PosteriorMatrix]) -> Vec<f64> {
        let c = ps[0].num_classes();
        let mut m = vec![0.0; c];
        for p in ps {
            for (a, &v) in m.iter_mut().zip(p.row(0)) {
                *a += v / ps.len() as f64;
            }
        }
        m
    }

    #[test]
    fn dropout_average_approaches_deterministic_forward() {
        // Small inputs keep the softmax close to linear, so averaging over
        // inverted-dropout masks recovers the plain forward pass.
        let mut m = init_student(3, 4, 0.75, 5).unwrap();
        let x = table(&[vec![0.05, -0.1, 0.08, 0.02]]);
        let plain = m.forward(&x, false).unwrap();
        let draws: Vec<PosteriorMatrix> = (0..10_000).map(|_| m.forward(&x, true).unwrap()).collect();
        assert_ne!(draws[0], draws[1]);
        for (a, &b) in mean_rows(&draws).iter().zip(plain.row(0)) {
            assert_abs_diff_eq!(*a, b, epsilon = 2e-2);
        }
        let mc = m.mc_dropout_posteriors(&x, 10_000, 3).unwrap();
        for (a, &b) in mean_rows(&mc).iter().zip(plain.row(0)) {
            assert_abs_diff_eq!(*a, b, epsilon = 2e-2);
        }
    }

    #[test]
    fn separable_blobs_reach_full_training_accuracy() {
        let mut rng = rng_from_seed(21);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let y = (i % 2) as u32;
            let cx = if y == 0 { -5.0 } else { 5.0 };
            rows.push(vec![
                cx + rng.sample::<f64, _>(StandardNormal) as f32 * 1.0,
                rng.sample::<f64, _>(StandardNormal) as f32,
            ]);
            labels.push(y);
        }
        let x = EmbeddingTable::from_rows(&rows).unwrap();
        let y = LabelVector::new(labels);
        let cfg = TrainConfig {
            dropout: 0.0,
            epochs: 100,
            ..TrainConfig::default()
        };
        let (model, hist) = train_student(&x, &y, 2, None, &cfg).unwrap();
        assert_eq!(model.predict(&x).unwrap().accuracy(y.as_slice()), 1.0);
        assert_eq!(hist.epoch_loss.len(), 100);
        // Smoothed loss does not go up.
        let smooth: Vec<f64> = hist.epoch_loss.chunks(10).map(|c| c.iter().sum::<f64>() / 10.0).collect();
        assert!(smooth.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{smooth:?}");
    }
}
