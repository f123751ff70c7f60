//! Two affine layers with a ReLU between them, trained by minibatch SGD on
//! (optionally quality-weighted) cross entropy.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::{grad_check, GradCheckReport, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::synthesis::classifier::Classifier;
use crate::synthesis::SyntheticSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftmaxConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        SoftmaxConfig { hidden: 256, epochs: 20, lr: 0.05, batch_size: 64, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    /// Scale each sample's cross entropy by its quality score; negative
    /// scores are clamped to 0 unless `allow_negative`.
    Quality { allow_negative: bool },
}

/// Finite-difference check of [`weighted_softmax_loss`] with nonuniform
/// weights at a random point drawn from `seed`. Points where a hidden ReLU
/// input lies within ten probe steps of zero are redrawn.
pub fn check_weighted_loss(seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    for attempt in 0..50 {
        let mut r = rng::stream(seed.wrapping_mul(1000).wrapping_add(attempt), Purpose::Test, 1, 0);
        let (n, d, h, k) = (6, 4, 5, 3);
        let x = rng::normal(&mut r, n, d, 1.0);
        let q = Tensor::from_fn(n, 1, |i, _| 0.2 + 0.15 * i as f64);
        let targets: Vec<usize> = (0..n).map(|i| i % k).collect();
        let params =
            [rng::normal(&mut r, d, h, 0.5), rng::normal(&mut r, 1, h, 0.1), rng::normal(&mut r, h, k, 0.5), rng::normal(&mut r, 1, k, 0.1)];
        let rep = grad_check(
            |tape: &mut Tape, v: &[Var]| {
                let xv = tape.constant(x.clone());
                weighted_softmax_loss(tape, v, xv, &targets, Some(&q))
            },
            &params,
            1e-6,
            tolerance,
        )?;
        if rep.smooth() {
            return Ok(rep);
        }
    }
    Err(Error::invalid("no kink-free point found for the weighted softmax loss"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxClassifier {
    classes: Vec<usize>,
    /// `w1` (feat × hidden), `b1`, `w2` (hidden × classes), `b2`.
    pub params: [Tensor; 4],
}

fn logits(tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
    let h = tape.affine(x, p[0], p[1])?;
    let h = tape.relu(h)?;
    tape.affine(h, p[2], p[3])
}

/// Mean over rows of `q_i · CE_i`; `q = None` is the plain mean cross entropy.
pub fn weighted_softmax_loss(tape: &mut Tape, params: &[Var], x: Var, targets: &[usize], q: Option<&Tensor>) -> Result<Var> {
    let l = logits(tape, params, x)?;
    match q {
        None => tape.softmax_cross_entropy(l, targets),
        Some(q) => {
            let ce = tape.cross_entropy_rows(l, targets)?;
            let qv = tape.constant(q.clone());
            let w = tape.mul(ce, qv)?;
            tape.mean(w)
        }
    }
}

impl SoftmaxClassifier {
    pub fn from_parts(classes: Vec<usize>, params: [Tensor; 4]) -> Result<Self> {
        let [w1, b1, w2, b2] = &params;
        let ok = w1.cols() == b1.cols() && b1.rows() == 1 && w2.rows() == w1.cols() && w2.cols() == classes.len()
            && b2.shape() == (1, classes.len());
        if !ok {
            return Err(Error::dim("softmax classifier", "inconsistent parameter shapes"));
        }
        Ok(SoftmaxClassifier { classes, params })
    }

    pub fn train(set: &SyntheticSet, config: &SoftmaxConfig, weighting: Weighting) -> Result<Self> {
        Self::train_observed(set, config, weighting, |_| {})
    }

    /// As [`SoftmaxClassifier::train`], calling `observer` with the parameters after every step.
    pub fn train_observed(
        set: &SyntheticSet,
        config: &SoftmaxConfig,
        weighting: Weighting,
        mut observer: impl FnMut(&[Tensor; 4]),
    ) -> Result<Self> {
        let classes = set.classes();
        if classes.is_empty() {
            return Err(Error::invalid("cannot train a classifier on an empty set"));
        }
        if config.batch_size == 0 || config.hidden == 0 || !(config.lr > 0.0) {
            return Err(Error::invalid("softmax classifier needs batch_size, hidden >= 1 and lr > 0"));
        }
        let q: Option<Vec<f64>> = match weighting {
            Weighting::Uniform => None,
            Weighting::Quality { allow_negative } => {
                let q: Vec<f64> = set.quality.iter().map(|&v| if allow_negative { v } else { v.max(0.0) }).collect();
                if q.iter().all(|&v| v <= 0.0) {
                    return Err(Error::invalid("every sample weight is non-positive; nothing to learn from"));
                }
                Some(q)
            }
        };
        let targets: Vec<usize> =
            set.labels.iter().map(|c| classes.binary_search(c).expect("label from the same set")).collect();
        let feat = set.features.cols();
        let mut init = rng::stream(config.seed, Purpose::Classifier, 0, 0);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::from_fn(rows, cols, |_, _| init.random_range(-bound..=bound))
        };
        let mut params = [
            uniform(feat, config.hidden),
            Tensor::zeros(1, config.hidden),
            uniform(config.hidden, classes.len()),
            Tensor::zeros(1, classes.len()),
        ];
        let n = set.len();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng::stream(config.seed, Purpose::Classifier, 1, epoch as u64));
            for batch in order.chunks(config.batch_size) {
                let mut tape = Tape::new();
                let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
                let x = tape.constant(set.features.select_rows(batch));
                let t: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
                let qb = q.as_ref().map(|q| Tensor::from_fn(batch.len(), 1, |r, _| q[batch[r]]));
                let loss = weighted_softmax_loss(&mut tape, &vars, x, &t, qb.as_ref())?;
                tape.backward(loss)?;
                for (p, &v) in params.iter_mut().zip(&vars) {
                    if let Some(g) = tape.grad(v) {
                        for (a, d) in p.data_mut().iter_mut().zip(g.data()) {
                            *a -= config.lr * d;
                        }
                    }
                }
                observer(&params);
            }
        }
        Ok(SoftmaxClassifier { classes, params })
    }
}

impl Classifier for SoftmaxClassifier {
    fn classes(&self) -> &[usize] {
        &self.classes
    }

    fn scores(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.params[0].rows() {
            return Err(Error::dim("predict", format!("{} feature columns, classifier takes {}", x.cols(), self.params[0].rows())));
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let l = logits(&mut tape, &vars, xv)?;
        Ok(tape.value(l).clone())
    }
}
