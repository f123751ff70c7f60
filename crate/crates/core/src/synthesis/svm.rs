//! One-vs-rest linear SVM solved by minibatch subgradient descent.
//!
//! Column `y` minimizes `λ/2 ‖w_y‖² + 1/M Σ_i c_iy · max(0, 1 − t_iy (x_i·w_y + b_y))`
//! with `t_iy = ±1` and `λ = 1/(reg_c · M)`. In the weighted form the
//! positives of class `y` carry `c_iy = w_y / mean(w)`; negatives carry 1.

use rand::seq::SliceRandom;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::synthesis::classifier::Classifier;
use crate::synthesis::{QualityWeights, SyntheticSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmConfig {
    pub reg_c: f64,
    pub epochs: usize,
    /// Step size at t = 0; decays as 1/√(t+1).
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { reg_c: 1.0, epochs: 100, lr: 0.1, batch_size: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmClassifier {
    classes: Vec<usize>,
    /// feat × classes.
    pub w: Tensor,
    /// 1 × classes.
    pub b: Tensor,
}

impl SvmClassifier {
    pub fn from_parts(classes: Vec<usize>, w: Tensor, b: Tensor) -> Result<Self> {
        if w.cols() != classes.len() || b.shape() != (1, classes.len()) {
            return Err(Error::dim("svm classifier", "inconsistent parameter shapes"));
        }
        Ok(SvmClassifier { classes, w, b })
    }

    /// `weights = None` trains the plain classifier.
    pub fn train(set: &SyntheticSet, weights: Option<&QualityWeights>, config: &SvmConfig) -> Result<Self> {
        let classes = set.classes();
        if classes.len() < 2 {
            return Err(Error::invalid(format!("one-vs-rest needs at least 2 classes, got {}", classes.len())));
        }
        if !(config.reg_c > 0.0) || !(config.lr > 0.0) || config.batch_size == 0 {
            return Err(Error::invalid("svm needs reg_c > 0, lr > 0 and batch_size >= 1"));
        }
        let pos_cost: Vec<f64> = match weights {
            None => vec![1.0; classes.len()],
            Some(w) => {
                let raw: Vec<f64> = classes
                    .iter()
                    .map(|c| w.get(c).copied().ok_or_else(|| Error::invalid(format!("no weight for class {c}"))))
                    .collect::<Result<_>>()?;
                if let Some(v) = raw.iter().find(|v| !(**v >= 0.0)) {
                    return Err(Error::invalid(format!("class weights must be non-negative, got {v}")));
                }
                let mean = raw.iter().sum::<f64>() / raw.len() as f64;
                if mean <= 0.0 {
                    return Err(Error::invalid("every class weight is zero"));
                }
                raw.iter().map(|v| v / mean).collect()
            }
        };
        let targets: Vec<usize> = set.labels.iter().map(|c| classes.binary_search(c).expect("same set")).collect();
        let (m, d, k) = (set.len(), set.features.cols(), classes.len());
        let lambda = 1.0 / (config.reg_c * m as f64);
        let mut w = Tensor::zeros(d, k);
        let mut b = Tensor::zeros(1, k);
        let mut order: Vec<usize> = (0..m).collect();
        let mut t = 0usize;
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng::stream(config.seed, Purpose::Classifier, 2, epoch as u64));
            for batch in order.chunks(config.batch_size) {
                let eta = config.lr / ((t + 1) as f64).sqrt();
                let mut gw = w.map(|v| lambda * v);
                let mut gb = Tensor::zeros(1, k);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let x = set.features.row(i);
                    for y in 0..k {
                        let (sign, cost) = if targets[i] == y { (1.0, pos_cost[y]) } else { (-1.0, 1.0) };
                        if cost == 0.0 {
                            continue;
                        }
                        let mut s = b.get(0, y);
                        for (j, &xv) in x.iter().enumerate() {
                            s += xv * w.get(j, y);
                        }
                        if sign * s < 1.0 {
                            let f = cost * sign * scale;
                            for (j, &xv) in x.iter().enumerate() {
                                gw.set(j, y, gw.get(j, y) - f * xv);
                            }
                            gb.set(0, y, gb.get(0, y) - f);
                        }
                    }
                }
                for (v, g) in w.data_mut().iter_mut().zip(gw.data()) {
                    *v -= eta * g;
                }
                for (v, g) in b.data_mut().iter_mut().zip(gb.data()) {
                    *v -= eta * g;
                }
                t += 1;
            }
        }
        Ok(SvmClassifier { classes, w, b })
    }
}

impl Classifier for SvmClassifier {
    fn classes(&self) -> &[usize] {
        &self.classes
    }

    fn scores(&self, x: &Tensor) -> Result<Tensor> {
        let mut s = x.matmul(&self.w)?;
        for r in 0..s.rows() {
            for (v, &bv) in s.row_mut(r).iter_mut().zip(self.b.data()) {
                *v += bv;
            }
        }
        Ok(s)
    }
}
