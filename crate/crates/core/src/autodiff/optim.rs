use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Descend => -1.0,
            Direction::Ascend => 1.0,
        }
    }
}

/// Plain gradient step, `p ← p ∓ lr·grad`. Every parameter needs a gradient.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Option<&Tensor>], lr: f64, direction: Direction) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() {
        return Err(Error::invalid(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        let g = g.ok_or(Error::MissingGradient { index })?;
        if g.shape() != p.shape() {
            return Err(Error::dim("sgd_step", format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
        }
    }
    let k = lr * direction.sign();
    for (p, g) in params.iter_mut().zip(grads) {
        for (v, d) in p.data_mut().iter_mut().zip(g.unwrap().data()) {
            *v += k * d;
        }
    }
    Ok(())
}

/// Clamps every entry into `[-c, c]`.
pub fn clip_weights(params: &mut [&mut Tensor], c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!("clip bound must be positive, got {c}")));
    }
    for p in params.iter_mut() {
        for v in p.data_mut() {
            *v = v.clamp(-c, c);
        }
    }
    Ok(())
}

/// Adaptive-moment state for one list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64, direction: Direction) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let k = lr * direction.sign();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                *pv += k * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
            }
        }
    }
}
