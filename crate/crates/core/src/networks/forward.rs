//! Tape-level forward passes, generic over the scalar so the same code serves
//! plain gradients and Hessian-vector products.

use crate::autodiff::{BatchStats, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::networks::arch::{Activation, Architecture, Layout, LinearIdx, ModVariant, Operator};

/// Parameters bound to tape nodes, in layout order.
pub struct Net<'a> {
    pub arch: &'a Architecture,
    pub layout: &'a Layout,
    pub vars: &'a [Var],
}

/// Keep masks for one MLP's hidden layers, or `None` at inference.
pub type Masks<'a> = Option<&'a [Tensor]>;

pub enum NormMode<'a> {
    /// Normalize with the batch's own statistics.
    Batch,
    /// Normalize with stored running statistics.
    Running { mean: &'a [Vec<f64>], var: &'a [Vec<f64>] },
}

/// Binds parameter tensors as tape leaves. `trainable(i)` decides which of
/// them collect gradients.
pub fn bind<T: Real>(tape: &mut Tape<T>, params: &[Tensor<T>], trainable: impl Fn(usize) -> bool) -> Vec<Var> {
    params.iter().enumerate().map(|(i, p)| tape.leaf(p.clone(), trainable(i))).collect()
}

fn mlp<T: Real>(
    tape: &mut Tape<T>,
    net: &Net<'_>,
    layers: &[LinearIdx],
    mut x: Var,
    masks: Masks<'_>,
) -> Result<Var> {
    let hidden = layers.len() - 1;
    if let Some(m) = masks {
        if m.len() != hidden {
            return Err(Error::dim("dropout", format!("{} masks for {hidden} hidden layers", m.len())));
        }
    }
    for (i, l) in layers.iter().enumerate() {
        x = tape.affine(x, net.vars[l.w], net.vars[l.b])?;
        if i < hidden {
            x = tape.leaky_relu(x, net.arch.leaky_slope)?;
            if let Some(m) = masks {
                x = tape.dropout(x, &m[i], net.arch.dropout, true)?;
            }
        }
    }
    Ok(x)
}

/// Shapes of the keep masks an MLP with these hidden widths needs for a batch.
pub fn mask_shapes(hidden: &[usize], batch: usize) -> Vec<(usize, usize)> {
    hidden.iter().map(|&h| (batch, h)).collect()
}

/// Task embedding: mean over rows of the per-row projector output (1 × embed_dim).
pub fn project<T: Real>(tape: &mut Tape<T>, net: &Net<'_>, attrs: Var) -> Result<Var> {
    if tape.value(attrs).rows() == 0 {
        return Err(Error::invalid("project_attributes needs at least one attribute row"));
    }
    let rows = mlp(tape, net, &net.layout.ap, attrs, None)?;
    tape.mean_rows(rows)
}

/// `(w_j, b_j)` for every modulated layer, each a 1 × dim(o_j) row.
pub fn modulation<T: Real>(tape: &mut Tape<T>, net: &Net<'_>, e: Var) -> Result<Vec<(Var, Var)>> {
    let mut out = Vec::with_capacity(net.layout.am.len());
    for (head, dim) in net.layout.am.iter().zip(net.arch.modulated_dims()) {
        let wb = mlp(tape, net, head, e, None)?;
        out.push((tape.slice_cols(wb, 0, dim)?, tape.slice_cols(wb, dim, 2 * dim)?));
    }
    Ok(out)
}

fn activate<T: Real>(tape: &mut Tape<T>, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Softmax => tape.softmax_rows(x),
        Activation::None => Ok(x),
    }
}

/// Scales and shifts `o` (B × d) by the 1 × d rows `w` and `b`.
pub fn modulate<T: Real>(tape: &mut Tape<T>, o: Var, w: Var, b: Var, variant: ModVariant) -> Result<Var> {
    let d = tape.value(o).cols();
    for (name, v) in [("w", w), ("b", b)] {
        if tape.value(v).shape() != (1, d) {
            return Err(Error::dim("modulate", format!("{name} is {:?}, o has {d} columns", tape.value(v).shape())));
        }
    }
    let act_w = activate(tape, w, variant.activation)?;
    let gain = if variant.base {
        let ones = tape.constant(Tensor::full(1, d, T::one()));
        match variant.operator {
            Operator::Minus => tape.sub(ones, act_w)?,
            _ => tape.add(ones, act_w)?,
        }
    } else {
        act_w
    };
    let scaled = tape.mul_row(o, gain)?;
    if variant.bias {
        let shift = activate(tape, b, variant.activation)?;
        tape.add_row(scaled, shift)
    } else {
        Ok(scaled)
    }
}

/// Modulated generator. Returns features and, in batch mode, the batch
/// statistics of each normalized layer.
pub fn generate<T: Real>(
    tape: &mut Tape<T>,
    net: &Net<'_>,
    a: Var,
    z: Var,
    mods: &[(Var, Var)],
    norm: &NormMode<'_>,
) -> Result<(Var, Vec<BatchStats<T>>)> {
    let arch = net.arch;
    if mods.len() != arch.modulated_dims().len() {
        return Err(Error::dim("generate", format!("{} modulation pairs for {} layers", mods.len(), arch.modulated_dims().len())));
    }
    if tape.value(z).cols() != arch.z_dim {
        return Err(Error::dim("generate", format!("noise has {} columns, z_dim is {}", tape.value(z).cols(), arch.z_dim)));
    }
    let variant = arch.variant;
    let mut x = tape.concat_cols(z, a)?;
    x = modulate(tape, x, mods[0].0, mods[0].1, variant)?;
    let mut stats = Vec::new();
    let layers = &net.layout.g;
    for (i, l) in layers.iter().enumerate() {
        x = tape.affine(x, net.vars[l.w], net.vars[l.b])?;
        if i + 1 == layers.len() {
            break;
        }
        let bn = net.layout.g_norm[i];
        let (gamma, beta) = (net.vars[bn.gamma], net.vars[bn.beta]);
        x = match norm {
            NormMode::Batch => {
                let (y, s) = tape.batch_norm_train(x, gamma, beta)?;
                stats.push(s);
                y
            }
            NormMode::Running { mean, var } => {
                let m: Vec<T> = mean[i].iter().map(|&v| T::from_f64(v)).collect();
                let s: Vec<T> = var[i].iter().map(|&v| T::from_f64(v)).collect();
                tape.batch_norm_eval(x, gamma, beta, &m, &s)?
            }
        };
        x = tape.leaky_relu(x, arch.leaky_slope)?;
        x = modulate(tape, x, mods[i + 1].0, mods[i + 1].1, variant)?;
    }
    if arch.modulate_output {
        let (w, b) = *mods.last().expect("checked above");
        x = modulate(tape, x, w, b, variant)?;
    }
    Ok((x, stats))
}

/// Critic score per row (B × 1), unbounded.
pub fn discriminate<T: Real>(tape: &mut Tape<T>, net: &Net<'_>, x: Var, a: Var, masks: Masks<'_>) -> Result<Var> {
    let xa = tape.concat_cols(x, a)?;
    mlp(tape, net, &net.layout.d, xa, masks)
}

/// Logits over the seen classes.
pub fn classify<T: Real>(tape: &mut Tape<T>, net: &Net<'_>, x: Var) -> Result<Var> {
    let c = net.layout.c;
    tape.affine(x, net.vars[c.w], net.vars[c.b])
}

/// Attribute reconstruction `a′` (B × attr_dim).
pub fn reconstruct<T: Real>(tape: &mut Tape<T>, net: &Net<'_>, x: Var, masks: Masks<'_>) -> Result<Var> {
    mlp(tape, net, &net.layout.ad, x, masks)
}
