//! Inner adaptation and meta-gradients over an abstract objective.
//!
//! Each inner step runs three stages in order, each moving one parameter
//! group along the gradient of its own loss on the support side: critic
//! (ascent, then clipping), modulation (descent), generator-classifier
//! (descent). The meta-gradient of a group is the gradient of that group's
//! query loss at the adapted parameters, either applied directly
//! (first order) or pulled back through every inner stage with
//! Hessian-vector products (second order).

use crate::autodiff::{BatchStats, Direction, Dual, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::networks::Group;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Critic,
    Reconstruction,
    GenClass,
}

impl Stage {
    pub const ORDER: [Stage; 3] = [Stage::Critic, Stage::Reconstruction, Stage::GenClass];

    pub fn group(self) -> Group {
        match self {
            Stage::Critic => Group::Discriminator,
            Stage::Reconstruction => Group::Modulation,
            Stage::GenClass => Group::GenClass,
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Stage::Critic => Direction::Ascend,
            _ => Direction::Descend,
        }
    }

    fn label(self, side: Side) -> &'static str {
        match (self, side) {
            (Stage::Critic, Side::Support) => "support critic loss",
            (Stage::Reconstruction, Side::Support) => "support reconstruction loss",
            (Stage::GenClass, Side::Support) => "support generator-classifier loss",
            (Stage::Critic, Side::Query) => "query critic loss",
            (Stage::Reconstruction, Side::Query) => "query reconstruction loss",
            (Stage::GenClass, Side::Query) => "query generator-classifier loss",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Support,
    Query,
}

/// What an objective leaves on the tape.
pub struct Recorded<T> {
    pub loss: Var,
    /// Batch-norm statistics of the forward pass, if any.
    pub stats: Vec<BatchStats<T>>,
    /// Loss terms of this stage (others left at 0).
    pub report: LossReport,
}

/// A task's three losses on either side, as functions of the flat parameter list.
pub trait Objective: Sync {
    fn record<T: Real>(&self, tape: &mut Tape<T>, params: &[Var], stage: Stage, side: Side) -> Result<Recorded<T>>;
}

/// Per-stage inner learning rates and the critic clip bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerRates {
    pub critic: f64,
    pub reconstruction: f64,
    pub gen_class: f64,
    /// `None` disables clipping.
    pub clip: Option<f64>,
    pub steps: usize,
}

impl InnerRates {
    pub fn rate(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Critic => self.critic,
            Stage::Reconstruction => self.reconstruction,
            Stage::GenClass => self.gen_class,
        }
    }
}

struct Evaluated<T> {
    grads: Vec<Tensor<T>>,
    stats: Vec<BatchStats<T>>,
    report: LossReport,
}

/// Gradient of one stage loss with respect to the parameters for which
/// `trainable` holds; the rest get zeros.
fn evaluate<T: Real, O: Objective>(
    obj: &O,
    params: &[Tensor<T>],
    stage: Stage,
    side: Side,
    trainable: impl Fn(usize) -> bool,
) -> Result<Evaluated<T>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.leaf(p.clone(), trainable(i))).collect();
    let rec = obj.record(&mut tape, &vars, stage, side).map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFinite { op: stage.label(side) },
        other => other,
    })?;
    if !tape.value(rec.loss).item().is_finite() || !rec.report.all_finite() {
        return Err(Error::NonFinite { op: stage.label(side) });
    }
    tape.backward(rec.loss)?;
    let grads = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();
    Ok(Evaluated { grads, stats: rec.stats, report: rec.report })
}

/// One stage update as recorded for the backward pull.
#[derive(Clone, Debug)]
struct StageTrace {
    stage: Stage,
    before: Vec<Tensor>,
    /// 1 where the clip left an entry free, 0 where it saturated.
    clip_mask: Option<Vec<Tensor>>,
}

/// Task-specific parameters after inner adaptation.
#[derive(Clone, Debug)]
pub struct Adapted {
    pub params: Vec<Tensor>,
    /// Support-side losses of the last inner step, at the parameters each stage saw.
    pub report: LossReport,
    trace: Vec<StageTrace>,
}

/// Runs `rates.steps` rounds of the three inner stages. `meta` is not touched.
pub fn inner_adapt<O: Objective>(
    obj: &O,
    meta: &[Tensor],
    groups: &[Group],
    rates: &InnerRates,
    keep_trace: bool,
) -> Result<Adapted> {
    let mut params = meta.to_vec();
    let mut trace = Vec::new();
    let mut report = LossReport::default();
    for _ in 0..rates.steps {
        for stage in Stage::ORDER {
            let group = stage.group();
            let ev = evaluate(obj, &params, stage, Side::Support, |i| groups[i] == group)?;
            merge(&mut report, &ev.report, stage);
            let before = keep_trace.then(|| params.clone());
            let k = rates.rate(stage) * stage.direction().sign();
            let mut mask = None;
            for (i, (p, g)) in params.iter_mut().zip(&ev.grads).enumerate() {
                if groups[i] != group {
                    continue;
                }
                for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *v += k * d;
                }
            }
            if let (Stage::Critic, Some(c)) = (stage, rates.clip) {
                let mut m = Vec::with_capacity(params.len());
                for (i, p) in params.iter_mut().enumerate() {
                    let mut keep = Tensor::full(p.rows(), p.cols(), 1.0);
                    if groups[i] == group {
                        for (v, k) in p.data_mut().iter_mut().zip(keep.data_mut()) {
                            if v.abs() >= c {
                                *k = 0.0;
                            }
                            *v = v.clamp(-c, c);
                        }
                    }
                    m.push(keep);
                }
                mask = Some(m);
            }
            if let Some(before) = before {
                trace.push(StageTrace { stage, before, clip_mask: mask });
            }
        }
    }
    Ok(Adapted { params, report, trace })
}

fn merge(into: &mut LossReport, from: &LossReport, stage: Stage) {
    match stage {
        Stage::Critic => into.l_d = from.l_d,
        Stage::Reconstruction => into.l_ad = from.l_ad,
        Stage::GenClass => {
            into.l_g = from.l_g;
            into.l_ad = from.l_ad;
            into.l_cls = from.l_cls;
            into.l_gc = from.l_gc;
        }
    }
}

/// One task's contribution to the outer update.
#[derive(Clone, Debug)]
pub struct TaskGradient {
    /// Per parameter, the gradient of its group's query loss.
    pub grads: Vec<Tensor>,
    /// Query losses at the adapted parameters.
    pub report: LossReport,
    /// Batch-norm statistics of the query generator-classifier pass.
    pub stats: Vec<BatchStats<f64>>,
}

/// `H(point) · tangent` for one stage's support loss, via forward-over-reverse.
fn hvp<O: Objective>(obj: &O, point: &[Tensor], tangent: &[Tensor], stage: Stage) -> Result<Vec<Tensor>> {
    let duals: Vec<Tensor<Dual>> = point
        .iter()
        .zip(tangent)
        .map(|(p, t)| {
            let data = p.data().iter().zip(t.data()).map(|(&v, &e)| Dual::new(v, e)).collect();
            Tensor::from_vec(p.rows(), p.cols(), data).expect("same shape")
        })
        .collect();
    let ev = evaluate(obj, &duals, stage, Side::Support, |_| true)?;
    Ok(ev.grads.iter().map(|g| g.convert(|d| d.eps)).collect())
}

/// Query gradients at `adapted`, mapped back to the meta parameters.
pub fn meta_gradient<O: Objective>(
    obj: &O,
    adapted: &Adapted,
    groups: &[Group],
    rates: &InnerRates,
    first_order: bool,
) -> Result<TaskGradient> {
    if !first_order && adapted.trace.is_empty() && rates.steps > 0 {
        return Err(Error::Precondition("second-order meta-gradient needs an inner trace".into()));
    }
    let mut grads: Vec<Tensor> = adapted.params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
    let mut report = LossReport::default();
    let mut stats = Vec::new();
    for stage in Stage::ORDER {
        let group = stage.group();
        let ev = if first_order {
            evaluate(obj, &adapted.params, stage, Side::Query, |i| groups[i] == group)?
        } else {
            evaluate(obj, &adapted.params, stage, Side::Query, |_| true)?
        };
        merge(&mut report, &ev.report, stage);
        if stage == Stage::GenClass {
            stats = ev.stats;
        }
        let mut v = ev.grads;
        if !first_order {
            for t in adapted.trace.iter().rev() {
                if let Some(mask) = &t.clip_mask {
                    for (vi, m) in v.iter_mut().zip(mask) {
                        *vi = vi.zip_map(m, |a, b| a * b);
                    }
                }
                let tg = t.stage.group();
                let tangent: Vec<Tensor> = v
                    .iter()
                    .enumerate()
                    .map(|(i, vi)| if groups[i] == tg { vi.clone() } else { Tensor::zeros(vi.rows(), vi.cols()) })
                    .collect();
                let hv = hvp(obj, &t.before, &tangent, t.stage)?;
                let k = rates.rate(t.stage) * t.stage.direction().sign();
                for (vi, h) in v.iter_mut().zip(&hv) {
                    *vi = vi.zip_map(h, |a, b| a + k * b);
                }
            }
        }
        for (i, g) in v.into_iter().enumerate() {
            if groups[i] == group {
                grads[i] = g;
            }
        }
    }
    Ok(TaskGradient { grads, report, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `L_sup = Σθ²`, `L_qry = Σ(θ−1)²` on the generator-classifier stage only.
    struct Quadratic;

    impl Objective for Quadratic {
        fn record<T: Real>(&self, tape: &mut Tape<T>, params: &[Var], stage: Stage, side: Side) -> Result<Recorded<T>> {
            let loss = if stage != Stage::GenClass {
                tape.constant(Tensor::scalar(T::zero()))
            } else {
                let shift = if side == Side::Query { 1.0 } else { 0.0 };
                let p = params[0];
                let (r, c) = tape.value(p).shape();
                let one = tape.constant(Tensor::full(r, c, T::from_f64(shift)));
                let d = tape.sub(p, one)?;
                let sq = tape.mul(d, d)?;
                tape.sum(sq)?
            };
            Ok(Recorded { loss, stats: Vec::new(), report: LossReport::default() })
        }
    }

    /// Every stage loss is the plain sum of all parameters.
    struct Linear;

    impl Objective for Linear {
        fn record<T: Real>(&self, tape: &mut Tape<T>, params: &[Var], _: Stage, _: Side) -> Result<Recorded<T>> {
            let mut loss = tape.sum(params[0])?;
            for &p in &params[1..] {
                let s = tape.sum(p)?;
                loss = tape.add(loss, s)?;
            }
            Ok(Recorded { loss, stats: Vec::new(), report: LossReport::default() })
        }
    }

    fn rates(a: f64) -> InnerRates {
        InnerRates { critic: a, reconstruction: a, gen_class: a, clip: None, steps: 1 }
    }

    #[test]
    fn quadratic_inner_step_scales_by_point_eight() {
        let meta = vec![Tensor::scalar(1.7)];
        let ad = inner_adapt(&Quadratic, &meta, &[Group::GenClass], &rates(0.1), false).unwrap();
        assert!((ad.params[0].item() - 0.8 * 1.7).abs() < 1e-15);
        assert_eq!(meta[0].item(), 1.7);
    }

    #[test]
    fn first_and_second_order_oracles() {
        let meta = vec![Tensor::scalar(1.0)];
        let groups = [Group::GenClass];
        let r = rates(0.1);
        let ad = inner_adapt(&Quadratic, &meta, &groups, &r, true).unwrap();
        let first = meta_gradient(&Quadratic, &ad, &groups, &r, true).unwrap();
        assert!((first.grads[0].item() + 0.4).abs() < 1e-12);
        assert!((1.0 - 0.1 * first.grads[0].item() - 1.04).abs() < 1e-12);
        let second = meta_gradient(&Quadratic, &ad, &groups, &r, false).unwrap();
        assert!((second.grads[0].item() + 0.32).abs() < 1e-12);
        assert!((1.0 - 0.1 * second.grads[0].item() - 1.032).abs() < 1e-12);
    }

    #[test]
    fn stage_directions() {
        let meta = vec![Tensor::scalar(0.0), Tensor::scalar(0.0), Tensor::scalar(0.0)];
        let groups = [Group::Discriminator, Group::Modulation, Group::GenClass];
        let r = InnerRates { critic: 0.1, reconstruction: 0.2, gen_class: 0.3, clip: Some(10.0), steps: 1 };
        let ad = inner_adapt(&Linear, &meta, &groups, &r, false).unwrap();
        assert_eq!(ad.params[0].item(), 0.1);
        assert_eq!(ad.params[1].item(), -0.2);
        assert!((ad.params[2].item() + 0.3).abs() < 1e-15);
        let clipped = inner_adapt(&Linear, &meta, &groups, &InnerRates { clip: Some(0.01), ..r }, false).unwrap();
        assert_eq!(clipped.params[0].item(), 0.01);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let meta = vec![Tensor::scalar(0.0)];
        let ad = inner_adapt(&Quadratic, &meta, &[Group::GenClass], &rates(0.5), false).unwrap();
        assert_eq!(ad.params, meta);
    }

    #[test]
    fn second_order_through_clipping_matches_finite_differences() {
        // Critic stage saturating at the clip bound passes no gradient back.
        let meta = vec![Tensor::scalar(0.0), Tensor::scalar(0.0), Tensor::scalar(0.0)];
        let groups = [Group::Discriminator, Group::Modulation, Group::GenClass];
        let r = InnerRates { critic: 0.1, reconstruction: 0.1, gen_class: 0.1, clip: Some(0.05), steps: 1 };
        let ad = inner_adapt(&Linear, &meta, &groups, &r, true).unwrap();
        let g = meta_gradient(&Linear, &ad, &groups, &r, false).unwrap();
        assert_eq!(g.grads[0].item(), 0.0);
        assert_eq!(g.grads[1].item(), 1.0);
    }
}
