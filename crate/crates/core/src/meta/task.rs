//! The networks' stage losses on one sampled task.

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::episode::{Task, TaskSet};
use crate::error::{Error, Result};
use crate::losses::{self, LossReport, LossWeights};
use crate::meta::engine::{Objective, Recorded, Side, Stage};
use crate::networks::forward::{self, Net, NormMode};
use crate::networks::{Architecture, Layout, ModelState};
use crate::rng::{self, Rng};

/// Random draws for one side of a task, fixed for every stage that sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct SideDraws {
    pub z: Tensor,
    pub critic_real: Vec<Tensor>,
    pub critic_fake: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
}

impl SideDraws {
    pub fn sample(arch: &Architecture, rows: usize, sigma: f64, rng: &mut Rng) -> Self {
        let masks = |hidden: &[usize], rng: &mut Rng| -> Vec<Tensor> {
            hidden.iter().map(|&h| rng::keep_mask(rng, rows, h, arch.dropout)).collect()
        };
        let z = rng::normal(rng, rows, arch.z_dim, sigma);
        let critic_real = masks(&arch.d_hidden, rng);
        let critic_fake = masks(&arch.d_hidden, rng);
        let decoder = masks(&arch.ad_hidden, rng);
        SideDraws { z, critic_real, critic_fake, decoder }
    }
}

struct SideData<'a> {
    set: &'a TaskSet,
    positions: Vec<usize>,
    draws: SideDraws,
}

pub struct TaskObjective<'a> {
    arch: &'a Architecture,
    layout: &'a Layout,
    weights: LossWeights,
    support: SideData<'a>,
    query: SideData<'a>,
}

impl<'a> TaskObjective<'a> {
    /// Noise with standard deviation `sigma` and dropout masks come from `rng`,
    /// support side first.
    pub fn new(state: &'a ModelState, task: &'a Task, weights: LossWeights, sigma: f64, rng: &mut Rng) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("noise sigma must be positive, got {sigma}")));
        }
        let side = |set: &'a TaskSet, rng: &mut Rng| -> Result<SideData<'a>> {
            let positions = set
                .labels
                .iter()
                .map(|&c| {
                    state
                        .class_position(c)
                        .ok_or_else(|| Error::invalid(format!("class {c} is not in the classifier's seen set")))
                })
                .collect::<Result<Vec<_>>>()?;
            let draws = SideDraws::sample(&state.arch, set.labels.len(), sigma, rng);
            Ok(SideData { set, positions, draws })
        };
        let support = side(&task.support, rng)?;
        let query = side(&task.query, rng)?;
        Ok(TaskObjective { arch: &state.arch, layout: &state.layout, weights, support, query })
    }
}

fn constant<T: Real>(tape: &mut Tape<T>, t: &Tensor) -> Var {
    tape.constant(t.convert(T::from_f64))
}

fn scalar<T: Real>(tape: &Tape<T>, v: Var) -> f64 {
    tape.value(v).item().value()
}

impl Objective for TaskObjective<'_> {
    fn record<T: Real>(&self, tape: &mut Tape<T>, params: &[Var], stage: Stage, side: Side) -> Result<Recorded<T>> {
        let data = match side {
            Side::Support => &self.support,
            Side::Query => &self.query,
        };
        let net = Net { arch: self.arch, layout: self.layout, vars: params };
        let rows = constant(tape, &data.set.attribute_rows);
        let a = constant(tape, &data.set.instance_attributes);
        let z = constant(tape, &data.draws.z);
        let e = forward::project(tape, &net, rows)?;
        let mods = forward::modulation(tape, &net, e)?;
        let (fake, stats) = forward::generate(tape, &net, a, z, &mods, &NormMode::Batch)?;
        let mut report = LossReport::default();
        let loss = match stage {
            Stage::Critic => {
                let x = constant(tape, &data.set.features);
                let real = forward::discriminate(tape, &net, x, a, Some(&data.draws.critic_real))?;
                let fake_s = forward::discriminate(tape, &net, fake, a, Some(&data.draws.critic_fake))?;
                let l = losses::loss_d(tape, real, fake_s)?;
                report.l_d = scalar(tape, l);
                l
            }
            Stage::Reconstruction => {
                let rec = forward::reconstruct(tape, &net, fake, Some(&data.draws.decoder))?;
                let l = losses::loss_ad(tape, a, rec)?;
                report.l_ad = scalar(tape, l);
                l
            }
            Stage::GenClass => {
                let fake_s = forward::discriminate(tape, &net, fake, a, Some(&data.draws.critic_fake))?;
                let rec = forward::reconstruct(tape, &net, fake, Some(&data.draws.decoder))?;
                let logits = forward::classify(tape, &net, fake)?;
                let t = losses::loss_gc(tape, fake_s, a, rec, logits, &data.positions, self.weights)?;
                report.l_g = scalar(tape, t.l_g);
                report.l_ad = scalar(tape, t.l_ad);
                report.l_cls = scalar(tape, t.l_cls);
                report.l_gc = scalar(tape, t.l_gc);
                t.l_gc
            }
        };
        Ok(Recorded { loss, stats, report })
    }
}
