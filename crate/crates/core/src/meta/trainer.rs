use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::autodiff::{Adam, Tensor};
use crate::data::Dataset;
use crate::episode::{EpisodeSampler, Task};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::meta::engine::{inner_adapt, meta_gradient, Stage, TaskGradient};
use crate::meta::task::TaskObjective;
use crate::meta::{OuterOptimizer, TrainConfig};
use crate::networks::{Architecture, Checkpoint, Group, ModelState};
use crate::rng::{self, Purpose};

/// Mean query losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: u64,
    pub losses: LossReport,
    pub seconds: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch l_d l_g l_ad l_cls seconds";

    pub fn row(&self) -> String {
        let l = &self.losses;
        format!("{} {:.6} {:.6} {:.6} {:.6} {:.3}", self.epoch, l.l_d, l.l_g, l.l_ad, l.l_cls, self.seconds)
    }
}

/// Applies the summed task gradients: the critic ascends with `beta1`, the
/// modulation group and generator-classifier descend with `beta2`, `beta3`.
/// Critic weights are clipped afterwards and batch-norm buffers absorb each
/// task's query statistics in task order.
pub fn outer_update(
    state: &mut ModelState,
    tasks: &[TaskGradient],
    config: &TrainConfig,
    adam: Option<&mut [Adam]>,
) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::invalid("outer update needs at least one task"));
    }
    let n = state.params.len();
    let mut sum: Vec<Tensor> = state.params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
    for t in tasks {
        if t.grads.len() != n {
            return Err(Error::invalid(format!("task gradient has {} entries, model has {n}", t.grads.len())));
        }
        for (s, g) in sum.iter_mut().zip(&t.grads) {
            if s.shape() != g.shape() {
                return Err(Error::dim("outer_update", format!("{:?} vs {:?}", s.shape(), g.shape())));
            }
            for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    if let Some((r, c)) = sum.iter().find_map(|g| g.first_non_finite()) {
        return Err(Error::NonFiniteValue { row: r, col: c });
    }
    let mut adam = adam;
    for (k, stage) in Stage::ORDER.iter().enumerate() {
        let idx = state.group_indices(stage.group());
        let lr = config.outer_rate(*stage);
        let grads: Vec<&Tensor> = idx.iter().map(|&i| &sum[i]).collect();
        match (config.outer_optimizer, adam.as_deref_mut()) {
            (OuterOptimizer::Adam, Some(opt)) => {
                let mut params: Vec<Tensor> = idx.iter().map(|&i| state.params[i].clone()).collect();
                let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
                opt[k].update(&mut refs, &grads, lr, stage.direction());
                for (&i, p) in idx.iter().zip(params) {
                    state.params[i] = p;
                }
            }
            (OuterOptimizer::Adam, None) => return Err(Error::Precondition("adaptive outer mode without optimizer state".into())),
            (OuterOptimizer::Sgd, _) => {
                let step = lr * stage.direction().sign();
                for (&i, g) in idx.iter().zip(grads) {
                    for (v, d) in state.params[i].data_mut().iter_mut().zip(g.data()) {
                        *v += step * d;
                    }
                }
            }
        }
    }
    let c = config.clip_c;
    for i in state.group_indices(Group::Discriminator) {
        for v in state.params[i].data_mut() {
            *v = v.clamp(-c, c);
        }
    }
    for t in tasks {
        state.update_running_stats(&t.stats);
    }
    Ok(())
}

fn new_adam(state: &ModelState, config: &TrainConfig) -> Vec<Adam> {
    Stage::ORDER
        .iter()
        .map(|s| {
            let shapes: Vec<_> = state.group_indices(s.group()).iter().map(|&i| state.params[i].shape()).collect();
            Adam { beta1: config.adam_beta1, beta2: config.adam_beta2, ..Adam::new(&shapes) }
        })
        .collect()
}

/// Wall-clock timer; reads 0 where the platform has no clock (wasm32).
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

pub struct Trainer<'a> {
    config: TrainConfig,
    sampler: EpisodeSampler<'a>,
    state: ModelState,
    groups: Vec<Group>,
    adam: Option<Vec<Adam>>,
    epoch: u64,
}

impl<'a> Trainer<'a> {
    /// Fresh model for `dataset`; the classifier covers every seen class.
    pub fn new(dataset: &'a Dataset, arch: Architecture, config: TrainConfig) -> Result<Self> {
        let seen = dataset.split.seen_list();
        let arch = Architecture { attr_dim: dataset.attr_dim(), feat_dim: dataset.feat_dim(), n_seen: seen.len(), ..arch };
        let state = ModelState::init(arch, seen, config.seed)?;
        Trainer::with_state(dataset, state, config, 0)
    }

    fn with_state(dataset: &'a Dataset, state: ModelState, config: TrainConfig, epoch: u64) -> Result<Self> {
        config.validate()?;
        dataset.ensure_valid()?;
        if state.arch.attr_dim != dataset.attr_dim() || state.arch.feat_dim != dataset.feat_dim() {
            return Err(Error::CheckpointMismatch(format!(
                "model expects attr_dim={} feat_dim={}, dataset has {} and {}",
                state.arch.attr_dim,
                state.arch.feat_dim,
                dataset.attr_dim(),
                dataset.feat_dim()
            )));
        }
        let sampler = EpisodeSampler::new(dataset, config.episode)?;
        let groups = state.layout.specs.iter().map(|s| s.group).collect();
        let adam = (config.outer_optimizer == OuterOptimizer::Adam).then(|| new_adam(&state, &config));
        Ok(Trainer { config, sampler, state, groups, adam, epoch })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(dataset: &'a Dataset, config: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let state = ModelState::from_checkpoint(ck)?;
        let mut t = Trainer::with_state(dataset, state, config, ck.epoch)?;
        if let Some(adam) = t.adam.as_mut() {
            for (k, opt) in adam.iter_mut().enumerate() {
                let key = format!("adam{k}.step");
                let step = ck.meta.get(&key).ok_or_else(|| Error::CheckpointMismatch(format!("missing {key}")))?;
                opt.step = step.parse().map_err(|_| Error::CheckpointMismatch(format!("bad {key}")))?;
                for i in 0..opt.m.len() {
                    for (name, dst) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                        let key = format!("adam{k}.{name}.{i}");
                        let (_, _, t) = ck
                            .tensors
                            .iter()
                            .find(|(n, _, _)| *n == key)
                            .ok_or_else(|| Error::CheckpointMismatch(format!("missing {key}")))?;
                        if t.shape() != dst.shape() {
                            return Err(Error::CheckpointMismatch(format!("{key} has shape {:?}", t.shape())));
                        }
                        *dst = t.clone();
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.state.to_checkpoint(self.epoch);
        ck.meta.insert("seed".into(), self.config.seed.to_string());
        if let Some(adam) = &self.adam {
            for (k, opt) in adam.iter().enumerate() {
                ck.meta.insert(format!("adam{k}.step"), opt.step.to_string());
                for i in 0..opt.m.len() {
                    ck.tensors.push((format!("adam{k}.m.{i}"), "optim".into(), opt.m[i].clone()));
                    ck.tensors.push((format!("adam{k}.v.{i}"), "optim".into(), opt.v[i].clone()));
                }
            }
        }
        ck
    }

    fn task_gradient(&self, index: usize, task: &Task) -> Result<TaskGradient> {
        let mut r = rng::stream(self.config.seed, Purpose::Noise, self.epoch, index as u64);
        let obj = TaskObjective::new(&self.state, task, self.config.loss_weights, self.config.sigma_train, &mut r)?;
        let rates = self.config.inner_rates();
        let adapted = inner_adapt(&obj, &self.state.params, &self.groups, &rates, !self.config.first_order)?;
        meta_gradient(&obj, &adapted, &self.groups, &rates, self.config.first_order)
    }

    /// One batch of tasks: inner adaptation per task, then the outer update.
    /// On error the model is left as it was before the call.
    pub fn step(&mut self) -> Result<EpochLog> {
        let start = Stopwatch::start();
        let tasks = self.sampler.sample_batch(self.config.seed, self.epoch);
        #[cfg(feature = "parallel")]
        let results: Vec<Result<TaskGradient>> =
            tasks.par_iter().enumerate().map(|(i, t)| self.task_gradient(i, t)).collect();
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<TaskGradient>> = tasks.iter().enumerate().map(|(i, t)| self.task_gradient(i, t)).collect();
        let grads = results.into_iter().collect::<Result<Vec<_>>>()?;
        let mut mean = LossReport::default();
        for g in &grads {
            mean.accumulate(&g.report);
        }
        let mean = mean.scaled(1.0 / grads.len() as f64);
        let mut next = self.state.clone();
        outer_update(&mut next, &grads, &self.config, self.adam.as_deref_mut())?;
        self.state = next;
        self.epoch += 1;
        Ok(EpochLog { epoch: self.epoch, losses: mean, seconds: start.seconds() })
    }

    /// Trains until `config.epochs`. With a checkpoint path, saves every
    /// `checkpoint_every` epochs, at the end, and (last good state) on failure.
    pub fn run(&mut self, checkpoint: Option<&Path>, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            match self.step() {
                Ok(log) => {
                    on_epoch(&log);
                    logs.push(log);
                }
                Err(e) => {
                    if let Some(p) = checkpoint {
                        log::error!("epoch {}: {e}; keeping last good checkpoint", self.epoch + 1);
                        self.checkpoint().save(p)?;
                    }
                    return Err(e);
                }
            }
            let every = self.config.checkpoint_every;
            if let Some(p) = checkpoint {
                if every > 0 && self.epoch % every == 0 {
                    self.checkpoint().save(p)?;
                }
            }
        }
        if let Some(p) = checkpoint {
            self.checkpoint().save(p)?;
        }
        Ok(logs)
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(dataset: &Dataset, arch: Architecture, config: TrainConfig) -> Result<(ModelState, Vec<EpochLog>)> {
    let mut t = Trainer::new(dataset, arch, config)?;
    let logs = t.run(None, |_| {})?;
    Ok((t.into_state(), logs))
}
