//! Episodic meta-training.

pub mod engine;
pub mod task;
mod trainer;

pub use engine::{inner_adapt, meta_gradient, Adapted, InnerRates, Objective, Recorded, Side, Stage, TaskGradient};
pub use task::{SideDraws, TaskObjective};
pub use trainer::{outer_update, train, EpochLog, Trainer};

use crate::episode::EpisodeConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OuterOptimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Inner rates: critic, modulation group, generator-classifier.
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Outer rates, same order.
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub sigma_train: f64,
    pub sigma_test: f64,
    pub episode: EpisodeConfig,
    pub epochs: u64,
    pub clip_c: f64,
    pub seed: u64,
    pub first_order: bool,
    pub inner_steps: usize,
    pub outer_optimizer: OuterOptimizer,
    /// Moment decay rates of the adaptive outer mode.
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub loss_weights: LossWeights,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha1: 1e-3,
            alpha2: 1e-3,
            alpha3: 1e-3,
            beta1: 1e-3,
            beta2: 1e-5,
            beta3: 1e-5,
            sigma_train: 0.1,
            sigma_test: 1.0,
            episode: EpisodeConfig::default(),
            epochs: 15000,
            clip_c: 0.01,
            seed: 0,
            first_order: true,
            inner_steps: 1,
            outer_optimizer: OuterOptimizer::Sgd,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            loss_weights: LossWeights::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("sigma_train", self.sigma_train),
            ("sigma_test", self.sigma_test),
            ("clip_c", self.clip_c),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if self.inner_steps == 0 {
            return Err(Error::invalid("inner_steps must be >= 1"));
        }
        Ok(())
    }

    pub fn inner_rates(&self) -> InnerRates {
        InnerRates {
            critic: self.alpha1,
            reconstruction: self.alpha2,
            gen_class: self.alpha3,
            clip: Some(self.clip_c),
            steps: self.inner_steps,
        }
    }

    pub fn outer_rate(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Critic => self.beta1,
            Stage::Reconstruction => self.beta2,
            Stage::GenClass => self.beta3,
        }
    }
}
