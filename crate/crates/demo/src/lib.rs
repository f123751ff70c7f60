//! wasm-bindgen bindings behind `www/index.html`.
//!
//! The `*_impl` functions hold the logic and return `String` errors so they
//! can be tested natively; the exported wrappers convert to JS errors.

use wasm_bindgen::prelude::*;
use zsl_core::autodiff::Tensor;
use zsl_core::config::Config;
use zsl_core::data::{make_toy_dataset, Dataset, ToySpec};
use zsl_core::eval::{evaluate_zsl, gzsl_harmonic, SynthesisConfig};
use zsl_core::meta::Trainer;
use zsl_core::networks::{modulate, Checkpoint, ModVariant, ModelState};

const TOY_CONFIG: &str = include_str!("../../../configs/toy.conf");

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// `ô` for each input `o` under one modulation variant with scalar `w`, `b`.
pub fn modulate_curve_impl(variant: &str, w: f64, b: f64, o: &[f64]) -> Result<Vec<f64>, String> {
    let v: ModVariant = variant.parse().map_err(|e: zsl_core::Error| e.to_string())?;
    // One column per input so a softmax variant sees a single entry per row.
    let ot = Tensor::from_vec(o.len(), 1, o.to_vec()).map_err(|e| e.to_string())?;
    let out = modulate(&ot, &Tensor::scalar(w), &Tensor::scalar(b), v).map_err(|e| e.to_string())?;
    Ok(out.data().to_vec())
}

#[wasm_bindgen]
pub fn modulate_curve(variant: &str, w: f64, b: f64, o: Vec<f64>) -> Result<Vec<f64>, JsError> {
    modulate_curve_impl(variant, w, b, &o).map_err(js)
}

/// Seen/unseen accuracies in percent.
#[wasm_bindgen]
pub fn harmonic(unseen: f64, seen: f64) -> f64 {
    gzsl_harmonic(unseen, seen)
}

/// Meta-training on the built-in toy dataset, advanced a chunk of epochs at
/// a time so the page stays responsive.
#[wasm_bindgen]
pub struct ToyRun {
    dataset: Dataset,
    config: Config,
    checkpoint: Checkpoint,
    last: Vec<f64>,
}

impl ToyRun {
    pub fn create(seed: u64) -> Result<ToyRun, String> {
        let mut config = Config::parse_str(TOY_CONFIG, "toy.conf").map_err(|e| e.to_string())?;
        config.train.seed = seed;
        let dataset = make_toy_dataset(&ToySpec::default()).map_err(|e| e.to_string())?;
        let trainer = Trainer::new(&dataset, config.architecture_for(&dataset), config.train.clone()).map_err(|e| e.to_string())?;
        let checkpoint = trainer.checkpoint();
        Ok(ToyRun { dataset, config, checkpoint, last: Vec::new() })
    }

    pub fn advance(&mut self, epochs: u32) -> Result<u64, String> {
        let mut cfg = self.config.train.clone();
        cfg.epochs = self.checkpoint.epoch + u64::from(epochs);
        let mut t = Trainer::resume(&self.dataset, cfg, &self.checkpoint).map_err(|e| e.to_string())?;
        let logs = t.run(None, |_| {}).map_err(|e| e.to_string())?;
        if let Some(l) = logs.last() {
            self.last = vec![l.losses.l_d, l.losses.l_g, l.losses.l_ad, l.losses.l_cls];
        }
        self.checkpoint = t.checkpoint();
        Ok(self.checkpoint.epoch)
    }

    /// Per-unseen-class top-1 (fractions) of a weighted-softmax classifier
    /// trained on `samples` synthetic features per class.
    pub fn accuracy(&self, samples: usize) -> Result<Vec<f64>, String> {
        let state = ModelState::from_checkpoint(&self.checkpoint).map_err(|e| e.to_string())?;
        let syn = SynthesisConfig {
            samples,
            sigma: self.config.train.sigma_test,
            n_way: self.config.train.episode.n_way,
            seed: self.config.train.seed,
        };
        let out = evaluate_zsl(&state, &self.dataset, &syn, &self.config.classifier).map_err(|e| e.to_string())?;
        Ok(out.accuracy.per_class.values().copied().collect())
    }
}

#[wasm_bindgen]
impl ToyRun {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<ToyRun, JsError> {
        ToyRun::create(u64::from(seed)).map_err(js)
    }

    /// Trains `epochs` more epochs and returns the total so far.
    pub fn step(&mut self, epochs: u32) -> Result<f64, JsError> {
        self.advance(epochs).map(|e| e as f64).map_err(js)
    }

    /// `[l_d, l_g, l_ad, l_cls]` averaged over the last epoch's tasks.
    pub fn losses(&self) -> Vec<f64> {
        self.last.clone()
    }

    pub fn epoch(&self) -> f64 {
        self.checkpoint.epoch as f64
    }

    #[wasm_bindgen(js_name = targetEpochs)]
    pub fn target_epochs(&self) -> f64 {
        self.config.train.epochs as f64
    }

    pub fn evaluate(&self, samples: u32) -> Result<Vec<f64>, JsError> {
        self.accuracy(samples as usize).map_err(js)
    }
}
