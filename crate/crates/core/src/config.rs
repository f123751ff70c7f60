//! Experiment configuration: `key = value` lines grouped under `[section]`
//! headers, `#` comments. Absent keys keep their defaults.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Dataset, ToySpec};
use crate::error::{Error, Result};
use crate::eval::{ClassifierConfig, Metric, RetrievalPool};
use crate::meta::{OuterOptimizer, TrainConfig};
use crate::networks::{Architecture, ModVariant};
use crate::synthesis::{ClassifierKind, SeenSource};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub data: PathBuf,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub model: Architecture,
    pub classifier: ClassifierConfig,
    pub samples_zsl: usize,
    pub samples_gzsl: usize,
    pub gzsl_seen_mode: SeenSource,
    pub retrieval_k: Vec<usize>,
    pub retrieval_metric: Metric,
    pub retrieval_pool: RetrievalPool,
    pub sweep_samples: Vec<usize>,
    pub sweep_sigmas: Vec<f64>,
    pub toy: ToySpec,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data: PathBuf::from("data"),
            out: PathBuf::from("out"),
            train: TrainConfig::default(),
            // Data dimensions are filled in from the dataset at train time;
            // z_dim 0 means "same as attr_dim".
            model: Architecture { z_dim: 0, ..Architecture::new(1, 1, 1) },
            classifier: ClassifierConfig::default(),
            samples_zsl: 100,
            samples_gzsl: 300,
            gzsl_seen_mode: SeenSource::Synthetic,
            retrieval_k: vec![5, 10],
            retrieval_metric: Metric::Euclidean,
            retrieval_pool: RetrievalPool::Unseen,
            sweep_samples: vec![25, 50, 100, 200],
            sweep_sigmas: vec![0.5, 1.0, 2.0],
            toy: ToySpec::default(),
        }
    }
}

const SECTIONS: [&str; 6] = ["paths", "train", "model", "classifier", "eval", "toy"];

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as {}", std::any::type_name::<T>().rsplit("::").next().unwrap_or("value")))
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(s.trim())).collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn seen_source(v: &str) -> std::result::Result<SeenSource, String> {
    match v {
        "synthetic" => Ok(SeenSource::Synthetic),
        "real" => Ok(SeenSource::Real),
        _ => Err(format!("expected synthetic or real, got {v:?}")),
    }
}

fn seen_source_name(s: SeenSource) -> &'static str {
    match s {
        SeenSource::Synthetic => "synthetic",
        SeenSource::Real => "real",
    }
}

fn optimizer(v: &str) -> std::result::Result<OuterOptimizer, String> {
    match v {
        "sgd" => Ok(OuterOptimizer::Sgd),
        "adam" => Ok(OuterOptimizer::Adam),
        _ => Err(format!("expected sgd or adam, got {v:?}")),
    }
}

impl Config {
    /// Section that owns `key`, if any.
    pub fn section_of(key: &str) -> Option<&'static str> {
        let probe = Config::default().entries();
        probe.into_iter().find(|(_, k, _)| *k == key).map(|(s, _, _)| s)
    }

    /// Assigns one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        let t = &mut self.train;
        let m = &mut self.model;
        let c = &mut self.classifier;
        match key {
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "alpha1" => t.alpha1 = parse(v)?,
            "alpha2" => t.alpha2 = parse(v)?,
            "alpha3" => t.alpha3 = parse(v)?,
            "beta1" => t.beta1 = parse(v)?,
            "beta2" => t.beta2 = parse(v)?,
            "beta3" => t.beta3 = parse(v)?,
            "sigma_train" => t.sigma_train = parse(v)?,
            "sigma_test" => t.sigma_test = parse(v)?,
            "n_way" => t.episode.n_way = parse(v)?,
            "k_sup" => t.episode.k_sup = parse(v)?,
            "k_qry" => t.episode.k_qry = parse(v)?,
            "tasks_per_batch" => t.episode.tasks_per_batch = parse(v)?,
            "epochs" => t.epochs = parse(v)?,
            "clip_c" => t.clip_c = parse(v)?,
            "seed" => t.seed = parse(v)?,
            "first_order" => t.first_order = parse(v)?,
            "inner_steps" => t.inner_steps = parse(v)?,
            "outer_optimizer" => t.outer_optimizer = optimizer(v)?,
            "adam_beta1" => t.adam_beta1 = parse(v)?,
            "adam_beta2" => t.adam_beta2 = parse(v)?,
            "weight_adversarial" => t.loss_weights.adversarial = parse(v)?,
            "weight_reconstruction" => t.loss_weights.reconstruction = parse(v)?,
            "weight_classification" => t.loss_weights.classification = parse(v)?,
            "checkpoint_every" => t.checkpoint_every = parse(v)?,
            "z_dim" => m.z_dim = parse(v)?,
            "g_hidden" => m.g_hidden = list(v)?,
            "d_hidden" => m.d_hidden = list(v)?,
            "ad_hidden" => m.ad_hidden = list(v)?,
            "ap_hidden" => m.ap_hidden = list(v)?,
            "embed_dim" => m.embed_dim = parse(v)?,
            "am_hidden" => m.am_hidden = parse(v)?,
            "leaky_slope" => m.leaky_slope = parse(v)?,
            "dropout" => m.dropout = parse(v)?,
            "bn_momentum" => m.bn_momentum = parse(v)?,
            "mod_variant" => m.variant = v.parse::<ModVariant>().map_err(|e| e.to_string())?,
            "modulate_output" => m.modulate_output = parse(v)?,
            "classifier" => c.kind = v.parse::<ClassifierKind>().map_err(|e| e.to_string())?,
            "allow_negative_quality" => c.allow_negative = parse(v)?,
            "softmax_hidden" => c.softmax.hidden = parse(v)?,
            "softmax_epochs" => c.softmax.epochs = parse(v)?,
            "softmax_lr" => c.softmax.lr = parse(v)?,
            "softmax_batch" => c.softmax.batch_size = parse(v)?,
            "svm_reg_c" => c.svm.reg_c = parse(v)?,
            "svm_epochs" => c.svm.epochs = parse(v)?,
            "svm_lr" => c.svm.lr = parse(v)?,
            "svm_batch" => c.svm.batch_size = parse(v)?,
            "samples_zsl" => self.samples_zsl = parse(v)?,
            "samples_gzsl" => self.samples_gzsl = parse(v)?,
            "gzsl_seen_mode" => self.gzsl_seen_mode = seen_source(v)?,
            "retrieval_k" => self.retrieval_k = list(v)?,
            "retrieval_metric" => self.retrieval_metric = v.parse().map_err(|e: Error| e.to_string())?,
            "retrieval_pool" => self.retrieval_pool = v.parse().map_err(|e: Error| e.to_string())?,
            "sweep_samples" => self.sweep_samples = list(v)?,
            "sweep_sigmas" => self.sweep_sigmas = list(v)?,
            "toy_seen" => self.toy.n_seen = parse(v)?,
            "toy_unseen" => self.toy.n_unseen = parse(v)?,
            "toy_attr_dim" => self.toy.attr_dim = parse(v)?,
            "toy_feat_dim" => self.toy.feat_dim = parse(v)?,
            "toy_per_class" => self.toy.per_class = parse(v)?,
            "toy_noise" => self.toy.noise_sigma = parse(v)?,
            "toy_seed" => self.toy.seed = parse(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// `(section, key, value)` for every key, in file order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let t = &self.train;
        let m = &self.model;
        let c = &self.classifier;
        let s = |v: &dyn Display| v.to_string();
        vec![
            ("paths", "data", self.data.display().to_string()),
            ("paths", "out", self.out.display().to_string()),
            ("train", "alpha1", s(&t.alpha1)),
            ("train", "alpha2", s(&t.alpha2)),
            ("train", "alpha3", s(&t.alpha3)),
            ("train", "beta1", s(&t.beta1)),
            ("train", "beta2", s(&t.beta2)),
            ("train", "beta3", s(&t.beta3)),
            ("train", "sigma_train", s(&t.sigma_train)),
            ("train", "sigma_test", s(&t.sigma_test)),
            ("train", "n_way", s(&t.episode.n_way)),
            ("train", "k_sup", s(&t.episode.k_sup)),
            ("train", "k_qry", s(&t.episode.k_qry)),
            ("train", "tasks_per_batch", s(&t.episode.tasks_per_batch)),
            ("train", "epochs", s(&t.epochs)),
            ("train", "clip_c", s(&t.clip_c)),
            ("train", "seed", s(&t.seed)),
            ("train", "first_order", s(&t.first_order)),
            ("train", "inner_steps", s(&t.inner_steps)),
            ("train", "outer_optimizer", (if t.outer_optimizer == OuterOptimizer::Adam { "adam" } else { "sgd" }).into()),
            ("train", "adam_beta1", s(&t.adam_beta1)),
            ("train", "adam_beta2", s(&t.adam_beta2)),
            ("train", "weight_adversarial", s(&t.loss_weights.adversarial)),
            ("train", "weight_reconstruction", s(&t.loss_weights.reconstruction)),
            ("train", "weight_classification", s(&t.loss_weights.classification)),
            ("train", "checkpoint_every", s(&t.checkpoint_every)),
            ("model", "z_dim", s(&m.z_dim)),
            ("model", "g_hidden", join(&m.g_hidden)),
            ("model", "d_hidden", join(&m.d_hidden)),
            ("model", "ad_hidden", join(&m.ad_hidden)),
            ("model", "ap_hidden", join(&m.ap_hidden)),
            ("model", "embed_dim", s(&m.embed_dim)),
            ("model", "am_hidden", s(&m.am_hidden)),
            ("model", "leaky_slope", s(&m.leaky_slope)),
            ("model", "dropout", s(&m.dropout)),
            ("model", "bn_momentum", s(&m.bn_momentum)),
            ("model", "mod_variant", s(&m.variant)),
            ("model", "modulate_output", s(&m.modulate_output)),
            ("classifier", "classifier", s(&c.kind)),
            ("classifier", "allow_negative_quality", s(&c.allow_negative)),
            ("classifier", "softmax_hidden", s(&c.softmax.hidden)),
            ("classifier", "softmax_epochs", s(&c.softmax.epochs)),
            ("classifier", "softmax_lr", s(&c.softmax.lr)),
            ("classifier", "softmax_batch", s(&c.softmax.batch_size)),
            ("classifier", "svm_reg_c", s(&c.svm.reg_c)),
            ("classifier", "svm_epochs", s(&c.svm.epochs)),
            ("classifier", "svm_lr", s(&c.svm.lr)),
            ("classifier", "svm_batch", s(&c.svm.batch_size)),
            ("eval", "samples_zsl", s(&self.samples_zsl)),
            ("eval", "samples_gzsl", s(&self.samples_gzsl)),
            ("eval", "gzsl_seen_mode", seen_source_name(self.gzsl_seen_mode).into()),
            ("eval", "retrieval_k", join(&self.retrieval_k)),
            ("eval", "retrieval_metric", self.retrieval_metric.as_str().into()),
            ("eval", "retrieval_pool", self.retrieval_pool.as_str().into()),
            ("eval", "sweep_samples", join(&self.sweep_samples)),
            ("eval", "sweep_sigmas", join(&self.sweep_sigmas)),
            ("toy", "toy_seen", s(&self.toy.n_seen)),
            ("toy", "toy_unseen", s(&self.toy.n_unseen)),
            ("toy", "toy_attr_dim", s(&self.toy.attr_dim)),
            ("toy", "toy_feat_dim", s(&self.toy.feat_dim)),
            ("toy", "toy_per_class", s(&self.toy.per_class)),
            ("toy", "toy_noise", s(&self.toy.noise_sigma)),
            ("toy", "toy_seed", s(&self.toy.seed)),
        ]
    }

    /// Parses config text over the defaults. `origin` names the source in errors.
    pub fn parse_str(text: &str, origin: &str) -> Result<Config> {
        let mut cfg = Config::default();
        cfg.apply_text(text, origin)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let location = format!("{origin}:{}", n + 1);
            let err = |detail: String| Error::Config { location: location.clone(), detail };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            let home = Config::section_of(key).ok_or_else(|| err(format!("unknown key {key:?}")))?;
            if let Some(s) = &section {
                if s != home {
                    return Err(err(format!("key {key:?} belongs in [{home}], not [{s}]")));
                }
            }
            self.set(key, value).map_err(|d| err(format!("{key}: {d}")))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse_str(&text, &path.display().to_string())
    }

    /// Flag-style override, e.g. `("epochs", "10")`.
    pub fn override_key(&mut self, key: &str, value: &str) -> Result<()> {
        let location = format!("--{}", key.replace('_', "-"));
        if Config::section_of(key).is_none() {
            return Err(Error::Config { location, detail: format!("unknown key {key:?}") });
        }
        self.set(key, value).map_err(|d| Error::Config { location, detail: format!("{key}: {d}") })
    }

    /// Range checks that parsing alone cannot express.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, detail: String| Err(Error::Config { location: key.to_string(), detail });
        if let Err(e) = self.train.validate() {
            return bad("train", e.to_string());
        }
        if self.samples_zsl == 0 || self.samples_gzsl == 0 {
            return bad("samples_zsl", "sample counts must be >= 1".into());
        }
        if self.retrieval_k.is_empty() || self.retrieval_k.contains(&0) {
            return bad("retrieval_k", "needs at least one k >= 1".into());
        }
        if self.sweep_sigmas.iter().any(|s| !(*s > 0.0)) {
            return bad("sweep_sigmas", "every sigma must be positive".into());
        }
        if self.train.episode.n_way == 0 || self.train.episode.k_sup == 0 || self.train.episode.k_qry == 0 {
            return bad("n_way", "n_way, k_sup and k_qry must be >= 1".into());
        }
        let probe = Architecture { attr_dim: 1, feat_dim: 1, n_seen: 1, z_dim: self.model.z_dim.max(1), ..self.model.clone() };
        if let Err(e) = probe.validate() {
            return bad("model", e.to_string());
        }
        Ok(())
    }

    /// The configured model with the dataset's dimensions filled in.
    pub fn architecture_for(&self, dataset: &Dataset) -> Architecture {
        let attr_dim = dataset.attr_dim();
        Architecture {
            attr_dim,
            feat_dim: dataset.feat_dim(),
            n_seen: dataset.split.seen.len(),
            z_dim: if self.model.z_dim == 0 { attr_dim } else { self.model.z_dim },
            ..self.model.clone()
        }
    }

    /// Canonical text; parsing it yields this config again.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, value) in self.entries() {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = Config::parse_str("", "x").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.train.alpha1, 1e-3);
        assert_eq!(c.train.beta1, 1e-3);
        assert_eq!(c.train.beta2, 1e-5);
        assert_eq!(c.train.beta3, 1e-5);
        assert_eq!(c.train.sigma_train, 0.1);
        assert_eq!(c.samples_zsl, 100);
        assert_eq!(c.samples_gzsl, 300);
        assert_eq!(c.model.dropout, 0.5);
        assert_eq!(c.model.bn_momentum, 0.8);
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = Config::parse_str("[train]\n\nn_way = banana\n", "cfg.txt").unwrap_err().to_string();
        assert!(e.contains("n_way") && e.contains("cfg.txt:3"), "{e}");
        let e = Config::parse_str("colour = red\n", "cfg.txt").unwrap_err().to_string();
        assert!(e.contains("colour") && e.contains("cfg.txt:1"), "{e}");
        assert!(Config::parse_str("[nope]\n", "c").is_err());
        assert!(Config::parse_str("[model]\nepochs = 3\n", "c").is_err());
        assert!(Config::parse_str("epochs 3\n", "c").is_err());
    }

    #[test]
    fn sections_comments_and_overrides() {
        let mut c = Config::parse_str("# run\n[train]\nepochs = 7 # short\n[model]\ng_hidden = 32,16\n", "c").unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.model.g_hidden, vec![32, 16]);
        c.override_key("epochs", "9").unwrap();
        assert_eq!(c.train.epochs, 9);
        let e = c.override_key("epochs", "-1").unwrap_err().to_string();
        assert!(e.contains("--epochs"), "{e}");
        assert!(c.override_key("bogus", "1").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = Config::default();
        let text = c.serialize();
        assert_eq!(Config::parse_str(&text, "c").unwrap(), c);
        assert_eq!(Config::parse_str(&text, "c").unwrap().serialize(), text);
    }

    proptest! {
        #[test]
        fn random_configs_round_trip(
            alpha in 1e-6f64..1.0,
            epochs in 0u64..100000,
            hidden in proptest::collection::vec(1usize..600, 0..3),
            kind in 0usize..4,
            first_order: bool,
            sigmas in proptest::collection::vec(0.01f64..5.0, 1..4),
        ) {
            let mut c = Config::default();
            c.train.alpha2 = alpha;
            c.train.epochs = epochs;
            c.train.first_order = first_order;
            c.model.g_hidden = hidden;
            c.classifier.kind = ClassifierKind::ALL[kind];
            c.sweep_sigmas = sigmas;
            let back = Config::parse_str(&c.serialize(), "p").unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
