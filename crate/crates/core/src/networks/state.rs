use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::autodiff::{BatchStats, Tape, Tensor};
use crate::data::binary::{self, TableKind, VERSION_F64};
use crate::error::{Error, Result};
use crate::networks::arch::{Architecture, Group, Layout};
use crate::networks::forward::{self, Net, NormMode};
use crate::rng::{self, Purpose};

/// All trainable parameters plus the generator's batch-norm running buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub arch: Architecture,
    pub layout: Layout,
    /// Class id behind each auxiliary-classifier output.
    pub seen_classes: Vec<usize>,
    pub params: Vec<Tensor>,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelState {
    /// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases and shifts 0,
    /// batch-norm scales 1.
    pub fn init(arch: Architecture, seen_classes: Vec<usize>, seed: u64) -> Result<Self> {
        arch.validate()?;
        if seen_classes.len() != arch.n_seen {
            return Err(Error::invalid(format!(
                "{} seen classes for a classifier with {} outputs",
                seen_classes.len(),
                arch.n_seen
            )));
        }
        let layout = Layout::new(&arch);
        let params = layout
            .specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.name.ends_with(".gamma") {
                    Tensor::full(s.rows, s.cols, 1.0)
                } else if s.rows == 1 {
                    Tensor::zeros(s.rows, s.cols)
                } else {
                    let bound = (6.0 / (s.rows + s.cols) as f64).sqrt();
                    let mut r = rng::stream(seed, Purpose::Init, i as u64, 0);
                    Tensor::from_fn(s.rows, s.cols, |_, _| r.random_range(-bound..=bound))
                }
            })
            .collect();
        let running_mean = arch.g_hidden.iter().map(|&h| vec![0.0; h]).collect();
        let running_var = arch.g_hidden.iter().map(|&h| vec![1.0; h]).collect();
        Ok(ModelState { arch, layout, seen_classes, params, running_mean, running_var })
    }

    pub fn class_position(&self, class: usize) -> Option<usize> {
        self.seen_classes.iter().position(|&c| c == class)
    }

    pub fn group_indices(&self, group: Group) -> Vec<usize> {
        self.layout.group_indices(group)
    }

    /// Hash of the architecture and label space; checkpoints must match it.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.arch.describe().as_bytes());
        h.update(format!(" seen={:?}", self.seen_classes).as_bytes());
        hex(&h.finalize())
    }

    /// Hash of every parameter and buffer bit pattern.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        for v in self.running_mean.iter().chain(&self.running_var).flatten() {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }

    /// Folds one training batch's statistics into the running buffers:
    /// `running ← (1 − m)·running + m·batch`, with the unbiased batch variance.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<f64>]) {
        let m = self.arch.bn_momentum;
        for (i, s) in stats.iter().enumerate() {
            let unbias = if s.batch > 1 { s.batch as f64 / (s.batch - 1) as f64 } else { 1.0 };
            for (r, &b) in self.running_mean[i].iter_mut().zip(&s.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, &b) in self.running_var[i].iter_mut().zip(&s.var) {
                *r = (1.0 - m) * *r + m * b * unbias;
            }
        }
    }

    fn with_net<R>(&self, f: impl FnOnce(&mut Tape, &Net<'_>) -> Result<R>) -> Result<R> {
        let mut tape = Tape::new();
        let vars = forward::bind(&mut tape, &self.params, |_| false);
        let net = Net { arch: &self.arch, layout: &self.layout, vars: &vars };
        f(&mut tape, &net)
    }

    /// Task embedding of an attribute set (rows are attribute vectors).
    pub fn embed(&self, attrs: &Tensor) -> Result<Tensor> {
        self.check_cols("project_attributes", attrs, self.arch.attr_dim)?;
        self.with_net(|t, net| {
            let a = t.constant(attrs.clone());
            let e = forward::project(t, net, a)?;
            Ok(t.value(e).clone())
        })
    }

    /// `(w_j, b_j)` rows for every modulated layer.
    pub fn modulation(&self, e: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
        if e.shape() != (1, self.arch.embed_dim) {
            return Err(Error::dim("compute_modulation", format!("embedding {:?}, heads take 1x{}", e.shape(), self.arch.embed_dim)));
        }
        self.with_net(|t, net| {
            let ev = t.constant(e.clone());
            let mods = forward::modulation(t, net, ev)?;
            Ok(mods.into_iter().map(|(w, b)| (t.value(w).clone(), t.value(b).clone())).collect())
        })
    }

    /// Inference-mode generator: running batch-norm statistics, no dropout.
    pub fn generate(&self, a: &Tensor, z: &Tensor, mods: &[(Tensor, Tensor)]) -> Result<Tensor> {
        self.check_cols("generate", a, self.arch.attr_dim)?;
        self.with_net(|t, net| {
            let av = t.constant(a.clone());
            let zv = t.constant(z.clone());
            let mv: Vec<_> = mods.iter().map(|(w, b)| (t.constant(w.clone()), t.constant(b.clone()))).collect();
            let norm = NormMode::Running { mean: &self.running_mean, var: &self.running_var };
            let (x, _) = forward::generate(t, net, av, zv, &mv, &norm)?;
            Ok(t.value(x).clone())
        })
    }

    pub fn discriminate(&self, x: &Tensor, a: &Tensor) -> Result<Tensor> {
        self.check_cols("discriminate", x, self.arch.feat_dim)?;
        self.check_cols("discriminate", a, self.arch.attr_dim)?;
        self.with_net(|t, net| {
            let (xv, av) = (t.constant(x.clone()), t.constant(a.clone()));
            let s = forward::discriminate(t, net, xv, av, None)?;
            Ok(t.value(s).clone())
        })
    }

    pub fn classify_aux(&self, x: &Tensor) -> Result<Tensor> {
        self.check_cols("classify_aux", x, self.arch.feat_dim)?;
        self.with_net(|t, net| {
            let xv = t.constant(x.clone());
            let l = forward::classify(t, net, xv)?;
            Ok(t.value(l).clone())
        })
    }

    pub fn reconstruct_attribute(&self, x: &Tensor) -> Result<Tensor> {
        self.check_cols("reconstruct_attribute", x, self.arch.feat_dim)?;
        self.with_net(|t, net| {
            let xv = t.constant(x.clone());
            let a = forward::reconstruct(t, net, xv, None)?;
            Ok(t.value(a).clone())
        })
    }

    fn check_cols(&self, op: &'static str, t: &Tensor, cols: usize) -> Result<()> {
        if t.cols() != cols {
            return Err(Error::dim(op, format!("input has {} columns, network expects {cols}", t.cols())));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, epoch: u64) -> Checkpoint {
        let mut tensors: Vec<(String, String, Tensor)> = self
            .layout
            .specs
            .iter()
            .zip(&self.params)
            .map(|(s, p)| (s.name.clone(), s.group.as_str().to_string(), p.clone()))
            .collect();
        for (i, (m, v)) in self.running_mean.iter().zip(&self.running_var).enumerate() {
            tensors.push((format!("g.bn{i}.running_mean"), "buffer".into(), Tensor::row_vector(m.clone())));
            tensors.push((format!("g.bn{i}.running_var"), "buffer".into(), Tensor::row_vector(v.clone())));
        }
        Checkpoint {
            arch: self.arch.clone(),
            seen_classes: self.seen_classes.clone(),
            config_hash: self.config_hash(),
            epoch,
            meta: BTreeMap::new(),
            tensors,
        }
    }

    /// Rebuilds a state from a checkpoint, checking every manifest entry
    /// against the layout its architecture implies.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut state = ModelState::init(ck.arch.clone(), ck.seen_classes.clone(), 0)?;
        if state.config_hash() != ck.config_hash {
            return Err(Error::CheckpointMismatch(format!(
                "config hash {} does not match its architecture ({})",
                ck.config_hash,
                state.config_hash()
            )));
        }
        let find = |name: &str| ck.tensors.iter().find(|(n, _, _)| n == name);
        for (i, spec) in state.layout.specs.iter().enumerate() {
            let (_, group, t) =
                find(&spec.name).ok_or_else(|| Error::CheckpointMismatch(format!("missing parameter {}", spec.name)))?;
            if group != spec.group.as_str() || t.shape() != (spec.rows, spec.cols) {
                return Err(Error::CheckpointMismatch(format!(
                    "{}: stored {group} {:?}, expected {} {:?}",
                    spec.name,
                    t.shape(),
                    spec.group.as_str(),
                    (spec.rows, spec.cols)
                )));
            }
            state.params[i] = t.clone();
        }
        for i in 0..state.running_mean.len() {
            for (name, dst) in [("running_mean", &mut state.running_mean[i]), ("running_var", &mut state.running_var[i])] {
                let key = format!("g.bn{i}.{name}");
                let (_, _, t) = find(&key).ok_or_else(|| Error::CheckpointMismatch(format!("missing buffer {key}")))?;
                if t.len() != dst.len() {
                    return Err(Error::CheckpointMismatch(format!("{key}: {} values, expected {}", t.len(), dst.len())));
                }
                dst.copy_from_slice(t.data());
            }
        }
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>, epoch: u64) -> Result<()> {
        self.to_checkpoint(epoch).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelState::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Loads a checkpoint that must have been written for `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &Architecture) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.arch != *expected {
            return Err(Error::CheckpointMismatch(arch_diff(&ck.arch, expected)));
        }
        ModelState::from_checkpoint(&ck)
    }
}

fn arch_diff(stored: &Architecture, expected: &Architecture) -> String {
    let s = stored.describe();
    let e = expected.describe();
    let diffs: Vec<String> = s
        .split_whitespace()
        .zip(e.split_whitespace())
        .filter(|(a, b)| a != b)
        .map(|(a, b)| format!("checkpoint has {a}, configuration has {b}"))
        .collect();
    diffs.join("; ")
}

const CHECKPOINT_MAGIC: &str = "ZSL-CHECKPOINT 1";

/// Text manifest followed by one f64 feature container per tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub seen_classes: Vec<usize>,
    pub config_hash: String,
    pub epoch: u64,
    /// Free-form extra header fields (single-line values).
    pub meta: BTreeMap<String, String>,
    /// `(name, kind, tensor)`; kind is a parameter group or a buffer tag.
    pub tensors: Vec<(String, String, Tensor)>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let seen: Vec<String> = self.seen_classes.iter().map(|c| c.to_string()).collect();
        let mut header = format!(
            "{CHECKPOINT_MAGIC}\nconfig_hash {}\narch {}\nseen {}\nepoch {}\n",
            self.config_hash,
            self.arch.describe(),
            seen.join(","),
            self.epoch
        );
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::invalid(format!("checkpoint meta {k:?} must be one token and one line")));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, kind, t) in &self.tensors {
            header.push_str(&format!("tensor {name} {kind} {} {}\n", t.rows(), t.cols()));
        }
        header.push_str("end\n");
        let mut bytes = header.into_bytes();
        for (_, _, t) in &self.tensors {
            bytes.extend(binary::encode_matrix(TableKind::Features, t, VERSION_F64)?);
        }
        Ok(bytes)
    }

    pub fn decode(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |detail: String| Error::Format { path: origin.to_string(), detail };
        let end = bytes
            .windows(4)
            .position(|w| w == b"end\n")
            .ok_or_else(|| bad("manifest has no end line".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("manifest is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("not a checkpoint (bad magic line)".into()));
        }
        let (mut hash, mut arch, mut seen, mut epoch) = (None, None, None, None);
        let mut meta = BTreeMap::new();
        let mut manifest = Vec::new();
        for (n, line) in lines.enumerate() {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let at = |d: String| bad(format!("manifest line {}: {d}", n + 2));
            match key {
                "config_hash" => hash = Some(rest.to_string()),
                "arch" => arch = Some(Architecture::parse_description(rest).map_err(|e| at(e.to_string()))?),
                "seen" => {
                    let list: std::result::Result<Vec<usize>, _> =
                        rest.split(',').filter(|s| !s.is_empty()).map(str::parse).collect();
                    seen = Some(list.map_err(|_| at("bad seen class list".into()))?);
                }
                "epoch" => epoch = Some(rest.parse::<u64>().map_err(|_| at("bad epoch".into()))?),
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    let [name, kind, r, c] = f.as_slice() else { return Err(at("tensor line needs 4 fields".into())) };
                    let r: usize = r.parse().map_err(|_| at("bad row count".into()))?;
                    let c: usize = c.parse().map_err(|_| at("bad column count".into()))?;
                    manifest.push((name.to_string(), kind.to_string(), r, c));
                }
                _ => return Err(at(format!("unknown entry {key:?}"))),
            }
        }
        let missing = |what: &str| bad(format!("manifest lacks {what}"));
        let mut rest = &bytes[end + 4..];
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, kind, r, c) in manifest {
            let (t, tail) = binary::decode_matrix_prefix(rest, TableKind::Features, origin)?;
            if t.shape() != (r, c) {
                return Err(bad(format!("{name}: manifest says {r}x{c}, payload is {:?}", t.shape())));
            }
            tensors.push((name, kind, t));
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint {
            arch: arch.ok_or_else(|| missing("arch"))?,
            seen_classes: seen.ok_or_else(|| missing("seen"))?,
            config_hash: hash.ok_or_else(|| missing("config_hash"))?,
            epoch: epoch.ok_or_else(|| missing("epoch"))?,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binary::write(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes, &path.display().to_string())
    }

    /// SHA-256 of the encoded file, reported alongside evaluation results.
    pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(hex(&Sha256::digest(&bytes)))
    }
}
