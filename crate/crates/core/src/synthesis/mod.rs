//! Test-time feature synthesis, quality scores, and the downstream classifiers.

mod classifier;
pub mod softmax;
mod svm;

pub use classifier::{load_classifier, save_classifier, AnyClassifier, Classifier, ClassifierKind};
pub use softmax::{SoftmaxClassifier, SoftmaxConfig, Weighting};
pub use svm::{SvmClassifier, SvmConfig};

use std::collections::BTreeMap;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::data::{binary, Dataset, TableKind};
use crate::error::{Error, Result};
use crate::networks::ModelState;
use crate::rng::{self, Purpose};

/// Features with their class ids and per-row quality scores.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub quality: Vec<f64>,
}

impl SyntheticSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn concat(parts: &[SyntheticSet]) -> Result<SyntheticSet> {
        let feats: Vec<&Tensor> = parts.iter().map(|p| &p.features).collect();
        Ok(SyntheticSet {
            features: Tensor::vstack(&feats)?,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            quality: parts.iter().flat_map(|p| p.quality.iter().copied()).collect(),
        })
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Writes (lossless, f64) `<stem>.zslf` and `<stem>.zsll` (and `<stem>.quality.zslf`) in `dir`.
    pub fn export(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("nothing to export: synthetic set is empty"));
        }
        let dir = dir.as_ref();
        let lossless = |name: String, t: &Tensor| {
            binary::write(&dir.join(name), &binary::encode_matrix(TableKind::Features, t, binary::VERSION_F64)?)
        };
        lossless(format!("{stem}.zslf"), &self.features)?;
        binary::save_labels(dir.join(format!("{stem}.zsll")), &self.labels)?;
        lossless(format!("{stem}.quality.zslf"), &Tensor::from_vec(self.len(), 1, self.quality.clone())?)
    }

    pub fn import(dir: impl AsRef<Path>, stem: &str) -> Result<SyntheticSet> {
        let dir = dir.as_ref();
        let features = binary::load_matrix(dir.join(format!("{stem}.zslf")), TableKind::Features)?;
        let labels = binary::load_labels(dir.join(format!("{stem}.zsll")))?;
        let quality = binary::load_matrix(dir.join(format!("{stem}.quality.zslf")), TableKind::Features)?.into_data();
        if labels.len() != features.rows() || quality.len() != features.rows() {
            return Err(Error::Format {
                path: dir.display().to_string(),
                detail: format!("{} feature rows, {} labels, {} quality scores", features.rows(), labels.len(), quality.len()),
            });
        }
        Ok(SyntheticSet { features, labels, quality })
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn quality_score(a: &[f64], rec: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(rec).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nr = rec.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nr == 0.0 {
        return 0.0;
    }
    (dot / (na * nr)).clamp(-1.0, 1.0)
}

/// Quality of each feature row against the attribute of its label.
pub fn score_features(state: &ModelState, features: &Tensor, labels: &[usize], attributes: &Tensor) -> Result<Vec<f64>> {
    let rec = state.reconstruct_attribute(features)?;
    Ok(labels.iter().enumerate().map(|(i, &c)| quality_score(attributes.row(c), rec.row(i))).collect())
}

/// `count` features for one class: its attribute replicated `n_way` times
/// forms the task, and the inference-mode generator runs on fresh noise.
pub fn synthesize_for_class(
    state: &ModelState,
    class: usize,
    attribute: &[f64],
    count: usize,
    sigma: f64,
    n_way: usize,
    rng: &mut rng::Rng,
) -> Result<SyntheticSet> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("synthesis noise sigma must be positive, got {sigma}")));
    }
    if n_way == 0 {
        return Err(Error::invalid("n_way must be >= 1"));
    }
    let row = Tensor::row_vector(attribute.to_vec());
    let e = state.embed(&row.select_rows(&vec![0; n_way]))?;
    let mods = state.modulation(&e)?;
    let z = rng::normal(rng, count, state.arch.z_dim, sigma);
    let a = row.select_rows(&vec![0; count]);
    let features = state.generate(&a, &z, &mods)?;
    let rec = state.reconstruct_attribute(&features)?;
    let quality = (0..count).map(|i| quality_score(attribute, rec.row(i))).collect();
    Ok(SyntheticSet { features, labels: vec![class; count], quality })
}

/// Synthesis for several classes; class `c` always draws from its own stream.
pub fn synthesize(
    state: &ModelState,
    attributes: &Tensor,
    classes: &[usize],
    count: usize,
    sigma: f64,
    n_way: usize,
    seed: u64,
) -> Result<SyntheticSet> {
    let one = |&c: &usize| -> Result<SyntheticSet> {
        if c >= attributes.rows() {
            return Err(Error::invalid(format!("class {c} has no attribute row")));
        }
        let mut r = rng::stream(seed, Purpose::Synthesis, c as u64, 0);
        synthesize_for_class(state, c, attributes.row(c), count, sigma, n_way, &mut r)
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<SyntheticSet>> = classes.par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<SyntheticSet>> = classes.iter().map(one).collect();
    SyntheticSet::concat(&parts.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Mean quality per class.
pub type QualityWeights = BTreeMap<usize, f64>;

pub fn class_weights(set: &SyntheticSet) -> QualityWeights {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&c, &q) in set.labels.iter().zip(&set.quality) {
        let e = acc.entry(c).or_default();
        e.0 += q;
        e.1 += 1;
    }
    acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
}

/// [`class_weights`] that insists every class in `classes` has samples.
pub fn class_weights_for(set: &SyntheticSet, classes: &[usize]) -> Result<QualityWeights> {
    let w = class_weights(set);
    if let Some(c) = classes.iter().find(|c| !w.contains_key(c)) {
        return Err(Error::invalid(format!("class {c} has no synthetic samples")));
    }
    Ok(w)
}

/// Where the seen-class rows of a generalized training set come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeenSource {
    Synthetic,
    Real,
}

/// Training rows over seen and unseen classes: synthetic for both, or real
/// seen features plus synthetic unseen ones.
pub fn build_gzsl_training_set(
    state: &ModelState,
    dataset: &Dataset,
    count: usize,
    sigma: f64,
    n_way: usize,
    seen_source: SeenSource,
    seed: u64,
) -> Result<SyntheticSet> {
    let attrs = dataset.attributes.values();
    let unseen = dataset.split.unseen_list();
    let seen = dataset.split.seen_list();
    match seen_source {
        SeenSource::Synthetic => {
            let mut all: Vec<usize> = seen.into_iter().chain(unseen).collect();
            all.sort_unstable();
            synthesize(state, attrs, &all, count, sigma, n_way, seed)
        }
        SeenSource::Real => {
            let idx: Vec<usize> = (0..dataset.labels.len()).filter(|&i| dataset.split.seen.contains(&dataset.labels[i])).collect();
            let features = dataset.features.values().select_rows(&idx);
            let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels[i]).collect();
            let quality = score_features(state, &features, &labels, attrs)?;
            let real = SyntheticSet { features, labels, quality };
            let synth = synthesize(state, attrs, &unseen, count, sigma, n_way, seed)?;
            SyntheticSet::concat(&[real, synth])
        }
    }
}
