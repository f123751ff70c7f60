use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::data::{AttributeTable, Dataset, FeatureTable, SplitSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Parameters of a synthetic dataset whose features are a fixed linear
/// image of the class attributes plus Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub attr_dim: usize,
    pub feat_dim: usize,
    pub per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec { n_seen: 8, n_unseen: 2, attr_dim: 16, feat_dim: 64, per_class: 100, noise_sigma: 0.05, seed: 0 }
    }
}

/// Classes `0..n_seen` are seen, the rest unseen; images are grouped by class.
pub fn make_toy_dataset(spec: &ToySpec) -> Result<Dataset> {
    if spec.n_seen == 0 || spec.n_unseen == 0 || spec.attr_dim == 0 || spec.feat_dim == 0 || spec.per_class == 0 {
        return Err(Error::invalid("toy dataset counts must all be >= 1"));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::invalid("noise_sigma must be >= 0"));
    }
    let n_classes = spec.n_seen + spec.n_unseen;
    let mut r = rng::stream(spec.seed, Purpose::Toy, 0, 0);
    let attributes = Tensor::from_fn(n_classes, spec.attr_dim, |_, _| r.random::<f64>());
    let map = rng::normal(&mut r, spec.attr_dim, spec.feat_dim, 1.0 / (spec.attr_dim as f64).sqrt());
    let prototypes = attributes.matmul(&map)?;
    let n = n_classes * spec.per_class;
    let noise = rng::normal(&mut r, n, spec.feat_dim, spec.noise_sigma);
    let labels: Vec<usize> = (0..n).map(|i| i / spec.per_class).collect();
    let features = Tensor::from_fn(n, spec.feat_dim, |i, c| prototypes.get(labels[i], c) + noise.get(i, c));
    Ok(Dataset {
        features: FeatureTable(features),
        labels,
        attributes: AttributeTable(attributes),
        split: SplitSpec::new(0..spec.n_seen, spec.n_seen..n_classes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_seed() {
        let spec = ToySpec { per_class: 5, ..ToySpec::default() };
        assert_eq!(make_toy_dataset(&spec).unwrap(), make_toy_dataset(&spec).unwrap());
        let other = ToySpec { seed: 1, ..spec.clone() };
        assert_ne!(make_toy_dataset(&spec).unwrap(), make_toy_dataset(&other).unwrap());
    }

    #[test]
    fn zero_noise_collapses_each_class() {
        let spec = ToySpec { per_class: 4, noise_sigma: 0.0, ..ToySpec::default() };
        let ds = make_toy_dataset(&spec).unwrap();
        for i in 0..ds.labels.len() {
            let first = ds.labels[i] * 4;
            assert_eq!(ds.features.0.row(i), ds.features.0.row(first));
        }
    }

    #[test]
    fn always_valid() {
        for seed in 0..5 {
            let spec = ToySpec { n_seen: 3, n_unseen: 2, attr_dim: 4, feat_dim: 6, per_class: 3, noise_sigma: 0.1, seed };
            assert!(make_toy_dataset(&spec).unwrap().validate().is_empty());
        }
    }

    #[test]
    fn nearest_prototype_separates_classes() {
        // Brute-force nearest class mean over all images.
        let spec = ToySpec { noise_sigma: 0.01, feat_dim: 64, ..ToySpec::default() };
        let ds = make_toy_dataset(&spec).unwrap();
        let n_classes = ds.n_classes();
        let x = &ds.features.0;
        let mut means = vec![vec![0.0; x.cols()]; n_classes];
        let mut counts = vec![0.0; n_classes];
        for (i, &l) in ds.labels.iter().enumerate() {
            for (m, v) in means[l].iter_mut().zip(x.row(i)) {
                *m += v;
            }
            counts[l] += 1.0;
        }
        for (m, c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c);
        }
        let mut correct = 0;
        for (i, &l) in ds.labels.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (k, m) in means.iter().enumerate() {
                let d: f64 = m.iter().zip(x.row(i)).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            correct += usize::from(best.1 == l);
        }
        assert!(correct as f64 / ds.labels.len() as f64 >= 0.99);
    }

    #[test]
    fn subset_of_seen_has_expected_size() {
        let spec = ToySpec { per_class: 7, ..ToySpec::default() };
        let ds = make_toy_dataset(&spec).unwrap();
        let sub = ds.subset_by_classes(&ds.split.seen).unwrap();
        assert_eq!(sub.labels.len(), spec.n_seen * spec.per_class);
        assert!(sub.validate().is_empty());
    }
}
