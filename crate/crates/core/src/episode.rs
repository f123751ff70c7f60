//! N-way K-shot meta-task sampling over the seen classes.

use rand::seq::index::sample;

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_sup: usize,
    pub k_qry: usize,
    pub tasks_per_batch: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { n_way: 10, k_sup: 5, k_qry: 3, tasks_per_batch: 10 }
    }
}

impl EpisodeConfig {
    /// Images touched by one batch.
    pub fn batch_instances(&self) -> usize {
        self.tasks_per_batch * self.n_way * (self.k_sup + self.k_qry)
    }
}

/// One side of a task: `n_way` classes with `k` instances each, class-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSet {
    pub class_ids: Vec<usize>,
    pub image_indices: Vec<usize>,
    /// `N·K × feat_dim`.
    pub features: Tensor,
    /// Class id of each instance.
    pub labels: Vec<usize>,
    /// `N × attr_dim`, ordered as `class_ids`.
    pub attribute_rows: Tensor,
    /// `N·K × attr_dim`, the class attribute of each instance.
    pub instance_attributes: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub support: TaskSet,
    pub query: TaskSet,
}

pub struct EpisodeSampler<'a> {
    dataset: &'a Dataset,
    config: EpisodeConfig,
    pool: Vec<usize>,
    by_class: Vec<Vec<usize>>,
}

impl<'a> EpisodeSampler<'a> {
    /// Seen classes with fewer than `max(k_sup, k_qry)` images are left out
    /// of the pool with a warning.
    pub fn new(dataset: &'a Dataset, config: EpisodeConfig) -> Result<Self> {
        if config.n_way == 0 || config.k_sup == 0 || config.k_qry == 0 || config.tasks_per_batch == 0 {
            return Err(Error::invalid("n_way, k_sup, k_qry and tasks_per_batch must be >= 1"));
        }
        let by_class = dataset.class_index();
        let k = config.k_sup.max(config.k_qry);
        let mut pool = Vec::new();
        for &c in &dataset.split.seen {
            if by_class.get(c).map_or(0, Vec::len) >= k {
                pool.push(c);
            } else {
                log::warn!("seen class {c} has fewer than {k} images; excluded from task sampling");
            }
        }
        if pool.len() < 2 * config.n_way {
            return Err(Error::Sampling(format!(
                "{} eligible seen classes, need {} for {}-way support and query",
                pool.len(),
                2 * config.n_way,
                config.n_way
            )));
        }
        Ok(EpisodeSampler { dataset, config, pool, by_class })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    fn task_set(&self, classes: &[usize], k: usize, rng: &mut Rng) -> TaskSet {
        let mut image_indices = Vec::with_capacity(classes.len() * k);
        let mut labels = Vec::with_capacity(classes.len() * k);
        for &c in classes {
            let imgs = &self.by_class[c];
            for i in sample(rng, imgs.len(), k).into_iter() {
                image_indices.push(imgs[i]);
                labels.push(c);
            }
        }
        let attrs = self.dataset.attributes.values();
        TaskSet {
            class_ids: classes.to_vec(),
            features: self.dataset.features.values().select_rows(&image_indices),
            instance_attributes: attrs.select_rows(&labels),
            attribute_rows: attrs.select_rows(classes),
            image_indices,
            labels,
        }
    }

    /// Draws `2·n_way` distinct classes, the first half for support and the
    /// rest for query, then `k` distinct images per class.
    pub fn sample_task(&self, rng: &mut Rng) -> Task {
        let n = self.config.n_way;
        let picked: Vec<usize> = sample(rng, self.pool.len(), 2 * n).into_iter().map(|i| self.pool[i]).collect();
        let support = self.task_set(&picked[..n], self.config.k_sup, rng);
        let query = self.task_set(&picked[n..], self.config.k_qry, rng);
        Task { support, query }
    }

    /// Task `i` of `epoch` always comes from the same substream.
    pub fn sample_batch(&self, seed: u64, epoch: u64) -> Vec<Task> {
        (0..self.config.tasks_per_batch)
            .map(|i| self.sample_task(&mut rng::stream(seed, Purpose::Task, epoch, i as u64)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::data::{make_toy_dataset, ToySpec};

    fn toy(n_seen: usize, per_class: usize) -> Dataset {
        make_toy_dataset(&ToySpec { n_seen, n_unseen: 2, attr_dim: 3, feat_dim: 4, per_class, noise_sigma: 0.1, seed: 1 })
            .unwrap()
    }

    #[test]
    fn ten_way_five_and_three_shot_sizes() {
        let ds = toy(40, 8);
        let s = EpisodeSampler::new(&ds, EpisodeConfig::default()).unwrap();
        let task = s.sample_task(&mut rng::stream(0, Purpose::Test, 0, 0));
        assert_eq!(task.support.features.rows(), 50);
        assert_eq!(task.query.features.rows(), 30);
        assert_eq!(task.support.attribute_rows.shape(), (10, 3));
        let sup: BTreeSet<_> = task.support.class_ids.iter().collect();
        assert!(task.query.class_ids.iter().all(|c| !sup.contains(c)));
    }

    #[test]
    fn default_batch_has_800_instances() {
        let ds = toy(40, 8);
        let s = EpisodeSampler::new(&ds, EpisodeConfig::default()).unwrap();
        let batch = s.sample_batch(3, 0);
        assert_eq!(batch.len(), 10);
        let total: usize = batch.iter().map(|t| t.support.labels.len() + t.query.labels.len()).sum();
        assert_eq!(total, 800);
        assert_eq!(EpisodeConfig::default().batch_instances(), 800);
        let one = EpisodeSampler::new(&ds, EpisodeConfig { tasks_per_batch: 1, ..EpisodeConfig::default() }).unwrap();
        assert_eq!(one.sample_batch(3, 0).len(), 1);
    }

    #[test]
    fn batches_replay_under_a_seed() {
        let ds = toy(40, 8);
        let s = EpisodeSampler::new(&ds, EpisodeConfig::default()).unwrap();
        assert_eq!(s.sample_batch(9, 4), s.sample_batch(9, 4));
        assert_ne!(s.sample_batch(9, 4), s.sample_batch(9, 5));
    }

    #[test]
    fn within_task_images_are_unique_and_seen_only() {
        let ds = toy(12, 6);
        let cfg = EpisodeConfig { n_way: 3, k_sup: 4, k_qry: 2, tasks_per_batch: 5 };
        let s = EpisodeSampler::new(&ds, cfg).unwrap();
        for epoch in 0..50 {
            for task in s.sample_batch(1, epoch) {
                let mut all: Vec<usize> = task.support.image_indices.clone();
                all.extend(&task.query.image_indices);
                let uniq: BTreeSet<_> = all.iter().collect();
                assert_eq!(uniq.len(), all.len());
                for &i in &all {
                    assert!(ds.split.seen.contains(&ds.labels[i]));
                }
                for (row, &c) in task.support.labels.iter().enumerate() {
                    assert_eq!(task.support.instance_attributes.row(row), ds.attributes.row(c));
                }
            }
        }
    }

    #[test]
    fn class_frequencies_are_uniform() {
        let ds = toy(40, 5);
        let cfg = EpisodeConfig { n_way: 5, k_sup: 1, k_qry: 1, tasks_per_batch: 1 };
        let s = EpisodeSampler::new(&ds, cfg).unwrap();
        let mut counts = vec![0.0f64; 40];
        for i in 0..1000 {
            let t = s.sample_task(&mut rng::stream(17, Purpose::Test, i, 0));
            for &c in t.support.class_ids.iter().chain(&t.query.class_ids) {
                counts[c] += 1.0;
            }
        }
        let p: f64 = 10.0 / 40.0;
        let expected = 1000.0 * p;
        let sigma = (1000.0 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for &c in &counts {
            assert!(c > 0.0);
            assert!((c - expected).abs() <= 3.0 * sigma, "count {c} vs {expected} ± {sigma}");
            chi2 += (c - expected).powi(2) / expected;
        }
        // 39 degrees of freedom, 0.1% critical value.
        assert!(chi2 < 72.05, "chi2 = {chi2}");
    }

    #[test]
    fn insufficient_classes_or_images() {
        let ds = toy(5, 8);
        assert!(matches!(EpisodeSampler::new(&ds, EpisodeConfig { n_way: 3, ..EpisodeConfig::default() }), Err(Error::Sampling(_))));
        let ds = toy(20, 4);
        // every class has 4 < 5 images
        assert!(EpisodeSampler::new(&ds, EpisodeConfig::default()).is_err());
    }
}
