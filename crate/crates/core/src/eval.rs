//! Evaluation protocols: per-class top-1 (ZSL), seen/unseen/harmonic (GZSL),
//! retrieval precision@k, and the plain-text reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::networks::ModelState;
use crate::synthesis::{
    build_gzsl_training_set, class_weights_for, synthesize, AnyClassifier, Classifier, ClassifierKind, SeenSource,
    SoftmaxClassifier, SoftmaxConfig, SvmClassifier, SvmConfig, SyntheticSet, Weighting,
};

/// Accuracies in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct PerClassAccuracy {
    pub per_class: BTreeMap<usize, f64>,
    /// Unweighted mean over classes.
    pub mean: f64,
}

pub fn per_class_top1(predictions: &[usize], truth: &[usize], classes: &[usize]) -> Result<PerClassAccuracy> {
    if predictions.len() != truth.len() {
        return Err(Error::dim("per_class_top1", format!("{} predictions for {} labels", predictions.len(), truth.len())));
    }
    if classes.is_empty() {
        return Err(Error::invalid("per_class_top1 needs at least one class"));
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &t) in predictions.iter().zip(truth) {
        if let Some(e) = counts.get_mut(&t) {
            e.1 += 1;
            if p == t {
                e.0 += 1;
            }
        }
    }
    let mut per_class = BTreeMap::new();
    for (c, (hit, n)) in counts {
        if n == 0 {
            return Err(Error::invalid(format!("class {c} has no test samples")));
        }
        per_class.insert(c, hit as f64 / n as f64);
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(PerClassAccuracy { per_class, mean })
}

/// `2·U·S/(U+S)`, 0 when both are 0. Works in either fractions or percent.
pub fn gzsl_harmonic(unseen: f64, seen: f64) -> f64 {
    if unseen + seen == 0.0 {
        0.0
    } else {
        2.0 * unseen * seen / (unseen + seen)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GzslReport {
    pub seen: PerClassAccuracy,
    pub unseen: PerClassAccuracy,
    pub harmonic: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::invalid(format!("unknown metric {s:?} (euclidean, cosine)"))),
        }
    }
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }

    /// Smaller is nearer.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => 1.0 - crate::synthesis::quality_score(a, b),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RetrievalPool {
    #[default]
    Unseen,
    All,
}

impl FromStr for RetrievalPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unseen" => Ok(RetrievalPool::Unseen),
            "all" => Ok(RetrievalPool::All),
            _ => Err(Error::invalid(format!("unknown retrieval pool {s:?} (unseen, all)"))),
        }
    }
}

impl RetrievalPool {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalPool::Unseen => "unseen",
            RetrievalPool::All => "all",
        }
    }
}

/// Pool rows ordered by distance to `query`; equal distances keep index order.
pub fn rank(query: &[f64], pool: &Tensor, metric: Metric) -> Vec<usize> {
    let d: Vec<f64> = (0..pool.rows()).map(|r| metric.distance(query, pool.row(r))).collect();
    let mut order: Vec<usize> = (0..pool.rows()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    order
}

/// Fraction of the `k` nearest pool rows labeled `class`.
pub fn precision_at_k(query: &[f64], pool: &Tensor, labels: &[usize], class: usize, k: usize, metric: Metric) -> Result<f64> {
    if k == 0 || k > pool.rows() {
        return Err(Error::invalid(format!("k = {k} outside 1..={} (pool size)", pool.rows())));
    }
    let hits = rank(query, pool, metric)[..k].iter().filter(|&&i| labels[i] == class).count();
    Ok(hits as f64 / k as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub k: usize,
    pub per_class: BTreeMap<usize, f64>,
    pub mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalConfig {
    pub samples: usize,
    pub sigma: f64,
    pub n_way: usize,
    pub metric: Metric,
    pub pool: RetrievalPool,
    pub seed: u64,
}

/// One report per `k`: each unseen class's synthetic mean queries the pool.
pub fn retrieval_eval(state: &ModelState, dataset: &Dataset, ks: &[usize], cfg: &RetrievalConfig) -> Result<Vec<RetrievalReport>> {
    let unseen = dataset.split.unseen_list();
    let idx: Vec<usize> = match cfg.pool {
        RetrievalPool::Unseen => (0..dataset.labels.len()).filter(|&i| dataset.split.unseen.contains(&dataset.labels[i])).collect(),
        RetrievalPool::All => (0..dataset.labels.len()).collect(),
    };
    let pool = dataset.features.values().select_rows(&idx);
    let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels[i]).collect();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > pool.rows()) {
        return Err(Error::invalid(format!("k = {k} outside 1..={} (retrieval pool size)", pool.rows())));
    }
    let set = synthesize(state, dataset.attributes.values(), &unseen, cfg.samples, cfg.sigma, cfg.n_way, cfg.seed)?;
    let mut reports: Vec<RetrievalReport> =
        ks.iter().map(|&k| RetrievalReport { k, per_class: BTreeMap::new(), mean: 0.0 }).collect();
    for &c in &unseen {
        let rep = class_mean(&set, c);
        let order = rank(&rep, &pool, cfg.metric);
        for r in reports.iter_mut() {
            let hits = order[..r.k].iter().filter(|&&i| labels[i] == c).count();
            r.per_class.insert(c, hits as f64 / r.k as f64);
        }
    }
    for r in reports.iter_mut() {
        r.mean = r.per_class.values().sum::<f64>() / r.per_class.len().max(1) as f64;
    }
    Ok(reports)
}

fn class_mean(set: &SyntheticSet, class: usize) -> Vec<f64> {
    let mut m = vec![0.0; set.features.cols()];
    let mut n = 0usize;
    for (i, &l) in set.labels.iter().enumerate() {
        if l == class {
            n += 1;
            for (a, b) in m.iter_mut().zip(set.features.row(i)) {
                *a += b;
            }
        }
    }
    m.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    m
}

/// Downstream classifier settings shared by the ZSL and GZSL protocols.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub softmax: SoftmaxConfig,
    pub svm: SvmConfig,
    /// Keep negative quality scores as negative weights instead of clamping at 0.
    pub allow_negative: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::WeightedSoftmax,
            softmax: SoftmaxConfig::default(),
            svm: SvmConfig::default(),
            allow_negative: false,
        }
    }
}

pub fn train_classifier(set: &SyntheticSet, cfg: &ClassifierConfig) -> Result<AnyClassifier> {
    let classes = set.classes();
    Ok(match cfg.kind {
        ClassifierKind::Softmax => AnyClassifier::Softmax(SoftmaxClassifier::train(set, &cfg.softmax, Weighting::Uniform)?),
        ClassifierKind::WeightedSoftmax => AnyClassifier::Softmax(SoftmaxClassifier::train(
            set,
            &cfg.softmax,
            Weighting::Quality { allow_negative: cfg.allow_negative },
        )?),
        ClassifierKind::Svm => AnyClassifier::Svm(SvmClassifier::train(set, None, &cfg.svm)?),
        ClassifierKind::WeightedSvm => {
            let mut w = class_weights_for(set, &classes)?;
            if !cfg.allow_negative {
                w.values_mut().for_each(|v| *v = v.max(0.0));
            }
            AnyClassifier::Svm(SvmClassifier::train(set, Some(&w), &cfg.svm)?)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthesisConfig {
    pub samples: usize,
    pub sigma: f64,
    pub n_way: usize,
    pub seed: u64,
}

/// Rows of `dataset` whose label is in `classes`.
fn images_of(dataset: &Dataset, classes: &std::collections::BTreeSet<usize>) -> (Tensor, Vec<usize>) {
    let idx: Vec<usize> = (0..dataset.labels.len()).filter(|&i| classes.contains(&dataset.labels[i])).collect();
    (dataset.features.values().select_rows(&idx), idx.iter().map(|&i| dataset.labels[i]).collect())
}

pub struct ZslOutcome {
    pub accuracy: PerClassAccuracy,
    pub classifier: AnyClassifier,
    pub synthetic: SyntheticSet,
}

/// Synthesize unseen classes, fit the classifier, score real unseen images.
pub fn evaluate_zsl(state: &ModelState, dataset: &Dataset, syn: &SynthesisConfig, clf: &ClassifierConfig) -> Result<ZslOutcome> {
    let unseen = dataset.split.unseen_list();
    let synthetic = synthesize(state, dataset.attributes.values(), &unseen, syn.samples, syn.sigma, syn.n_way, syn.seed)?;
    let classifier = train_classifier(&synthetic, clf)?;
    let (x, y) = images_of(dataset, &dataset.split.unseen);
    let accuracy = per_class_top1(&classifier.predict(&x)?, &y, &unseen)?;
    Ok(ZslOutcome { accuracy, classifier, synthetic })
}

pub struct GzslOutcome {
    pub report: GzslReport,
    pub classifier: AnyClassifier,
}

/// Classifier over seen and unseen classes; S is measured on the real seen
/// images, U on the real unseen ones.
pub fn evaluate_gzsl(
    state: &ModelState,
    dataset: &Dataset,
    syn: &SynthesisConfig,
    seen_source: SeenSource,
    clf: &ClassifierConfig,
) -> Result<GzslOutcome> {
    let set = build_gzsl_training_set(state, dataset, syn.samples, syn.sigma, syn.n_way, seen_source, syn.seed)?;
    let classifier = train_classifier(&set, clf)?;
    let (xs, ys) = images_of(dataset, &dataset.split.seen);
    let (xu, yu) = images_of(dataset, &dataset.split.unseen);
    let seen = per_class_top1(&classifier.predict(&xs)?, &ys, &dataset.split.seen_list())?;
    let unseen = per_class_top1(&classifier.predict(&xu)?, &yu, &dataset.split.unseen_list())?;
    let harmonic = gzsl_harmonic(unseen.mean, seen.mean);
    Ok(GzslOutcome { report: GzslReport { seen, unseen, harmonic }, classifier })
}

/// Fraction as a percent with two decimals.
pub fn percent(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Ordered `key=value` lines closing every report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary(pub Vec<(String, String)>);

impl Summary {
    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Reads back the `key=value` lines of a rendered report.
    pub fn parse(text: &str) -> Summary {
        Summary(
            text.lines()
                .filter_map(|l| l.split_once('='))
                .filter(|(k, _)| !k.contains(' '))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }
}

/// One `class <id> <percent>` row per class, then a blank line and the summary.
pub fn render_per_class(title: &str, rows: &[(&str, &PerClassAccuracy)], summary: &Summary) -> String {
    let mut s = format!("# {title}\n");
    for (group, acc) in rows {
        for (c, a) in &acc.per_class {
            let _ = writeln!(s, "{group} class {c} {}", percent(*a));
        }
    }
    s.push('\n');
    s + &summary.render()
}

pub fn render_retrieval(reports: &[RetrievalReport], summary: &Summary) -> String {
    let mut s = String::from("# retrieval precision@k\n");
    for r in reports {
        for (c, p) in &r.per_class {
            let _ = writeln!(s, "k{} class {c} {}", r.k, percent(*p));
        }
    }
    s.push('\n');
    s + &summary.render()
}

#[cfg(test)]
mod tests;
