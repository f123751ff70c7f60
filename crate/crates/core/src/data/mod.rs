//! Feature tables, labels, class attributes and seen/unseen splits.

pub mod binary;
pub mod csv;
mod toy;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use binary::TableKind;
pub use toy::{make_toy_dataset, ToySpec};

/// One attribute vector per class, `n_classes × attr_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeTable(pub Tensor);

impl AttributeTable {
    pub fn n_classes(&self) -> usize {
        self.0.rows()
    }

    pub fn attr_dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, class: usize) -> &[f64] {
        self.0.row(class)
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }
}

/// Visual features, `n_images × feat_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable(pub Tensor);

impl FeatureTable {
    pub fn n_images(&self) -> usize {
        self.0.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub seen: BTreeSet<usize>,
    pub unseen: BTreeSet<usize>,
}

impl SplitSpec {
    pub fn new(seen: impl IntoIterator<Item = usize>, unseen: impl IntoIterator<Item = usize>) -> Self {
        SplitSpec { seen: seen.into_iter().collect(), unseen: unseen.into_iter().collect() }
    }

    pub fn seen_list(&self) -> Vec<usize> {
        self.seen.iter().copied().collect()
    }

    pub fn unseen_list(&self) -> Vec<usize> {
        self.unseen.iter().copied().collect()
    }

    /// Text form: `seen: 0,1,2` / `unseen: 3,4`.
    pub fn to_text(&self) -> String {
        let join = |s: &BTreeSet<usize>| s.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        format!("seen: {}\nunseen: {}\n", join(&self.seen), join(&self.unseen))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let fmt = |detail: String| Error::Format { path: origin.to_string(), detail };
        let mut seen = None;
        let mut unseen = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| fmt(format!("line {}: expected `seen:` or `unseen:`", no + 1)))?;
            let ids: BTreeSet<usize> = rest
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| fmt(format!("line {}: bad class id {s:?}", no + 1))))
                .collect::<Result<_>>()?;
            match key.trim() {
                "seen" => seen = Some(ids),
                "unseen" => unseen = Some(ids),
                other => return Err(fmt(format!("line {}: unknown key {other:?}", no + 1))),
            }
        }
        Ok(SplitSpec {
            seen: seen.ok_or_else(|| fmt("missing `seen:` line".into()))?,
            unseen: unseen.ok_or_else(|| fmt("missing `unseen:` line".into()))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: FeatureTable,
    pub labels: Vec<usize>,
    pub attributes: AttributeTable,
    pub split: SplitSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    LabelCount { labels: usize, images: usize },
    LabelOutOfRange { image: usize, label: usize, n_classes: usize },
    SplitOverlap { class: usize },
    SplitClassOutOfRange { class: usize },
    LabelNotInSplit { class: usize },
    SeenClassWithoutImages { class: usize },
    NonFiniteFeature { row: usize, col: usize },
    NonFiniteAttribute { row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LabelCount { labels, images } => write!(f, "{labels} labels for {images} images"),
            Violation::LabelOutOfRange { image, label, n_classes } => {
                write!(f, "image {image}: label {label} out of range for {n_classes} classes")
            }
            Violation::SplitOverlap { class } => write!(f, "class {class} is both seen and unseen"),
            Violation::SplitClassOutOfRange { class } => write!(f, "split names unknown class {class}"),
            Violation::LabelNotInSplit { class } => write!(f, "label {class} is neither seen nor unseen"),
            Violation::SeenClassWithoutImages { class } => write!(f, "seen class {class} has no images"),
            Violation::NonFiniteFeature { row, col } => write!(f, "non-finite feature at ({row}, {col})"),
            Violation::NonFiniteAttribute { row, col } => write!(f, "non-finite attribute at ({row}, {col})"),
        }
    }
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.attributes.n_classes()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.attr_dim()
    }

    pub fn feat_dim(&self) -> usize {
        self.features.feat_dim()
    }

    /// Image indices per class id.
    pub fn class_index(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l < out.len() {
                out[l].push(i);
            }
        }
        out
    }

    /// Every invariant violation, not just the first.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let n_classes = self.n_classes();
        if self.labels.len() != self.features.n_images() {
            v.push(Violation::LabelCount { labels: self.labels.len(), images: self.features.n_images() });
        }
        for (image, &label) in self.labels.iter().enumerate() {
            if label >= n_classes {
                v.push(Violation::LabelOutOfRange { image, label, n_classes });
            }
        }
        for &c in self.split.seen.intersection(&self.split.unseen) {
            v.push(Violation::SplitOverlap { class: c });
        }
        for &c in self.split.seen.union(&self.split.unseen) {
            if c >= n_classes {
                v.push(Violation::SplitClassOutOfRange { class: c });
            }
        }
        let present: BTreeSet<usize> = self.labels.iter().copied().collect();
        for &c in &present {
            if !self.split.seen.contains(&c) && !self.split.unseen.contains(&c) {
                v.push(Violation::LabelNotInSplit { class: c });
            }
        }
        for &c in &self.split.seen {
            if !present.contains(&c) {
                v.push(Violation::SeenClassWithoutImages { class: c });
            }
        }
        if let Some((row, col)) = self.features.0.first_non_finite() {
            v.push(Violation::NonFiniteFeature { row, col });
        }
        if let Some((row, col)) = self.attributes.0.first_non_finite() {
            v.push(Violation::NonFiniteAttribute { row, col });
        }
        v
    }

    /// Fails with every violation joined into one message.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            return Ok(());
        }
        let msg: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        Err(Error::Precondition(format!("invalid dataset: {}", msg.join("; "))))
    }

    /// Images of the given classes only; the split is restricted to the same
    /// classes. Image order is preserved.
    pub fn subset_by_classes(&self, classes: &BTreeSet<usize>) -> Result<Dataset> {
        if let Some(&bad) = classes.iter().find(|&&c| c >= self.n_classes()) {
            return Err(Error::invalid(format!("unknown class id {bad}")));
        }
        let idx: Vec<usize> = (0..self.labels.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        Ok(Dataset {
            features: FeatureTable(self.features.0.select_rows(&idx)),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            attributes: self.attributes.clone(),
            split: SplitSpec {
                seen: self.split.seen.intersection(classes).copied().collect(),
                unseen: self.split.unseen.intersection(classes).copied().collect(),
            },
        })
    }

    /// Writes `features.zslf`, `labels.zsll`, `attributes.zsla`, `split.txt`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        binary::save_matrix(dir.join(FEATURES_FILE), TableKind::Features, &self.features.0)?;
        binary::save_labels(dir.join(LABELS_FILE), &self.labels)?;
        binary::save_matrix(dir.join(ATTRIBUTES_FILE), TableKind::Attributes, &self.attributes.0)?;
        let split = dir.join(SPLIT_FILE);
        fs::write(&split, self.split.to_text()).map_err(|e| Error::io(&split, e))
    }

    /// Loads a dataset directory. Each table is read from its binary file,
    /// falling back to a `.csv` file of the same stem.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let pick = |bin: &str, csv: &str| -> Result<(std::path::PathBuf, bool)> {
            let b = dir.join(bin);
            if b.exists() {
                return Ok((b, true));
            }
            let c = dir.join(csv);
            if c.exists() {
                return Ok((c, false));
            }
            Err(Error::Precondition(format!("{} has neither {bin} nor {csv}", dir.display())))
        };
        let (fp, fb) = pick(FEATURES_FILE, "features.csv")?;
        let features = if fb { binary::load_matrix(&fp, TableKind::Features)? } else { csv::load_matrix(&fp)? };
        let (lp, lb) = pick(LABELS_FILE, "labels.csv")?;
        let labels = if lb { binary::load_labels(&lp)? } else { csv::load_labels(&lp)? };
        let (ap, ab) = pick(ATTRIBUTES_FILE, "attributes.csv")?;
        let attributes = if ab { binary::load_matrix(&ap, TableKind::Attributes)? } else { csv::load_matrix(&ap)? };
        let sp = dir.join(SPLIT_FILE);
        let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let split = SplitSpec::parse(&text, &sp.display().to_string())?;
        let ds = Dataset {
            features: FeatureTable(features),
            labels,
            attributes: AttributeTable(attributes),
            split,
        };
        ds.ensure_valid()?;
        Ok(ds)
    }
}

pub const FEATURES_FILE: &str = "features.zslf";
pub const LABELS_FILE: &str = "labels.zsll";
pub const ATTRIBUTES_FILE: &str = "attributes.zsla";
pub const SPLIT_FILE: &str = "split.txt";
