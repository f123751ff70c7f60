use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::Tensor;
use crate::data::binary::{self, TableKind, VERSION_F64};
use crate::error::{Error, Result};
use crate::synthesis::softmax::SoftmaxClassifier;
use crate::synthesis::svm::SvmClassifier;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Softmax,
    WeightedSoftmax,
    Svm,
    WeightedSvm,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] =
        [ClassifierKind::Softmax, ClassifierKind::WeightedSoftmax, ClassifierKind::Svm, ClassifierKind::WeightedSvm];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Softmax => "softmax",
            ClassifierKind::WeightedSoftmax => "weighted-soft",
            ClassifierKind::Svm => "svm",
            ClassifierKind::WeightedSvm => "weighted-svm",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown classifier {s:?} (softmax, weighted-soft, svm, weighted-svm)")))
    }
}

/// Scores rows over a sorted class list; prediction is the argmax with ties
/// going to the lowest class id.
pub trait Classifier {
    fn classes(&self) -> &[usize];

    fn scores(&self, x: &Tensor) -> Result<Tensor>;

    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let s = self.scores(x)?;
        let classes = self.classes();
        Ok((0..s.rows())
            .map(|r| {
                let row = s.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                classes[best]
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyClassifier {
    Softmax(SoftmaxClassifier),
    Svm(SvmClassifier),
}

impl Classifier for AnyClassifier {
    fn classes(&self) -> &[usize] {
        match self {
            AnyClassifier::Softmax(c) => c.classes(),
            AnyClassifier::Svm(c) => c.classes(),
        }
    }

    fn scores(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            AnyClassifier::Softmax(c) => c.scores(x),
            AnyClassifier::Svm(c) => c.scores(x),
        }
    }
}

const MAGIC: &str = "ZSL-CLASSIFIER 1";

/// Text header (`kind`, `classes`) then the parameter matrices as f64
/// feature containers.
pub fn save_classifier(path: impl AsRef<Path>, c: &AnyClassifier) -> Result<()> {
    let (kind, classes, params): (&str, &[usize], Vec<&Tensor>) = match c {
        AnyClassifier::Softmax(s) => ("softmax", s.classes(), s.params.iter().collect()),
        AnyClassifier::Svm(s) => ("svm", s.classes(), vec![&s.w, &s.b]),
    };
    let list: Vec<String> = classes.iter().map(|c| c.to_string()).collect();
    let mut bytes = format!("{MAGIC}\nkind {kind}\nclasses {}\ntensors {}\nend\n", list.join(","), params.len()).into_bytes();
    for p in params {
        bytes.extend(binary::encode_matrix(TableKind::Features, p, VERSION_F64)?);
    }
    binary::write(path.as_ref(), &bytes)
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<AnyClassifier> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let bad = |d: &str| Error::Format { path: origin.clone(), detail: d.to_string() };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let end = bytes.windows(4).position(|w| w == b"end\n").ok_or_else(|| bad("no end of header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let lines: Vec<&str> = header.lines().collect();
    let [magic, kind, classes, tensors] = lines.as_slice() else { return Err(bad("header needs 4 lines")) };
    if *magic != MAGIC {
        return Err(bad("not a classifier file"));
    }
    let classes: Vec<usize> = classes
        .strip_prefix("classes ")
        .ok_or_else(|| bad("missing classes"))?
        .split(',')
        .map(|s| s.parse().map_err(|_| bad("bad class id")))
        .collect::<Result<_>>()?;
    let n: usize = tensors
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad tensor count"))?;
    let mut rest = &bytes[end + 4..];
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let (t, tail) = binary::decode_matrix_prefix(rest, TableKind::Features, &origin)?;
        params.push(t);
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    match *kind {
        "kind softmax" => {
            let params: [Tensor; 4] = params.try_into().map_err(|_| bad("softmax needs 4 tensors"))?;
            Ok(AnyClassifier::Softmax(SoftmaxClassifier::from_parts(classes, params)?))
        }
        "kind svm" => {
            let [w, b]: [Tensor; 2] = params.try_into().map_err(|_| bad("svm needs 2 tensors"))?;
            Ok(AnyClassifier::Svm(SvmClassifier::from_parts(classes, w, b)?))
        }
        _ => Err(bad("unknown classifier kind")),
    }
}
