use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parameter groups updated together by the trainer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Critic.
    Discriminator,
    /// Projector, modulator heads and attribute decoder.
    Modulation,
    /// Generator and auxiliary classifier.
    GenClass,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Discriminator, Group::Modulation, Group::GenClass];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Discriminator => "d",
            Group::Modulation => "am",
            Group::GenClass => "gc",
        }
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d" => Ok(Group::Discriminator),
            "am" => Ok(Group::Modulation),
            "gc" => Ok(Group::GenClass),
            _ => Err(Error::invalid(format!("unknown parameter group {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operator {
    Plus,
    Minus,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Softmax,
    None,
}

/// One cell of the modulation ablation grid:
/// `gain = base ? 1 ± act(w) : act(w)`, `out = gain ∘ o + (bias ? act(b) : 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModVariant {
    pub base: bool,
    pub operator: Operator,
    pub activation: Activation,
    pub bias: bool,
}

impl Default for ModVariant {
    fn default() -> Self {
        ModVariant { base: true, operator: Operator::Plus, activation: Activation::Sigmoid, bias: true }
    }
}

impl fmt::Display for ModVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = if self.base { "base" } else { "nobase" };
        let op = match self.operator {
            Operator::Plus => "+",
            Operator::Minus => "-",
            Operator::None => "none",
        };
        let act = match self.activation {
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::None => "none",
        };
        let bias = if self.bias { "bias" } else { "nobias" };
        write!(f, "{base},{op},{act},{bias}")
    }
}

impl FromStr for ModVariant {
    type Err = Error;

    /// Parses `base|nobase , +|-|none , sigmoid|softmax|none , bias|nobias`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::invalid(format!("modulation variant {s:?}: expected e.g. \"base,+,sigmoid,bias\""));
        let [base, op, act, bias] = parts.as_slice() else { return Err(bad()) };
        let base = match *base {
            "base" => true,
            "nobase" => false,
            _ => return Err(bad()),
        };
        let operator = match *op {
            "+" => Operator::Plus,
            "-" => Operator::Minus,
            "none" => Operator::None,
            _ => return Err(bad()),
        };
        let activation = match *act {
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            "none" => Activation::None,
            _ => return Err(bad()),
        };
        let bias = match *bias {
            "bias" => true,
            "nobias" => false,
            _ => return Err(bad()),
        };
        if base == (operator == Operator::None) {
            return Err(Error::invalid(format!(
                "modulation variant {s:?}: the operator combines the base with the gain, so it is required with base and meaningless without"
            )));
        }
        Ok(ModVariant { base, operator, activation, bias })
    }
}

/// Sizes and per-layer choices for all six networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub attr_dim: usize,
    pub feat_dim: usize,
    /// Output width of the auxiliary classifier.
    pub n_seen: usize,
    pub z_dim: usize,
    pub g_hidden: Vec<usize>,
    pub d_hidden: Vec<usize>,
    pub ad_hidden: Vec<usize>,
    pub ap_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub am_hidden: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub variant: ModVariant,
    /// Also modulate the generator's linear output.
    pub modulate_output: bool,
}

impl Architecture {
    /// Default widths for the given data dimensions; `z_dim` follows `attr_dim`.
    pub fn new(attr_dim: usize, feat_dim: usize, n_seen: usize) -> Self {
        Architecture {
            attr_dim,
            feat_dim,
            n_seen,
            z_dim: attr_dim,
            g_hidden: vec![512],
            d_hidden: vec![512],
            ad_hidden: vec![256],
            ap_hidden: vec![256],
            embed_dim: 128,
            am_hidden: 128,
            leaky_slope: 0.5,
            dropout: 0.5,
            bn_momentum: 0.8,
            variant: ModVariant::default(),
            modulate_output: false,
        }
    }

    /// Widths of the generator activations that get modulated: the input
    /// `(z, a)`, each hidden layer, and optionally the output.
    pub fn modulated_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.z_dim + self.attr_dim];
        dims.extend(&self.g_hidden);
        if self.modulate_output {
            dims.push(self.feat_dim);
        }
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("attr_dim", self.attr_dim),
            ("feat_dim", self.feat_dim),
            ("n_seen", self.n_seen),
            ("z_dim", self.z_dim),
            ("embed_dim", self.embed_dim),
            ("am_hidden", self.am_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        let lists = [
            ("g_hidden", &self.g_hidden),
            ("d_hidden", &self.d_hidden),
            ("ad_hidden", &self.ad_hidden),
            ("ap_hidden", &self.ap_hidden),
        ];
        for (name, l) in lists {
            if l.contains(&0) {
                return Err(Error::invalid(format!("{name} has a zero width")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid(format!("bn_momentum {} outside [0, 1]", self.bn_momentum)));
        }
        Ok(())
    }

    /// Canonical one-line description; equal architectures give equal text.
    pub fn describe(&self) -> String {
        let list = |l: &[usize]| l.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("-");
        format!(
            "attr_dim={} feat_dim={} n_seen={} z_dim={} g_hidden={} d_hidden={} ad_hidden={} ap_hidden={} \
             embed_dim={} am_hidden={} leaky_slope={} dropout={} bn_momentum={} variant={} modulate_output={}",
            self.attr_dim,
            self.feat_dim,
            self.n_seen,
            self.z_dim,
            list(&self.g_hidden),
            list(&self.d_hidden),
            list(&self.ad_hidden),
            list(&self.ap_hidden),
            self.embed_dim,
            self.am_hidden,
            self.leaky_slope,
            self.dropout,
            self.bn_momentum,
            self.variant,
            self.modulate_output
        )
    }

    pub fn parse_description(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::invalid(format!("architecture description: {detail}"));
        let mut arch = Architecture::new(1, 1, 1);
        let mut seen = 0;
        for field in text.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("{field:?} is not key=value")))?;
            let count = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("{k}: {v:?} is not a count")));
            let list = |v: &str| -> Result<Vec<usize>> {
                if v.is_empty() {
                    return Ok(Vec::new());
                }
                v.split('-').map(count).collect()
            };
            let real = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("{k}: {v:?} is not a number")));
            match k {
                "attr_dim" => arch.attr_dim = count(v)?,
                "feat_dim" => arch.feat_dim = count(v)?,
                "n_seen" => arch.n_seen = count(v)?,
                "z_dim" => arch.z_dim = count(v)?,
                "g_hidden" => arch.g_hidden = list(v)?,
                "d_hidden" => arch.d_hidden = list(v)?,
                "ad_hidden" => arch.ad_hidden = list(v)?,
                "ap_hidden" => arch.ap_hidden = list(v)?,
                "embed_dim" => arch.embed_dim = count(v)?,
                "am_hidden" => arch.am_hidden = count(v)?,
                "leaky_slope" => arch.leaky_slope = real(v)?,
                "dropout" => arch.dropout = real(v)?,
                "bn_momentum" => arch.bn_momentum = real(v)?,
                "variant" => arch.variant = v.parse()?,
                "modulate_output" => {
                    arch.modulate_output = v.parse().map_err(|_| bad(format!("{k}: {v:?} is not a bool")))?
                }
                _ => return Err(bad(format!("unknown key {k:?}"))),
            }
            seen += 1;
        }
        if seen != 15 {
            return Err(bad(format!("expected 15 fields, found {seen}")));
        }
        arch.validate()?;
        Ok(arch)
    }
}

/// Name, group and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub group: Group,
    pub rows: usize,
    pub cols: usize,
}

/// Positions of one affine layer's weight (`in × out`) and bias (`1 × out`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormIdx {
    pub gamma: usize,
    pub beta: usize,
}

/// Flat parameter list and where each network finds its pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub d: Vec<LinearIdx>,
    pub ap: Vec<LinearIdx>,
    pub am: Vec<Vec<LinearIdx>>,
    pub ad: Vec<LinearIdx>,
    pub g: Vec<LinearIdx>,
    pub g_norm: Vec<NormIdx>,
    pub c: LinearIdx,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn push(&mut self, name: String, group: Group, rows: usize, cols: usize) -> usize {
        self.specs.push(ParamSpec { name, group, rows, cols });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, group: Group, fan_in: usize, fan_out: usize) -> LinearIdx {
        let w = self.push(format!("{prefix}.w"), group, fan_in, fan_out);
        let b = self.push(format!("{prefix}.b"), group, 1, fan_out);
        LinearIdx { w, b }
    }

    fn mlp(&mut self, prefix: &str, group: Group, widths: &[usize]) -> Vec<LinearIdx> {
        widths.windows(2).enumerate().map(|(i, p)| self.linear(&format!("{prefix}.{i}"), group, p[0], p[1])).collect()
    }
}

fn chain(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut w = vec![first];
    w.extend(hidden);
    w.push(last);
    w
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let mut b = Builder { specs: Vec::new() };
        let d = b.mlp("d", Group::Discriminator, &chain(arch.feat_dim + arch.attr_dim, &arch.d_hidden, 1));
        let ap = b.mlp("ap", Group::Modulation, &chain(arch.attr_dim, &arch.ap_hidden, arch.embed_dim));
        let am = arch
            .modulated_dims()
            .iter()
            .enumerate()
            .map(|(j, &dim)| b.mlp(&format!("am{j}"), Group::Modulation, &[arch.embed_dim, arch.am_hidden, 2 * dim]))
            .collect();
        let ad = b.mlp("ad", Group::Modulation, &chain(arch.feat_dim, &arch.ad_hidden, arch.attr_dim));
        let g = b.mlp("g", Group::GenClass, &chain(arch.z_dim + arch.attr_dim, &arch.g_hidden, arch.feat_dim));
        let g_norm = arch
            .g_hidden
            .iter()
            .enumerate()
            .map(|(i, &h)| NormIdx {
                gamma: b.push(format!("g.bn{i}.gamma"), Group::GenClass, 1, h),
                beta: b.push(format!("g.bn{i}.beta"), Group::GenClass, 1, h),
            })
            .collect();
        let c = b.linear("c", Group::GenClass, arch.feat_dim, arch.n_seen);
        Layout { specs: b.specs, d, ap, am, ad, g, g_norm, c }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn group_indices(&self, group: Group) -> Vec<usize> {
        (0..self.specs.len()).filter(|&i| self.specs[i].group == group).collect()
    }

    pub fn n_values(&self) -> usize {
        self.specs.iter().map(|s| s.rows * s.cols).sum()
    }
}
