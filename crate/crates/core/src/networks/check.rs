//! Finite-difference checks through whole network compositions.

use crate::autodiff::{grad_check, GradCheckReport, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::networks::arch::{Architecture, Group};
use crate::networks::forward::{self, Net, NormMode};
use crate::networks::state::ModelState;
use crate::rng::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Composite {
    /// Projector → modulators → generator → critic.
    Critic,
    /// Generator → auxiliary classifier cross-entropy.
    Classifier,
    /// Generator → attribute decoder reconstruction error.
    Decoder,
}

impl Composite {
    pub const ALL: [Composite; 3] = [Composite::Critic, Composite::Classifier, Composite::Decoder];

    pub fn name(self) -> &'static str {
        match self {
            Composite::Critic => "AP>AM>G>D",
            Composite::Classifier => "G>C",
            Composite::Decoder => "G>AD",
        }
    }
}

/// Small widths so a full check touches every parameter in well under a second.
pub fn small_architecture() -> Architecture {
    Architecture {
        z_dim: 3,
        g_hidden: vec![7],
        d_hidden: vec![6],
        ad_hidden: vec![5],
        ap_hidden: vec![5],
        embed_dim: 4,
        am_hidden: 5,
        ..Architecture::new(4, 6, 3)
    }
}

/// Checks one composition at a random parameter point drawn from `seed`.
/// Dropout masks and the batch are frozen; batch norm runs in training mode.
/// Points where a LeakyReLU input sits within ten probe steps of zero are
/// redrawn (up to 50 times) since central differences are meaningless there.
pub fn check_composite(arch: &Architecture, kind: Composite, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    for attempt in 0..50 {
        let report = check_once(arch, kind, seed.wrapping_mul(1000).wrapping_add(attempt), tolerance)?;
        if report.smooth() {
            return Ok(report);
        }
    }
    Err(Error::invalid(format!("no kink-free point found for {}", kind.name())))
}

fn check_once(arch: &Architecture, kind: Composite, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let seen: Vec<usize> = (0..arch.n_seen).collect();
    let state = ModelState::init(arch.clone(), seen, seed)?;
    let mut r = rng::stream(seed, Purpose::Test, 0, 0);
    let batch = 4;
    let task_attrs = rng::normal(&mut r, 3, arch.attr_dim, 1.0);
    let labels: Vec<usize> = (0..batch).map(|i| i % 3).collect();
    let a = task_attrs.select_rows(&labels);
    let z = rng::normal(&mut r, batch, arch.z_dim, 1.0);
    let real = rng::normal(&mut r, batch, arch.feat_dim, 1.0);
    let d_masks: Vec<Tensor> = arch.d_hidden.iter().map(|&h| rng::keep_mask(&mut r, batch, h, arch.dropout)).collect();
    let ad_masks: Vec<Tensor> = arch.ad_hidden.iter().map(|&h| rng::keep_mask(&mut r, batch, h, arch.dropout)).collect();
    // Classifier labels are positions in the seen list.
    let cls: Vec<usize> = labels.iter().map(|&l| l % arch.n_seen).collect();

    let mut groups = vec![Group::Modulation, Group::GenClass];
    if kind == Composite::Critic {
        groups.push(Group::Discriminator);
    }
    let checked: Vec<usize> = (0..state.params.len()).filter(|&i| groups.contains(&state.layout.specs[i].group)).collect();
    let inputs: Vec<Tensor> = checked.iter().map(|&i| state.params[i].clone()).collect();

    let f = |tape: &mut Tape, vs: &[Var]| -> Result<Var> {
        let mut vars: Vec<Var> = Vec::with_capacity(state.params.len());
        let mut next = 0;
        for (i, p) in state.params.iter().enumerate() {
            if checked.get(next) == Some(&i) {
                vars.push(vs[next]);
                next += 1;
            } else {
                vars.push(tape.constant(p.clone()));
            }
        }
        let net = Net { arch: &state.arch, layout: &state.layout, vars: &vars };
        let attrs = tape.constant(task_attrs.clone());
        let e = forward::project(tape, &net, attrs)?;
        let mods = forward::modulation(tape, &net, e)?;
        let av = tape.constant(a.clone());
        let zv = tape.constant(z.clone());
        let (x, _) = forward::generate(tape, &net, av, zv, &mods, &NormMode::Batch)?;
        match kind {
            Composite::Critic => {
                let rv = tape.constant(real.clone());
                let sr = forward::discriminate(tape, &net, rv, av, Some(&d_masks))?;
                let sf = forward::discriminate(tape, &net, x, av, Some(&d_masks))?;
                let (mr, mf) = (tape.mean(sr)?, tape.mean(sf)?);
                tape.sub(mr, mf)
            }
            Composite::Classifier => {
                let logits = forward::classify(tape, &net, x)?;
                tape.softmax_cross_entropy(logits, &cls)
            }
            Composite::Decoder => {
                let rec = forward::reconstruct(tape, &net, x, Some(&ad_masks))?;
                let diff = tape.sub(rec, av)?;
                let sq = tape.squared_l2(diff)?;
                tape.mean(sq)
            }
        }
    };
    grad_check(f, &inputs, crate::autodiff::gradcheck::DEFAULT_STEP, tolerance)
}
