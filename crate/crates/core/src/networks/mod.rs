//! Projector, modulator heads, generator, critic, auxiliary classifier and
//! attribute decoder, all as plain MLPs over one flat parameter list.

mod arch;
pub mod check;
pub mod forward;
mod state;

pub use arch::{Activation, Architecture, Group, Layout, LinearIdx, ModVariant, NormIdx, Operator, ParamSpec};
pub use state::{Checkpoint, ModelState};

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;

/// Value-level modulation of `o` (B × d) by rows `w`, `b` (1 × d).
pub fn modulate(o: &Tensor, w: &Tensor, b: &Tensor, variant: ModVariant) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (ov, wv, bv) = (tape.constant(o.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let out = forward::modulate(&mut tape, ov, wv, bv, variant)?;
    Ok(tape.value(out).clone())
}
