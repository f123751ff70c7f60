//! Central finite-difference verification of tape gradients.

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over all checked entries of `|analytic - numeric| / max(|analytic|, |numeric|, 1)`.
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    /// See [`Tape::kink_margin`]; below `step` the numeric side straddles a breakpoint.
    pub kink_margin: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    /// True when no ReLU/clamp input sat within a few probe steps of its kink.
    pub fn smooth(&self) -> bool {
        self.kink_margin > 10.0 * self.step
    }
}

/// Compares reverse-mode gradients of `f` with respect to every entry of
/// every input against central differences. `f` must be deterministic.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();
    let kink_margin = tape.kink_margin();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|p| t.leaf(p.clone(), false)).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };

    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut max_rel_error = 0.0;
    let mut worst = (0, 0);
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let base = input.data()[k];
            probe[i].data_mut()[k] = base + step;
            let up = eval(&probe)?;
            probe[i].data_mut()[k] = base - step;
            let down = eval(&probe)?;
            probe[i].data_mut()[k] = base;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if rel > max_rel_error {
                max_rel_error = rel;
                worst = (i, k);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error, worst, checked, kink_margin, step, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layer_is_exact_to_roundoff() {
        let x = Tensor::from_fn(4, 3, |r, c| (r as f64 - c as f64) * 0.3);
        let w = Tensor::from_fn(3, 2, |r, c| 0.1 * (r + 2 * c) as f64 - 0.2);
        let b = Tensor::row_vector(vec![0.05, -0.1]);
        let report = grad_check(
            |t, v| {
                let y = t.affine(v[0], v[1], v[2])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            },
            &[x, w, b],
            DEFAULT_STEP,
            1e-7,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 12 + 6 + 2);
    }

    #[test]
    fn kink_at_probe_point_is_flagged() {
        // relu'(0) is taken as 0 while the central difference sees 0.5.
        let x = Tensor::row_vector(vec![0.0]);
        let report = grad_check(|t, v| {
            let r = t.relu(v[0])?;
            t.sum(r)
        }, &[x], DEFAULT_STEP, 1e-5)
        .unwrap();
        assert!(!report.smooth());
        assert!(!report.passed());
    }
}
