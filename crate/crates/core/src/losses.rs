//! Training objectives: attribute reconstruction, critic, and the
//! generator-classifier composite.

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Term coefficients of the generator-classifier objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub adversarial: f64,
    pub reconstruction: f64,
    pub classification: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { adversarial: 1.0, reconstruction: 1.0, classification: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_d: f64,
    pub l_ad: f64,
    pub l_cls: f64,
    pub l_g: f64,
    /// Weighted sum of `l_g`, `l_ad` and `l_cls`.
    pub l_gc: f64,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [self.l_d, self.l_ad, self.l_cls, self.l_g, self.l_gc].iter().all(|v| v.is_finite())
    }

    /// Elementwise sum, for averaging over tasks.
    pub fn accumulate(&mut self, other: &LossReport) {
        self.l_d += other.l_d;
        self.l_ad += other.l_ad;
        self.l_cls += other.l_cls;
        self.l_g += other.l_g;
        self.l_gc += other.l_gc;
    }

    pub fn scaled(&self, s: f64) -> LossReport {
        LossReport {
            l_d: self.l_d * s,
            l_ad: self.l_ad * s,
            l_cls: self.l_cls * s,
            l_g: self.l_g * s,
            l_gc: self.l_gc * s,
        }
    }
}

/// Mean over rows of `‖a − a′‖²`.
pub fn loss_ad<T: Real>(tape: &mut Tape<T>, a: Var, rec: Var) -> Result<Var> {
    let diff = tape.sub(rec, a)?;
    let sq = tape.squared_l2(diff)?;
    tape.mean(sq)
}

/// `mean(real) − mean(fake)`; the critic ascends this.
pub fn loss_d<T: Real>(tape: &mut Tape<T>, real: Var, fake: Var) -> Result<Var> {
    if tape.value(real).is_empty() || tape.value(fake).is_empty() {
        return Err(Error::invalid("critic loss needs nonempty score vectors"));
    }
    let mr = tape.mean(real)?;
    let mf = tape.mean(fake)?;
    tape.sub(mr, mf)
}

/// Tape nodes of the generator-classifier objective and its terms.
#[derive(Clone, Copy, Debug)]
pub struct GcTerms {
    pub l_g: Var,
    pub l_ad: Var,
    pub l_cls: Var,
    pub l_gc: Var,
}

/// `l_g = −mean(fake)`, `l_ad` as [`loss_ad`], `l_cls` = mean cross entropy
/// against positions in the classifier's label space.
pub fn loss_gc<T: Real>(
    tape: &mut Tape<T>,
    fake: Var,
    a: Var,
    rec: Var,
    logits: Var,
    labels: &[usize],
    weights: LossWeights,
) -> Result<GcTerms> {
    let mf = tape.mean(fake)?;
    let l_g = tape.scale(mf, -1.0)?;
    let l_ad = loss_ad(tape, a, rec)?;
    let l_cls = tape.softmax_cross_entropy(logits, labels)?;
    let wg = tape.scale(l_g, weights.adversarial)?;
    let wa = tape.scale(l_ad, weights.reconstruction)?;
    let wc = tape.scale(l_cls, weights.classification)?;
    let s = tape.add(wg, wa)?;
    let l_gc = tape.add(s, wc)?;
    Ok(GcTerms { l_g, l_ad, l_cls, l_gc })
}

/// Value-level [`loss_ad`].
pub fn loss_ad_value(a: &Tensor, rec: &Tensor) -> Result<f64> {
    let mut t = Tape::new();
    let (av, rv) = (t.constant(a.clone()), t.constant(rec.clone()));
    let l = loss_ad(&mut t, av, rv)?;
    Ok(t.value(l).item())
}

/// Value-level [`loss_d`].
pub fn loss_d_value(real: &Tensor, fake: &Tensor) -> Result<f64> {
    let mut t = Tape::new();
    let (r, f) = (t.constant(real.clone()), t.constant(fake.clone()));
    let l = loss_d(&mut t, r, f)?;
    Ok(t.value(l).item())
}

/// Value-level [`loss_gc`] as a report (with `l_d` left at 0).
pub fn loss_gc_value(
    fake: &Tensor,
    a: &Tensor,
    rec: &Tensor,
    logits: &Tensor,
    labels: &[usize],
    weights: LossWeights,
) -> Result<LossReport> {
    let mut t = Tape::new();
    let f = t.constant(fake.clone());
    let av = t.constant(a.clone());
    let rv = t.constant(rec.clone());
    let lv = t.constant(logits.clone());
    let g = loss_gc(&mut t, f, av, rv, lv, labels, weights)?;
    Ok(LossReport {
        l_d: 0.0,
        l_g: t.value(g.l_g).item(),
        l_ad: t.value(g.l_ad).item(),
        l_cls: t.value(g.l_cls).item(),
        l_gc: t.value(g.l_gc).item(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::rng::{self, Purpose};

    fn loop_ad(a: &Tensor, r: &Tensor) -> f64 {
        let mut total = 0.0;
        for i in 0..a.rows() {
            let mut s = 0.0;
            for j in 0..a.cols() {
                let d = a.get(i, j) - r.get(i, j);
                s += d * d;
            }
            total += s;
        }
        total / a.rows() as f64
    }

    #[test]
    fn reconstruction_examples() {
        let a = Tensor::row_vector(vec![1.0, 0.0]);
        assert_eq!(loss_ad_value(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_ad_value(&a, &Tensor::zeros(1, 2)).unwrap(), 1.0);
        assert!(loss_ad_value(&a, &Tensor::zeros(1, 3)).is_err());
        let mut r = rng::stream(0, Purpose::Test, 0, 0);
        for _ in 0..50 {
            let a = rng::normal(&mut r, 7, 5, 1.0);
            let b = rng::normal(&mut r, 7, 5, 1.0);
            assert!((loss_ad_value(&a, &b).unwrap() - loop_ad(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_examples() {
        let c = Tensor::full(3, 1, 0.7);
        assert_eq!(loss_d_value(&c, &c).unwrap(), 0.0);
        assert_eq!(loss_d_value(&Tensor::full(2, 1, 1.0), &Tensor::zeros(2, 1)).unwrap(), 1.0);
        let real = Tensor::from_vec(3, 1, vec![0.2, -1.0, 3.0]).unwrap();
        let fake = Tensor::from_vec(2, 1, vec![0.5, 0.1]).unwrap();
        let shifted = loss_d_value(&real.map(|v| v + 4.5), &fake.map(|v| v + 4.5)).unwrap();
        assert!((shifted - loss_d_value(&real, &fake).unwrap()).abs() < 1e-12);
        assert!(loss_d_value(&Tensor::zeros(0, 1), &fake).is_err());
    }

    #[test]
    fn generator_classifier_examples() {
        let fake = Tensor::from_vec(2, 1, vec![0.5, 1.5]).unwrap();
        let a = Tensor::full(2, 3, 0.4);
        let confident = Tensor::from_vec(2, 2, vec![800.0, 0.0, 0.0, 800.0]).unwrap();
        let rep = loss_gc_value(&fake, &a, &a, &confident, &[0, 1], LossWeights::default()).unwrap();
        assert_eq!(rep.l_gc, -1.0);
        let uniform = Tensor::zeros(2, 10);
        let rep = loss_gc_value(&fake, &a, &a, &uniform, &[3, 9], LossWeights::default()).unwrap();
        assert!((rep.l_cls - 10f64.ln()).abs() < 1e-12);
        assert!(loss_gc_value(&fake, &a, &a, &uniform, &[10, 0], LossWeights::default()).is_err());
    }

    #[test]
    fn decomposition_on_random_inputs() {
        let mut r = rng::stream(1, Purpose::Test, 0, 0);
        for _ in 0..100 {
            let fake = rng::normal(&mut r, 6, 1, 2.0);
            let a = rng::normal(&mut r, 6, 4, 1.0);
            let rec = rng::normal(&mut r, 6, 4, 1.0);
            let logits = rng::normal(&mut r, 6, 5, 3.0);
            let labels = [0, 1, 2, 3, 4, 0];
            let rep = loss_gc_value(&fake, &a, &rec, &logits, &labels, LossWeights::default()).unwrap();
            let l_g = -fake.data().iter().sum::<f64>() / 6.0;
            let mut ce = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = logits.row(i);
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                ce += z.ln() - row[y];
            }
            assert!((rep.l_g - l_g).abs() < 1e-12);
            assert!((rep.l_ad - loop_ad(&a, &rec)).abs() < 1e-12);
            assert!((rep.l_cls - ce / 6.0).abs() < 1e-12);
            assert!((rep.l_gc - (rep.l_g + rep.l_ad + rep.l_cls)).abs() < 1e-12);
            assert!(rep.l_ad >= 0.0 && rep.l_cls >= 0.0 && rep.all_finite());
        }
    }

    #[test]
    fn critic_and_generator_terms_are_antisymmetric_on_fakes() {
        let mut r = rng::stream(2, Purpose::Test, 0, 0);
        let real = rng::normal(&mut r, 4, 1, 1.0);
        let fake = rng::normal(&mut r, 4, 1, 1.0);
        let a = Tensor::zeros(4, 2);
        let logits = Tensor::zeros(4, 3);

        let mut t = Tape::new();
        let rv = t.constant(real);
        let fv = t.leaf(fake.clone(), true);
        let ld = loss_d(&mut t, rv, fv).unwrap();
        t.backward(ld).unwrap();
        let gd = t.grad(fv).unwrap().clone();

        let mut t = Tape::new();
        let fv = t.leaf(fake, true);
        let av = t.constant(a.clone());
        let rec = t.constant(a);
        let lv = t.constant(logits);
        let g = loss_gc(&mut t, fv, av, rec, lv, &[0, 1, 2, 0], LossWeights::default()).unwrap();
        t.backward(g.l_g).unwrap();
        let gg = t.grad(fv).unwrap().clone();
        assert_eq!(gd, gg);
        assert_eq!(gd.data(), &[-0.25; 4]);
    }

    proptest! {
        #[test]
        fn terms_stay_nonnegative(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let a = Tensor::from_vec(2, 3, vals[..6].to_vec()).unwrap();
            let rec = Tensor::from_vec(2, 3, vals[6..].to_vec()).unwrap();
            let logits = Tensor::from_vec(2, 3, vals[..6].to_vec()).unwrap();
            let rep = loss_gc_value(&Tensor::zeros(2, 1), &a, &rec, &logits, &[2, 0], LossWeights::default()).unwrap();
            prop_assert!(rep.l_ad >= 0.0 && rep.l_cls >= 0.0 && rep.all_finite());
        }
    }
}
