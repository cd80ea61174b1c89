//! Reconstruction, feature-robust, AAM-Softmax and adversarial losses, and
//! the joint objective.
//!
//! The adversarial term enters the backpropagated sum with a plus sign. The
//! domain classifier therefore descends it, while everything upstream of the
//! gradient reversal layer sees `-lambda` times its gradient. The logged
//! total uses the minimax form `rec + fr + cls - lambda * adv`.

use ndal_autodiff::{AutodiffError, OpSpec, Real, Result, Tape, Var};

pub const CSV_HEADER: &str = "step,l_rec,l_fr,l_cls,l_adv,l_total,lambda,lr";

/// Per-element mean squared error `mean((a - b)^2)`, averaged over rows
/// and embedding dimensions.
pub fn loss_rec<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.apply(OpSpec::Sub, &[a, b])?;
    let sq = tape.apply(OpSpec::Square, &[d])?;
    tape.apply(OpSpec::Mean, &[sq])
}

/// Same form as [`loss_rec`], between the clean embedding and the speaker
/// factor.
pub fn loss_fr<T: Real>(tape: &mut Tape<T>, s_c: Var, s_s: Var) -> Result<Var> {
    loss_rec(tape, s_c, s_s)
}

/// AAM-Softmax cross-entropy from cosine logits `[rows, classes]`: the
/// target cosine becomes `cos(theta + margin)`, every logit is scaled by
/// `scale`, and the loss is averaged over rows.
pub fn loss_aam<T: Real>(
    tape: &mut Tape<T>,
    cosines: Var,
    labels: &[usize],
    scale: T,
    margin: T,
) -> Result<Var> {
    let classes = tape.shape(cosines).get(1).copied().unwrap_or(0);
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(AutodiffError::LabelOutOfRange { label: bad, classes });
    }
    let phi = tape.apply(
        OpSpec::AamMargin {
            labels: labels.to_vec(),
            margin,
        },
        &[cosines],
    )?;
    let logits = tape.apply(OpSpec::MulScalar(scale), &[phi])?;
    let logp = tape.apply(OpSpec::LogSoftmax, &[logits])?;
    tape.apply(
        OpSpec::NllMean {
            labels: labels.to_vec(),
        },
        &[logp],
    )
}

/// Softmax cross-entropy of the domain logits `[rows, 2]` against raw (0)
/// / augmented (1) labels.
pub fn loss_adv<T: Real>(tape: &mut Tape<T>, logits: Var, aug_labels: &[usize]) -> Result<Var> {
    if let Some(&bad) = aug_labels.iter().find(|&&l| l > 1) {
        return Err(AutodiffError::LabelOutOfRange { label: bad, classes: 2 });
    }
    let logp = tape.apply(OpSpec::LogSoftmax, &[logits])?;
    tape.apply(
        OpSpec::NllMean {
            labels: aug_labels.to_vec(),
        },
        &[logp],
    )
}

/// The scalar that is actually differentiated: the plain sum of the
/// present terms.
pub fn backprop_sum<T: Real>(tape: &mut Tape<T>, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms.split_first().ok_or(AutodiffError::EmptyTape)?;
    rest.iter()
        .try_fold(first, |acc, &t| tape.apply(OpSpec::Add, &[acc, t]))
}

/// Reported loss values for one step. Absent terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_rec: f64,
    pub l_fr: f64,
    pub l_cls: f64,
    pub l_adv: f64,
    pub l_total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(l_rec: f64, l_fr: f64, l_cls: f64, l_adv: f64, lambda: f64) -> Self {
        LossBreakdown {
            l_rec,
            l_fr,
            l_cls,
            l_adv,
            l_total: Self::total(l_rec, l_fr, l_cls, l_adv, lambda),
            lambda,
        }
    }

    /// `l_rec + l_fr + l_cls - lambda * l_adv`, evaluated left to right.
    pub fn total(l_rec: f64, l_fr: f64, l_cls: f64, l_adv: f64, lambda: f64) -> f64 {
        l_rec + l_fr + l_cls - lambda * l_adv
    }

    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_fr, self.l_cls, self.l_adv, self.l_total, self.lambda]
            .iter()
            .all(|v| v.is_finite())
    }

    /// One CSV row in [`CSV_HEADER`] order. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn csv_row(&self, step: u64, lr: f64) -> String {
        format!(
            "{step},{},{},{},{},{},{},{lr}",
            self.l_rec, self.l_fr, self.l_cls, self.l_adv, self.l_total, self.lambda
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndal_autodiff::Tensor;

    fn tape_with(values: &[(&[usize], Vec<f64>)]) -> (Tape<f64>, Vec<Var>) {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|(s, v)| tape.leaf(Tensor::from_f64(s, v).unwrap()))
            .collect();
        (tape, vars)
    }

    fn value(tape: &Tape<f64>, v: Var) -> f64 {
        tape.value(v).item().unwrap()
    }

    #[test]
    fn rec_conventions() {
        let (mut t, v) = tape_with(&[(&[1, 192], vec![0.0; 192]), (&[1, 192], vec![1.0; 192])]);
        let l = loss_rec(&mut t, v[0], v[1]).unwrap();
        assert_eq!(value(&t, l), 1.0);
        let l = loss_rec(&mut t, v[1], v[1]).unwrap();
        assert_eq!(value(&t, l), 0.0);

        let a = vec![0.3, -1.2, 2.0, 0.5, 0.0, 4.0];
        let b = vec![1.0, 1.0, -1.0, 0.5, 2.0, 3.5];
        let want = a.iter().zip(&b).map(|(x, y): (&f64, &f64)| (x - y).powi(2)).sum::<f64>() / 6.0;
        let (mut t, v) = tape_with(&[(&[2, 3], a), (&[2, 3], b)]);
        let ab = loss_rec(&mut t, v[0], v[1]).unwrap();
        let ba = loss_fr(&mut t, v[1], v[0]).unwrap();
        assert!((value(&t, ab) - want).abs() < 1e-12);
        assert_eq!(value(&t, ab), value(&t, ba));
    }

    #[test]
    fn adv_cases() {
        let (mut t, v) = tape_with(&[(&[2, 2], vec![0.0; 4]), (&[2, 2], vec![20.0, -20.0, -20.0, 20.0])]);
        let l = loss_adv(&mut t, v[0], &[0, 1]).unwrap();
        assert!((value(&t, l) - std::f64::consts::LN_2).abs() < 1e-12);
        let l = loss_adv(&mut t, v[1], &[0, 1]).unwrap();
        assert!(value(&t, l) < 1e-15);
        assert!(loss_adv(&mut t, v[0], &[0, 2]).is_err());
    }

    #[test]
    fn aam_hand_computed_two_class_case() {
        // embedding aligned with class 0, the other class row at 60 degrees
        let c2 = 0.5f64;
        let (mut t, v) = tape_with(&[(&[1, 2], vec![1.0, c2])]);
        let l = loss_aam(&mut t, v[0], &[0], 30.0, 0.2).unwrap();
        let target = (30.0 * 0.2f64.cos()).exp();
        let want = -(target / (target + (30.0 * c2).exp())).ln();
        assert!((value(&t, l) - want).abs() < 1e-9);
        assert!(matches!(
            loss_aam(&mut t, v[0], &[2], 30.0, 0.2),
            Err(AutodiffError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn aam_decreases_with_target_cosine() {
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let cos = -0.95 + 0.1 * k as f64;
            let (mut t, v) = tape_with(&[(&[1, 3], vec![cos, 0.1, -0.3])]);
            let l = loss_aam(&mut t, v[0], &[0], 30.0, 0.2).unwrap();
            let cur = value(&t, l);
            assert!(cur < last, "cos {cos}: {cur} !< {last}");
            last = cur;
        }
    }

    #[test]
    fn breakdown_identity_and_csv() {
        let b = LossBreakdown::new(0.1, 0.2, 3.0, 0.69, 0.5);
        assert_eq!(b.l_total, 0.1 + 0.2 + 3.0 - 0.5 * 0.69);
        let row = b.csv_row(7, 1e-3);
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), CSV_HEADER.split(',').count());
        assert_eq!(cols[5], LossBreakdown::total(cols[1], cols[2], cols[3], cols[4], cols[6]));
        assert_eq!(LossBreakdown::new(0.0, 0.0, 0.0, 0.0, 1.0).l_total, 0.0);
    }
}
