//! Central finite-difference comparison against tape gradients.
//!
//! Relative error per element is `|analytic - numeric| / max(|analytic|,
//! |numeric|, floor)`; the floor keeps elements with near-zero gradients from
//! dominating the report through cancellation noise.

use crate::error::Result;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    pub floor: f64,
    pub tol: f64,
    /// Check at most this many evenly strided elements per input.
    pub max_per_input: Option<usize>,
}

impl GradCheckOptions {
    /// Step and floor suited to the element type.
    pub fn for_type<T: Real>(tol: f64) -> Self {
        if std::mem::size_of::<T>() >= 8 {
            GradCheckOptions {
                step: 1e-6,
                floor: 1e-3,
                tol,
                max_per_input: None,
            }
        } else {
            GradCheckOptions {
                step: 3e-3,
                floor: 1e-2,
                tol,
                max_per_input: None,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub elements: Vec<ElementCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.elements.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &ElementCheck> {
        self.elements.iter().filter(|e| !(e.rel_err <= self.tol))
    }

    pub fn passed(&self) -> bool {
        self.flagged().next().is_none()
    }

    pub fn worst(&self) -> Option<&ElementCheck> {
        self.elements
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Checks `f` with the default options for `T`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], tol: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    grad_check_with(f, inputs, GradCheckOptions::for_type::<T>(tol))
}

/// `f` receives one tape variable per input and must return a scalar. It is
/// evaluated once with gradients and twice per checked element without.
pub fn grad_check_with<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .map(|&v| grads.get(v).expect("leaf gradient").clone())
        .collect();

    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0].to_f64_lossy())
    };

    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let mut elements = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = match opts.max_per_input {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let orig = input.data()[idx];
            let base = orig.to_f64_lossy();
            work[i].data_mut()[idx] = T::from_f64_lossy(base + opts.step);
            let plus = eval(&work)?;
            work[i].data_mut()[idx] = T::from_f64_lossy(base - opts.step);
            let minus = eval(&work)?;
            work[i].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i].data()[idx].to_f64_lossy();
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            elements.push(ElementCheck {
                input: i,
                index: idx,
                analytic: a,
                numeric,
                rel_err: (a - numeric).abs() / denom,
            });
        }
    }
    Ok(GradCheckReport {
        tol: opts.tol,
        elements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::OpSpec;

    #[test]
    fn identity_like_program_has_zero_error() {
        // sum(x) has gradient exactly one everywhere
        let x = Tensor::<f64>::from_f64(&[4], &[0.1, -0.2, 0.3, 0.4]).unwrap();
        let report = grad_check(|t, v| t.apply(OpSpec::SumLast, &[v[0]]), &[x], 1e-9).unwrap();
        assert!(report.max_rel_err() < 1e-9, "{}", report.max_rel_err());
        assert!(report.passed());
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        // relu at exactly zero: the tape reports 0, the central difference 0.5
        let x = Tensor::<f64>::from_f64(&[1], &[0.0]).unwrap();
        let report = grad_check(
            |t, v| {
                let r = t.apply(OpSpec::Relu, &[v[0]])?;
                t.apply(OpSpec::Mean, &[r])
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert_eq!(report.flagged().count(), 1);
    }
}
