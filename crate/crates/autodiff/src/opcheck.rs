//! Randomized finite-difference sweep over every [`OpSpec`] kind.
//!
//! Each case draws a random shape (every dimension in `3..=8`), random inputs
//! kept away from the op's non-differentiable points, and reduces the op
//! output to a scalar through a fixed random projection so the upstream
//! gradient is not uniform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{grad_check_with, GradCheckOptions};
use crate::tape::{OpSpec, Tape, Var};
use crate::tensor::Tensor;

/// Worst relative error seen for one op kind.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheckResult {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
}

impl OpCheckResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub const OP_NAMES: &[&str] = &[
    "matmul",
    "conv1d",
    "relu",
    "tanh",
    "batchnorm1d",
    "softmax",
    "log_softmax",
    "mean",
    "mean_last",
    "sum_last",
    "expand_last",
    "concat",
    "l2_normalize",
    "add",
    "sub",
    "mul",
    "add_bias",
    "mul_scalar",
    "add_scalar",
    "square",
    "sqrt",
    "clamp_min",
    "transpose",
    "slice_rows",
    "nll_mean",
    "aam_margin",
    "grad_reverse",
];

struct Case {
    op: OpSpec<f64>,
    inputs: Vec<Tensor<f64>>,
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(3..=8)
}

fn shape(rng: &mut ChaCha8Rng, min_rank: usize, max_rank: usize) -> Vec<usize> {
    let rank = rng.gen_range(min_rank..=max_rank);
    (0..rank).map(|_| dim(rng)).collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v).expect("shape")
}

/// Values with magnitude in `[lo, hi)` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &v).expect("shape")
}

fn make_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let u = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, -1.0, 1.0);
    match name {
        "matmul" => {
            let (m, k, n) = (dim(rng), dim(rng), dim(rng));
            Case {
                op: OpSpec::MatMul,
                inputs: vec![u(rng, &[m, k]), u(rng, &[k, n])],
            }
        }
        "conv1d" => {
            let (n, ci, co) = (dim(rng), dim(rng), dim(rng));
            let k = rng.gen_range(1..=3);
            let dilation = rng.gen_range(1..=3);
            let padding = rng.gen_range(0..=2);
            let span = dilation * (k - 1) + 1;
            let t = dim(rng).max(span);
            let mut inputs = vec![u(rng, &[n, ci, t]), u(rng, &[co, ci, k])];
            if rng.gen_bool(0.5) {
                inputs.push(u(rng, &[co]));
            }
            Case {
                op: OpSpec::Conv1d { padding, dilation },
                inputs,
            }
        }
        "relu" => {
            let s = shape(rng, 1, 3);
            Case {
                op: OpSpec::Relu,
                inputs: vec![away_from_zero(rng, &s, 0.05, 1.0)],
            }
        }
        "tanh" => {
            let s = shape(rng, 1, 3);
            Case {
                op: OpSpec::Tanh,
                inputs: vec![uniform(rng, &s, -2.0, 2.0)],
            }
        }
        "batchnorm1d" => {
            let s = shape(rng, 2, 3);
            let c = s[1];
            let running = rng.gen_bool(0.3).then(|| {
                let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
                (mean, var)
            });
            Case {
                op: OpSpec::BatchNorm1d { eps: 1e-5, running },
                inputs: vec![
                    uniform(rng, &s, -2.0, 2.0),
                    uniform(rng, &[c], 0.5, 1.5),
                    u(rng, &[c]),
                ],
            }
        }
        "softmax" | "log_softmax" | "l2_normalize" | "mean" | "mean_last" | "sum_last" => {
            let s = shape(rng, 1, 3);
            let op = match name {
                "softmax" => OpSpec::Softmax,
                "log_softmax" => OpSpec::LogSoftmax,
                "l2_normalize" => OpSpec::L2Normalize,
                "mean" => OpSpec::Mean,
                "mean_last" => OpSpec::MeanLast,
                _ => OpSpec::SumLast,
            };
            Case {
                op,
                inputs: vec![uniform(rng, &s, -2.0, 2.0)],
            }
        }
        "expand_last" => {
            let s = shape(rng, 1, 2);
            Case {
                op: OpSpec::ExpandLast(dim(rng)),
                inputs: vec![u(rng, &s)],
            }
        }
        "concat" => {
            let s = shape(rng, 1, 3);
            let axis = rng.gen_range(0..s.len());
            let parts = rng.gen_range(2..=3);
            let inputs = (0..parts)
                .map(|_| {
                    let mut p = s.clone();
                    p[axis] = dim(rng);
                    u(rng, &p)
                })
                .collect();
            Case {
                op: OpSpec::Concat { axis },
                inputs,
            }
        }
        "add" | "sub" | "mul" => {
            let s = shape(rng, 1, 3);
            let op = match name {
                "add" => OpSpec::Add,
                "sub" => OpSpec::Sub,
                _ => OpSpec::Mul,
            };
            Case {
                op,
                inputs: vec![u(rng, &s), u(rng, &s)],
            }
        }
        "add_bias" => {
            let s = shape(rng, 2, 3);
            let c = s[1];
            Case {
                op: OpSpec::AddBias,
                inputs: vec![u(rng, &s), u(rng, &[c])],
            }
        }
        "mul_scalar" | "add_scalar" | "square" => {
            let s = shape(rng, 1, 3);
            let k = rng.gen_range(-3.0..3.0);
            let op = match name {
                "mul_scalar" => OpSpec::MulScalar(k),
                "add_scalar" => OpSpec::AddScalar(k),
                _ => OpSpec::Square,
            };
            Case {
                op,
                inputs: vec![u(rng, &s)],
            }
        }
        "sqrt" => {
            let s = shape(rng, 1, 3);
            Case {
                op: OpSpec::Sqrt,
                inputs: vec![uniform(rng, &s, 0.2, 2.0)],
            }
        }
        "clamp_min" => {
            let s = shape(rng, 1, 3);
            // values sit at least 0.05 from the clamp point
            let shifted = away_from_zero(rng, &s, 0.05, 1.0);
            let lo = rng.gen_range(-0.5..0.5);
            let data: Vec<f64> = shifted.data().iter().map(|v| v + lo).collect();
            Case {
                op: OpSpec::ClampMin(lo),
                inputs: vec![Tensor::from_f64(&s, &data).expect("shape")],
            }
        }
        "transpose" => {
            let (r, c) = (dim(rng), dim(rng));
            Case {
                op: OpSpec::Transpose,
                inputs: vec![u(rng, &[r, c])],
            }
        }
        "slice_rows" => {
            let s = shape(rng, 1, 3);
            let start = rng.gen_range(0..s[0] - 1);
            let end = rng.gen_range(start + 1..=s[0]);
            Case {
                op: OpSpec::SliceRows { start, end },
                inputs: vec![u(rng, &s)],
            }
        }
        "nll_mean" => {
            let (r, c) = (dim(rng), dim(rng));
            let labels = (0..r).map(|_| rng.gen_range(0..c)).collect();
            Case {
                op: OpSpec::NllMean { labels },
                inputs: vec![uniform(rng, &[r, c], -3.0, 0.0)],
            }
        }
        "aam_margin" => {
            let (r, c) = (dim(rng), dim(rng));
            let labels: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
            let margin: f64 = rng.gen_range(0.05..0.5);
            let threshold = (std::f64::consts::PI - margin).cos();
            let n = r * c;
            let data: Vec<f64> = (0..n)
                .map(|_| loop {
                    let v: f64 = rng.gen_range(-0.999..0.95);
                    if (v - threshold).abs() > 1e-2 {
                        break v;
                    }
                })
                .collect();
            Case {
                op: OpSpec::AamMargin { labels, margin },
                inputs: vec![Tensor::from_f64(&[r, c], &data).expect("shape")],
            }
        }
        "grad_reverse" => {
            let s = shape(rng, 1, 3);
            Case {
                op: OpSpec::GradReverse {
                    lambda: rng.gen_range(0.1..10.0),
                },
                inputs: vec![u(rng, &s)],
            }
        }
        other => panic!("no generator for op `{other}`"),
    }
}

/// Reduces `y` to a scalar with a projection derived from its shape.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(&mut rng, &shape, -1.0, 1.0);
    let r = tape.constant(r);
    let prod = tape.apply(OpSpec::Mul, &[y, r])?;
    tape.apply(OpSpec::Mean, &[prod])
}

/// Checks `cases` random instances of one op kind at 64-bit precision.
pub fn check_op(name: &'static str, cases: usize, seed: u64, tol: f64) -> Result<OpCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..cases {
        let case = make_case(name, &mut rng);
        let proj_seed = seed ^ ((i as u64 + 1) << 20);
        let op = case.op.clone();
        let report = grad_check_with(
            |tape, vars| {
                let y = tape.apply(op.clone(), vars)?;
                project(tape, y, proj_seed)
            },
            &case.inputs,
            GradCheckOptions::for_type::<f64>(tol),
        )?;
        let err = match case.op {
            // Finite differences see the identity forward; the tape must
            // report exactly -lambda times that.
            OpSpec::GradReverse { lambda } => report
                .elements
                .iter()
                .map(|e| {
                    let want = -lambda * e.numeric;
                    (e.analytic - want).abs() / e.analytic.abs().max(want.abs()).max(1e-3)
                })
                .fold(0.0, f64::max),
            _ => report.max_rel_err(),
        };
        worst = worst.max(err);
    }
    Ok(OpCheckResult {
        op: name,
        cases,
        max_rel_err: worst,
    })
}

/// Runs [`check_op`] for every op kind.
pub fn check_all_ops(cases: usize, seed: u64, tol: f64) -> Result<Vec<OpCheckResult>> {
    OP_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| check_op(name, cases, seed.wrapping_add(i as u64 * 7919), tol))
        .collect()
}
