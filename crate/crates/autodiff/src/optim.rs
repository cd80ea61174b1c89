//! First-order optimizers with decoupled weight decay.

use std::collections::BTreeMap;

use crate::error::{AutodiffError, Result};
use crate::params::{GradMap, ParamStore};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd|adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            weight_decay: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<T>>,
    pub second_moment: BTreeMap<String, Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    /// Zero moments shaped like every parameter in `params`.
    pub fn new(config: OptimizerConfig, params: &ParamStore<T>) -> Self {
        let zeros: BTreeMap<String, Vec<T>> = match config.kind {
            OptimizerKind::Adam => params
                .iter()
                .map(|(k, v)| (k.to_string(), vec![T::zero(); v.len()]))
                .collect(),
            OptimizerKind::Sgd => BTreeMap::new(),
        };
        OptimizerState {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Updates every parameter in `params` from `grads` and advances the
    /// step counter once.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradMap<T>) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| AutodiffError::MissingGrad(name.to_string()))?;
            if g.shape() != p.shape() {
                return Err(AutodiffError::StaleState(name.to_string()));
            }
            if self.config.kind == OptimizerKind::Adam {
                let ok = |m: &BTreeMap<String, Vec<T>>| m.get(name).is_some_and(|v| v.len() == p.len());
                if !ok(&self.first_moment) || !ok(&self.second_moment) {
                    return Err(AutodiffError::StaleState(name.to_string()));
                }
            }
        }
        let t = self.step + 1;
        let c = self.config;
        let lr = T::from_f64_lossy(c.lr);
        let wd = T::from_f64_lossy(c.weight_decay);
        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let w = p.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (wi, &gi) in w.iter_mut().zip(g) {
                        *wi = *wi - lr * (gi + wd * *wi);
                    }
                }
                OptimizerKind::Adam => {
                    let b1 = T::from_f64_lossy(c.beta1);
                    let b2 = T::from_f64_lossy(c.beta2);
                    let eps = T::from_f64_lossy(c.eps);
                    let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t as i32));
                    let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t as i32));
                    let m = self.first_moment.get_mut(name).expect("checked");
                    let v = self.second_moment.get_mut(name).expect("checked");
                    for i in 0..w.len() {
                        let gi = g[i];
                        m[i] = b1 * m[i] + (T::one() - b1) * gi;
                        v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        w[i] = w[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * w[i]);
                    }
                }
            }
        }
        self.step = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_f64(&[1], &[w]).unwrap());
        s
    }

    fn grad(g: f64) -> GradMap<f64> {
        [("w".to_string(), Tensor::from_f64(&[1], &[g]).unwrap())].into()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut p = single(0.75);
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p);
        for _ in 0..3 {
            st.step(&mut p, &grad(0.0)).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data(), &[0.75]);
        assert_eq!(st.step, 3);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; bias-corrected mhat = 1, vhat = 1, so the move
        // is lr / (1 + eps).
        let mut p = single(1.0);
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p);
        st.step(&mut p, &grad(1.0)).unwrap();
        let w = p.get("w").unwrap().data()[0];
        let want = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((w - want).abs() < 1e-15, "{w}");
    }

    #[test]
    fn consecutive_identical_calls_differ() {
        let mut p = single(1.0);
        let mut st = OptimizerState::new(OptimizerConfig::default(), &p);
        st.step(&mut p, &grad(1.0)).unwrap();
        let w1 = p.get("w").unwrap().data()[0];
        st.step(&mut p, &grad(3.0)).unwrap();
        let w2 = p.get("w").unwrap().data()[0];
        let d1 = 1.0 - w1;
        let d2 = w1 - w2;
        assert_ne!(d1, d2);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_toward_zero() {
        let mut p = single(2.0);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p);
        st.step(&mut p, &grad(0.0)).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_and_stale_state_are_errors() {
        let mut p = single(1.0);
        let mut st = OptimizerState::new(OptimizerConfig::default(), &p);
        assert!(matches!(
            st.step(&mut p, &GradMap::new()),
            Err(AutodiffError::MissingGrad(_))
        ));
        let mut bigger = ParamStore::new();
        bigger.insert("w", Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap());
        let g2: GradMap<f64> = [("w".to_string(), Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap())].into();
        assert!(matches!(
            st.step(&mut bigger, &g2),
            Err(AutodiffError::StaleState(_))
        ));
    }
}
