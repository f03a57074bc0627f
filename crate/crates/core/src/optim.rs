//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First/second moment estimates and step count for Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: ParamVector::zeros(len),
            v: ParamVector::zeros(len),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState) -> Result<()> {
    Error::check_len("adam gradient", params.len(), grad.len())?;
    Error::check_len("adam state", params.len(), state.m.len())?;
    Error::check_len("adam state", params.len(), state.v.len())?;
    check_finite(grad)?;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
}

impl SgdConfig {
    pub fn new(lr: f64) -> Result<Self> {
        if lr.is_finite() && lr > 0.0 {
            Ok(Self { lr })
        } else {
            Err(Error::InvalidArgument(format!(
                "SGD learning rate must be finite and positive, got {lr}"
            )))
        }
    }
}

/// `params -= lr * grad`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], config: &SgdConfig) -> Result<()> {
    Error::check_len("sgd gradient", params.len(), grad.len())?;
    check_finite(grad)?;
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= config.lr * g;
    }
    Ok(())
}

fn check_finite(grad: &[f64]) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            context: "gradient",
            index,
        }),
        None => Ok(()),
    }
}

/// Which update rule local training uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Sgd(SgdConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam(AdamConfig::default())
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Adam(cfg) => cfg.validate(),
            OptimizerConfig::Sgd(cfg) => SgdConfig::new(cfg.lr).map(|_| ()),
        }
    }

    pub fn fresh_state(&self, len: usize) -> Optimizer {
        match *self {
            OptimizerConfig::Adam(cfg) => Optimizer::Adam(AdamState::new(cfg, len)),
            OptimizerConfig::Sgd(cfg) => Optimizer::Sgd(cfg),
        }
    }
}

/// Optimizer together with whatever state it carries between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd(SgdConfig),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        match self {
            Optimizer::Adam(state) => adam_step(params, grad, state),
            Optimizer::Sgd(cfg) => sgd_step(params, grad, cfg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scalar Adam written independently of the vector implementation.
    fn scalar_adam(x0: f64, steps: usize, grad: impl Fn(f64) -> f64) -> Vec<f64> {
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = Vec::with_capacity(steps);
        for t in 1..=steps {
            let g = grad(x);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t as i32));
            let vh = v / (1.0 - f64::powi(b2, t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.0];
        let mut st = AdamState::new(AdamConfig::default(), 2);
        adam_step(&mut p, &[0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_adam_step_is_signed_lr() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(AdamConfig::default(), 1);
        adam_step(&mut p, &[1.0], &mut st).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10, "{}", p[0]);
    }

    #[test]
    fn adam_tracks_scalar_oracle_on_parabola() {
        let oracle = scalar_adam(1.0, 100, |x| 2.0 * x);
        let mut p = vec![1.0];
        let mut st = AdamState::new(AdamConfig::default(), 1);
        for expected in oracle {
            let g = [2.0 * p[0]];
            adam_step(&mut p, &g, &mut st).unwrap();
            assert!((p[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_rejects_non_finite_and_mismatch() {
        let mut st = AdamState::new(AdamConfig::default(), 1);
        assert!(matches!(
            adam_step(&mut [0.0], &[f64::NAN], &mut st),
            Err(Error::NonFinite { index: 0, .. })
        ));
        assert!(adam_step(&mut [0.0], &[1.0, 2.0], &mut st).is_err());
        assert_eq!(st.t, 0);
    }

    #[test]
    fn sgd_definition() {
        let cfg = SgdConfig::new(0.1).unwrap();
        let mut p = vec![1.0];
        sgd_step(&mut p, &[2.0], &cfg).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        sgd_step(&mut p, &[0.0], &cfg).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        assert!(SgdConfig::new(0.0).is_err());
        assert!(sgd_step(&mut p, &[1.0, 1.0], &cfg).is_err());
    }

    proptest! {
        #[test]
        fn sgd_is_elementwise(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..32),
            lr in 1e-4f64..1.0,
        ) {
            let (mut p, g): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let expected: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a - lr * b).collect();
            sgd_step(&mut p, &g, &SgdConfig::new(lr).unwrap()).unwrap();
            for (a, b) in p.iter().zip(&expected) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn early_adam_steps_are_bounded(
            grads in prop::collection::vec(-1e3f64..1e3, 1..10),
        ) {
            let cfg = AdamConfig::default();
            let mut st = AdamState::new(cfg, 1);
            let mut p = vec![0.0];
            for g in grads {
                let before = p[0];
                adam_step(&mut p, &[g], &mut st).unwrap();
                prop_assert!(p[0].is_finite());
                prop_assert!((p[0] - before).abs() <= cfg.lr / (1.0 - cfg.beta1) * 1.01);
            }
        }
    }
}
