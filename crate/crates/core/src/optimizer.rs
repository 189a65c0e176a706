//! Parameter updates: plain gradient descent and an RMSProp-style rule.

use serde::{Deserialize, Serialize};

use crate::error::{contract, LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    PlainGd,
    RmspropStyle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::RmspropStyle,
            learning_rate: 0.01,
            decay: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(contract(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.kind == OptimizerKind::RmspropStyle {
            if !(self.decay > 0.0 && self.decay < 1.0) {
                return Err(contract(format!(
                    "decay must lie in (0, 1), got {}",
                    self.decay
                )));
            }
            if self.epsilon.is_nan() || self.epsilon <= 0.0 {
                return Err(contract("epsilon must be positive"));
            }
        }
        Ok(())
    }
}

/// `acc <- decay acc + (1 - decay) g^2; params <- params - lr g / sqrt(acc + eps)`.
pub fn rmsprop_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut [f64],
    lr: f64,
    decay: f64,
    epsilon: f64,
) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.len() {
        return Err(contract(
            "rmsprop: parameter, gradient, and state lengths differ",
        ));
    }
    if !(decay > 0.0 && decay < 1.0) {
        return Err(contract(format!(
            "rmsprop: decay must lie in (0, 1), got {decay}"
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) || params.iter().any(|p| !p.is_finite()) {
        return Err(LabError::NonFinite("rmsprop input".into()));
    }
    for ((p, g), a) in params.iter_mut().zip(grad).zip(state.iter_mut()) {
        *a = decay * *a + (1.0 - decay) * g * g;
        *p -= lr * g / (*a + epsilon).sqrt();
    }
    Ok(())
}

pub fn gd_step(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if params.len() != grad.len() {
        return Err(contract("gd: parameter and gradient lengths differ"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(LabError::NonFinite("gradient".into()));
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

/// Optimizer with its per-parameter state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    accumulator: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            accumulator: vec![0.0; params],
        })
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let c = &self.config;
        match c.kind {
            OptimizerKind::PlainGd => gd_step(params, grad, c.learning_rate),
            OptimizerKind::RmspropStyle => rmsprop_step(
                params,
                grad,
                &mut self.accumulator,
                c.learning_rate,
                c.decay,
                c.epsilon,
            ),
        }
    }
}
