//! Scalar link functions: softplus, the logistic, and the generalized
//! logistic `sigma_mu(x) = 1 / (1 + mu * exp(-x))`.

use crate::error::{contract, Result};

/// Two-branch `ln(1 + e^x)`; exact to rounding for any finite `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard logistic.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x) = -softplus(-x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(contract(format!(
            "mu must be positive and finite, got {mu}"
        )));
    }
    Ok(())
}

/// `ln sigma_mu(x) = -ln(1 + mu e^{-x})`, evaluated from the product `mu e^{-x}`
/// when it is small and from `e^{x} / mu` otherwise.
#[inline]
pub(crate) fn log_sigma_mu_unchecked(mu: f64, x: f64) -> f64 {
    let log_odds = mu.ln() - x;
    if log_odds <= 0.0 {
        -(mu * (-x).exp()).ln_1p()
    } else {
        -(log_odds + (x.exp() / mu).ln_1p())
    }
}

/// `1 / (1 + mu e^{-x})`.
pub fn sigma_mu(mu: f64, x: f64) -> Result<f64> {
    check_mu(mu)?;
    if !x.is_finite() {
        return Err(contract(format!(
            "sigma_mu argument must be finite, got {x}"
        )));
    }
    Ok(log_sigma_mu_unchecked(mu, x).exp())
}

pub fn log_sigma_mu(mu: f64, x: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(log_sigma_mu_unchecked(mu, x))
}

/// Probability that a sample with reward `r` came from the annotated data,
/// under a 1 : mu mixture of annotated and synthetic responses.
pub fn posterior_real(mu: f64, reward: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(sigmoid(reward - mu.ln()))
}

/// Complement of [`posterior_real`]: `1 / (1 + mu^{-1} e^{r})`.
pub fn posterior_synth(mu: f64, reward: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(sigmoid(mu.ln() - reward))
}
