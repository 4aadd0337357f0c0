//! Sample-based predictive metrics.
//!
//! [`nll_hat`] is the constant-free smoothed negative log-likelihood
//! `−log E_{y~P} exp(−(y* − y)²/ξ)`, estimated from posterior samples. It
//! equals the exact NLL of the prediction convolved with `N(0, ξ/2)` up to
//! the dropped constant `−½ log(ξπ)`; [`nll_exact_gaussian`] is that quantity
//! in closed form for a Gaussian prediction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub xi: f64,
    pub n_posterior_samples: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            xi: 0.1,
            n_posterior_samples: 20,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) || self.n_posterior_samples == 0 {
            return Err(Error::contract(
                "metric config needs xi > 0 and at least one sample",
            ));
        }
        Ok(())
    }
}

/// Monte-Carlo smoothed NLL. Always finite and `>= 0`.
pub fn nll_hat<T: Scalar>(samples: &[T], y_star: T, xi: T) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::contract("nll_hat needs at least one sample"));
    }
    if !(xi > T::zero()) {
        return Err(Error::contract("nll_hat needs xi > 0"));
    }
    let exps: Vec<T> = samples
        .iter()
        .map(|&y| {
            let d = y_star - y;
            -(d * d) / xi
        })
        .collect();
    if exps.iter().any(|e| e.is_nan()) {
        return Err(Error::contract("nll_hat samples must be finite"));
    }
    let max = exps.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return Err(Error::contract("nll_hat samples must be finite"));
    }
    let n = T::from_usize(samples.len()).unwrap();
    let mean: T = exps.iter().map(|&e| (e - max).exp()).sum::<T>() / n;
    // mean ∈ [1/n, 1], max <= 0
    Ok((-(max + mean.ln())).max(T::zero()))
}

/// Closed form of the smoothed NLL for a Gaussian prediction `N(mean, var)`:
/// `(y* − mean)²/(ξ + 2 var) − ½ log(ξ/(ξ + 2 var))`.
pub fn nll_exact_gaussian<T: Scalar>(mean: T, var: T, y_star: T, xi: T) -> Result<T> {
    if !(var > T::zero()) || !(xi > T::zero()) {
        return Err(Error::contract(
            "nll_exact_gaussian needs var > 0 and xi > 0",
        ));
    }
    let two = T::lit(2.0);
    let s = xi + two * var;
    let d = y_star - mean;
    Ok(d * d / s - T::lit(0.5) * (xi / s).ln())
}

/// Squared error of the sample mean.
pub fn mse_by_averaging<T: Scalar>(samples: &[T], y_star: T) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::contract(
            "mse_by_averaging needs at least one sample",
        ));
    }
    let m = samples.iter().copied().sum::<T>() / T::from_usize(samples.len()).unwrap();
    let d = m - y_star;
    Ok(d * d)
}

/// Arithmetic mean and standard error (sample sd / √n).
pub fn aggregate<T: Scalar>(values: &[T]) -> Result<(T, T)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::contract("aggregate needs at least two values"));
    }
    let nf = T::from_usize(n).unwrap();
    let mean = values.iter().copied().sum::<T>() / nf;
    let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (nf - T::one())).sqrt();
    Ok((mean, sd / nf.sqrt()))
}
