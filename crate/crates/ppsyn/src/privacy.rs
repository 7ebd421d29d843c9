//! Gaussian and exponential mechanisms, zCDP conversions, and a strict
//! budget ledger.
//!
//! All internal accounting is in zCDP rho: Gaussian noise of scale sigma costs
//! 1/(2 sigma^2), an exponential-mechanism draw with parameter epsilon costs
//! epsilon^2/8, and charges compose additively. (epsilon, delta) appears only
//! at the CLI boundary via [`eps_delta_to_rho`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};

/// Gaussian scale paired with the zCDP cost it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub rho: f64,
}

impl NoiseSpec {
    pub fn from_rho(rho: f64) -> Result<Self> {
        let sigma = sigma_for_rho(rho)?;
        Ok(NoiseSpec { sigma, rho })
    }

    pub fn from_sigma(sigma: f64) -> Result<Self> {
        if sigma <= 0.0 {
            return Err(Error::InvalidParam("sigma must be positive".into()));
        }
        Ok(NoiseSpec {
            sigma,
            rho: rho_for_sigma(sigma),
        })
    }
}

/// Gaussian scale achieving rho-zCDP for a sensitivity-1 query: 1/sqrt(2 rho).
pub fn sigma_for_rho(rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParam(format!("rho must be positive, got {rho}")));
    }
    Ok(1.0 / (2.0 * rho).sqrt())
}

/// Inverse of [`sigma_for_rho`]: rho = 1/(2 sigma^2).
pub fn rho_for_sigma(sigma: f64) -> f64 {
    1.0 / (2.0 * sigma * sigma)
}

/// Exponential-mechanism epsilon whose zCDP cost is rho: sqrt(8 rho).
pub fn em_epsilon_for_rho(rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParam(format!("rho must be positive, got {rho}")));
    }
    Ok((8.0 * rho).sqrt())
}

/// Largest rho whose standard zCDP->(eps, delta) bound
/// rho + 2 sqrt(rho ln(1/delta)) stays within eps, found by bisection to
/// relative tolerance 1e-12.
pub fn eps_delta_to_rho(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::BudgetNotPositive);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParam(format!(
            "delta must be in (0,1), got {delta}"
        )));
    }
    let log_inv_delta = (1.0 / delta).ln();
    let eps_of = |rho: f64| rho + 2.0 * (rho * log_inv_delta).sqrt();
    let mut lo = 0.0f64;
    let mut hi = epsilon; // eps_of(epsilon) >= epsilon, so the root is below
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eps_of(mid) <= epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(lo)
}

/// Adds i.i.d. N(0, sigma^2) to every entry. With `noiseless` the vector is
/// copied unchanged (debug oracle path).
pub fn gaussian_perturb<R: Rng>(
    v: &[f64],
    sigma: f64,
    rng: &mut R,
    noiseless: bool,
) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParam(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if noiseless {
        return Ok(v.to_vec());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked positive");
    Ok(v.iter().map(|&x| x + normal.sample(rng)).collect())
}

/// Exponential mechanism over scores: picks index i with probability
/// proportional to exp(eps * score[i] / (2 * delta_sens)), max-shifted for
/// stability. With `noiseless` it is the argmax (ties to the lowest index).
pub fn exponential_select<R: Rng>(
    scores: &[f64],
    epsilon: f64,
    delta_sens: f64,
    rng: &mut R,
    noiseless: bool,
) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::InvalidParam("no candidates to select from".into()));
    }
    if !(delta_sens > 0.0) {
        return Err(Error::InvalidParam("delta_sens must be positive".into()));
    }
    if noiseless {
        let mut best = 0usize;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        return Ok(best);
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParam("epsilon must be positive".into()));
    }
    let scale = epsilon / (2.0 * delta_sens);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|&s| (scale * (s - max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return Ok(i);
        }
    }
    Ok(weights.len() - 1)
}

/// One ledger entry.
#[derive(Debug, Clone, Serialize)]
pub struct Charge {
    pub label: String,
    pub rho: f64,
}

/// Strict zCDP ledger: charges are additive and admission is all-or-nothing.
#[derive(Debug, Clone)]
pub struct PrivacyAccountant {
    rho_total: f64,
    rho_spent: f64,
    log: Vec<Charge>,
}

impl PrivacyAccountant {
    pub fn new(rho_total: f64) -> Result<Self> {
        if !(rho_total > 0.0) {
            return Err(Error::BudgetNotPositive);
        }
        Ok(PrivacyAccountant {
            rho_total,
            rho_spent: 0.0,
            log: Vec::new(),
        })
    }

    pub fn rho_total(&self) -> f64 {
        self.rho_total
    }

    pub fn rho_spent(&self) -> f64 {
        self.rho_spent
    }

    pub fn remaining(&self) -> f64 {
        (self.rho_total - self.rho_spent).max(0.0)
    }

    pub fn log(&self) -> &[Charge] {
        &self.log
    }

    /// Appends a charge; rejects any overdraft beyond a 1e-12 float slack.
    pub fn charge(&mut self, rho: f64, label: impl Into<String>) -> Result<()> {
        if !(rho > 0.0) {
            return Err(Error::InvalidParam(format!(
                "charge must be positive, got {rho}"
            )));
        }
        if self.rho_spent + rho > self.rho_total + 1e-12 {
            return Err(Error::Overdraft {
                charge: rho,
                spent: self.rho_spent,
                total: self.rho_total,
            });
        }
        self.rho_spent += rho;
        self.log.push(Charge {
            label: label.into(),
            rho,
        });
        Ok(())
    }
}
