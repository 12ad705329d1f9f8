use rand::{Rng, RngCore};

use super::{BoxSupport, CutModel};
use crate::error::{Error, Result};
use crate::stats::{normal_ln_pdf, truncated_normal_from_uniform};

/// Conjugate toy: θ | Y, φ ~ N(φ, Y²) with a flat θ prior, and φ | Z ~ N(μ, τ²).
///
/// Both conditionals are normal, so the cut marginal of θ is N(μ, Y² + τ²) up to
/// the (negligible) box truncation. An exact conditional sampler is available.
#[derive(Debug, Clone)]
pub struct ConjugateToy {
    y: f64,
    phi_mean: f64,
    phi_sd: f64,
    theta_support: BoxSupport,
    phi_support: BoxSupport,
}

impl ConjugateToy {
    pub fn new(y_value: f64, phi_prior_mean: f64, phi_prior_sd: f64) -> Result<Self> {
        if y_value == 0.0 || !y_value.is_finite() {
            return Err(Error::InvalidModel("conjugate toy needs a nonzero finite y".into()));
        }
        if !(phi_prior_sd > 0.0) || !phi_prior_mean.is_finite() {
            return Err(Error::InvalidModel("phi prior needs finite mean and sd > 0".into()));
        }
        let ys = y_value.abs();
        let phi_lo = phi_prior_mean - 10.0 * phi_prior_sd;
        let phi_hi = phi_prior_mean + 10.0 * phi_prior_sd;
        Ok(Self {
            y: y_value,
            phi_mean: phi_prior_mean,
            phi_sd: phi_prior_sd,
            theta_support: BoxSupport::new(vec![phi_lo - 10.0 * ys], vec![phi_hi + 10.0 * ys])?,
            phi_support: BoxSupport::new(vec![phi_lo], vec![phi_hi])?,
        })
    }

    pub fn with_theta_support(mut self, support: BoxSupport) -> Result<Self> {
        if support.dim() != 1 {
            return Err(Error::InvalidModel("conjugate toy is one-dimensional".into()));
        }
        self.theta_support = support;
        Ok(self)
    }

    pub fn with_phi_support(mut self, support: BoxSupport) -> Result<Self> {
        if support.dim() != 1 {
            return Err(Error::InvalidModel("conjugate toy is one-dimensional".into()));
        }
        self.phi_support = support;
        Ok(self)
    }

    /// Conditional standard deviation |Y|.
    pub fn y_sd(&self) -> f64 {
        self.y.abs()
    }

    pub fn phi_mean(&self) -> f64 {
        self.phi_mean
    }

    pub fn phi_sd(&self) -> f64 {
        self.phi_sd
    }
}

impl CutModel for ConjugateToy {
    fn name(&self) -> &str {
        "conjugate"
    }

    fn log_lik_y(&self, theta: &[f64], phi: &[f64]) -> f64 {
        normal_ln_pdf(theta[0], phi[0], self.y * self.y)
    }

    fn log_lik_z(&self, phi: &[f64]) -> f64 {
        normal_ln_pdf(self.phi_mean, phi[0], self.phi_sd * self.phi_sd)
    }

    fn theta_support(&self) -> &BoxSupport {
        &self.theta_support
    }

    fn phi_support(&self) -> &BoxSupport {
        &self.phi_support
    }

    fn phi_start(&self) -> Vec<f64> {
        let s = &self.phi_support;
        vec![self.phi_mean.clamp(s.lower()[0], s.upper()[0])]
    }

    fn has_exact_conditional(&self) -> bool {
        true
    }

    fn sample_theta_exact(&self, phi: &[f64], rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let u: f64 = rng.random();
        let s = &self.theta_support;
        Some(vec![truncated_normal_from_uniform(
            phi[0],
            self.y.abs(),
            s.lower()[0],
            s.upper()[0],
            u,
        )])
    }
}
