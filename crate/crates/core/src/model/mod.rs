//! Two-module cut models.
//!
//! A cut model has a trusted module `p(Z | φ) p(φ)` and a suspect module
//! `p(Y | θ, φ) p(θ)`. The cut distribution is `p(θ | Y, φ) p(φ | Z)`: φ is
//! learned from Z alone and then propagated into the θ module.

mod conjugate;
pub mod data;
mod hpv;
mod random_effects;
mod regression;

pub use conjugate::ConjugateToy;
pub use hpv::{HpvModel, HpvRecord};
pub use random_effects::RandomEffectsModel;
pub use regression::RegressionModel;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A compact axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSupport {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSupport {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidModel(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l >= u {
                return Err(Error::InvalidModel(format!(
                    "box coordinate {k} is not a finite nonempty interval: [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// A box of the same interval repeated `dim` times.
    pub fn cube(lower: f64, upper: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect()
    }
}

/// The densities and supports of a two-module model.
///
/// Implementations hold their data immutably and must be pure: the same
/// arguments always give bit-identical results, from any thread.
pub trait CutModel: Send + Sync {
    fn name(&self) -> &str;

    /// log p(Y | θ, φ). May include any prior factor of θ that depends on φ.
    fn log_lik_y(&self, theta: &[f64], phi: &[f64]) -> f64;

    /// log p(Z | φ).
    fn log_lik_z(&self, phi: &[f64]) -> f64;

    fn log_prior_theta(&self, _theta: &[f64]) -> f64 {
        0.0
    }

    fn log_prior_phi(&self, _phi: &[f64]) -> f64 {
        0.0
    }

    fn theta_support(&self) -> &BoxSupport;

    fn phi_support(&self) -> &BoxSupport;

    /// A data-informed starting point for chains over φ.
    fn phi_start(&self) -> Vec<f64> {
        self.phi_support().midpoint()
    }

    /// Whether [`CutModel::sample_theta_exact`] is available.
    fn has_exact_conditional(&self) -> bool {
        false
    }

    /// An exact draw from p(θ | Y, φ), for models where that is tractable.
    fn sample_theta_exact(&self, _phi: &[f64], _rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        None
    }

    fn theta_dim(&self) -> usize {
        self.theta_support().dim()
    }

    fn phi_dim(&self) -> usize {
        self.phi_support().dim()
    }
}

impl<M: CutModel + ?Sized> CutModel for Box<M> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn log_lik_y(&self, theta: &[f64], phi: &[f64]) -> f64 {
        (**self).log_lik_y(theta, phi)
    }
    fn log_lik_z(&self, phi: &[f64]) -> f64 {
        (**self).log_lik_z(phi)
    }
    fn log_prior_theta(&self, theta: &[f64]) -> f64 {
        (**self).log_prior_theta(theta)
    }
    fn log_prior_phi(&self, phi: &[f64]) -> f64 {
        (**self).log_prior_phi(phi)
    }
    fn theta_support(&self) -> &BoxSupport {
        (**self).theta_support()
    }
    fn phi_support(&self) -> &BoxSupport {
        (**self).phi_support()
    }
    fn phi_start(&self) -> Vec<f64> {
        (**self).phi_start()
    }
    fn has_exact_conditional(&self) -> bool {
        (**self).has_exact_conditional()
    }
    fn sample_theta_exact(&self, phi: &[f64], rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        (**self).sample_theta_exact(phi, rng)
    }
}

fn check_in(support: &BoxSupport, x: &[f64], what: &str) -> Result<()> {
    if support.contains(x) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} {x:?} outside support")))
    }
}

/// Unnormalized log p(θ | Y, φ) = log p(Y | θ, φ) + log p(θ).
pub fn log_joint_y<M: CutModel + ?Sized>(model: &M, theta: &[f64], phi: &[f64]) -> Result<f64> {
    check_in(model.theta_support(), theta, "theta")?;
    check_in(model.phi_support(), phi, "phi")?;
    Ok(model.log_lik_y(theta, phi) + model.log_prior_theta(theta))
}

/// Unnormalized log p(φ | Z) = log p(Z | φ) + log p(φ).
pub fn log_phi_posterior<M: CutModel + ?Sized>(model: &M, phi: &[f64]) -> Result<f64> {
    check_in(model.phi_support(), phi, "phi")?;
    Ok(model.log_lik_z(phi) + model.log_prior_phi(phi))
}
