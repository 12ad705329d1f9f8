use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use super::{BoxSupport, CutModel};
use crate::error::{Error, Result};
use crate::stats::normal_ln_pdf;

/// Normal-normal random effects model on sufficient statistics.
///
/// θ is the random-effects variance θ² (scalar) and φ the vector of residual
/// variances φᵢ². With β marginalized,
///
/// * `Ȳᵢ ~ N(0, θ² + φᵢ²/n)` (suspect module)
/// * `sᵢ² ~ Gamma((n − 1)/2, rate 1/(2φᵢ²))` (trusted module)
///
/// with priors `p(φᵢ²) ∝ 1/φᵢ²` and `p(θ² | φ²) ∝ 1/(θ² + φ̄²/n)`. The θ prior
/// depends on φ, so it is evaluated inside [`CutModel::log_lik_y`].
#[derive(Debug, Clone)]
pub struct RandomEffectsModel {
    y_bar: Vec<f64>,
    s_sq: Vec<f64>,
    group_size: usize,
    theta_support: BoxSupport,
    phi_support: BoxSupport,
}

/// Tail probability left outside the φᵢ² box on each side.
const PHI_TAIL: f64 = 1e-10;

impl RandomEffectsModel {
    pub fn new(y_bar: Vec<f64>, s_sq: Vec<f64>, group_size: usize) -> Result<Self> {
        if y_bar.len() != s_sq.len() || y_bar.is_empty() {
            return Err(Error::InvalidModel(format!(
                "y_bar has {} groups but s_sq has {}",
                y_bar.len(),
                s_sq.len()
            )));
        }
        if group_size < 2 {
            return Err(Error::InvalidModel("group_size must be at least 2".into()));
        }
        if let Some(i) = s_sq.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::domain(format!("s_sq[{i}] = {} is not positive", s_sq[i])));
        }
        if y_bar.iter().any(|y| !y.is_finite()) {
            return Err(Error::Data("y_bar contains non-finite values".into()));
        }

        let shape = 0.5 * (group_size as f64 - 1.0);
        let g = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidModel(e.to_string()))?;
        let g_lo = g.inverse_cdf(PHI_TAIL);
        let g_hi = g.inverse_cdf(1.0 - PHI_TAIL);
        let (phi_lo, phi_hi): (Vec<f64>, Vec<f64>) = s_sq
            .iter()
            .map(|s| {
                let scale = 0.5 * s;
                (scale / g_hi, scale / g_lo)
            })
            .unzip();

        let mean_sq = y_bar.iter().map(|y| y * y).sum::<f64>() / y_bar.len() as f64;
        let theta_hi = (20.0 * mean_sq).max(1.0);

        Ok(Self {
            y_bar,
            s_sq,
            group_size,
            theta_support: BoxSupport::new(vec![0.0], vec![theta_hi])?,
            phi_support: BoxSupport::new(phi_lo, phi_hi)?,
        })
    }

    pub fn with_theta_support(mut self, support: BoxSupport) -> Result<Self> {
        if support.dim() != 1 || support.lower()[0] < 0.0 {
            return Err(Error::InvalidModel("θ² box must be one-dimensional and nonnegative".into()));
        }
        self.theta_support = support;
        Ok(self)
    }

    pub fn with_phi_support(mut self, support: BoxSupport) -> Result<Self> {
        if support.dim() != self.s_sq.len() || support.lower().iter().any(|l| *l <= 0.0) {
            return Err(Error::InvalidModel("φ² box must match the groups and be positive".into()));
        }
        self.phi_support = support;
        Ok(self)
    }

    pub fn groups(&self) -> usize {
        self.y_bar.len()
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Shape and scale of the inverse-gamma law of φᵢ² given sᵢ².
    pub fn phi_posterior_shape_scale(&self, i: usize) -> (f64, f64) {
        (0.5 * (self.group_size as f64 - 1.0), 0.5 * self.s_sq[i])
    }
}

impl CutModel for RandomEffectsModel {
    fn name(&self) -> &str {
        "random_effects"
    }

    fn log_lik_y(&self, theta: &[f64], phi: &[f64]) -> f64 {
        let t2 = theta[0];
        let n = self.group_size as f64;
        let mut ll = 0.0;
        let mut phi_sum = 0.0;
        for (y, p2) in self.y_bar.iter().zip(phi) {
            ll += normal_ln_pdf(*y, 0.0, t2 + p2 / n);
            phi_sum += p2;
        }
        let phi_bar = phi_sum / phi.len() as f64;
        ll - (t2 + phi_bar / n).ln()
    }

    fn log_lik_z(&self, phi: &[f64]) -> f64 {
        let shape = 0.5 * (self.group_size as f64 - 1.0);
        let norm = ln_gamma(shape);
        self.s_sq
            .iter()
            .zip(phi)
            .map(|(s, p2)| {
                let rate = 0.5 / p2;
                shape * rate.ln() - norm + (shape - 1.0) * s.ln() - rate * s
            })
            .sum()
    }

    fn log_prior_phi(&self, phi: &[f64]) -> f64 {
        -phi.iter().map(|p| p.ln()).sum::<f64>()
    }

    fn theta_support(&self) -> &BoxSupport {
        &self.theta_support
    }

    fn phi_support(&self) -> &BoxSupport {
        &self.phi_support
    }

    fn phi_start(&self) -> Vec<f64> {
        let n = self.group_size as f64;
        self.s_sq
            .iter()
            .zip(self.phi_support.lower().iter().zip(self.phi_support.upper()))
            .map(|(s, (l, u))| (s / (n - 1.0)).clamp(*l, *u))
            .collect()
    }
}
