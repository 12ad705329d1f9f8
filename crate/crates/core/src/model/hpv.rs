use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{BoxSupport, CutModel};
use crate::error::{Error, Result};

/// One city: `Z` of `N` women infected, `Y` cancer cases over `T` person-years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpvRecord {
    #[serde(rename = "Z")]
    pub z: u64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "Y")]
    pub y: u64,
    #[serde(rename = "T")]
    pub t: f64,
}

/// HPV prevalence / cervical cancer incidence model.
///
/// * `Zᵢ ~ Bin(Nᵢ, φᵢ)`, Beta(1, 1) prior on each φᵢ
/// * `Yᵢ ~ Poisson(Tᵢ exp(θ₁ + θ₂ φᵢ))`, uniform prior on the θ box
#[derive(Debug, Clone)]
pub struct HpvModel {
    records: Vec<HpvRecord>,
    log_t: Vec<f64>,
    y_norm: Vec<f64>,
    z_norm: Vec<f64>,
    theta_support: BoxSupport,
    phi_support: BoxSupport,
}

const PHI_EDGE: f64 = 1e-6;

impl HpvModel {
    pub fn new(records: Vec<HpvRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("no HPV records".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if r.z > r.n {
                return Err(Error::Data(format!("record {i}: Z = {} exceeds N = {}", r.z, r.n)));
            }
            if r.n == 0 || !(r.t > 0.0) || !r.t.is_finite() {
                return Err(Error::Data(format!("record {i}: needs N > 0 and T > 0")));
            }
        }
        let log_t = records.iter().map(|r| r.t.ln()).collect();
        let y_norm = records.iter().map(|r| ln_gamma(r.y as f64 + 1.0)).collect();
        let z_norm = records
            .iter()
            .map(|r| {
                ln_gamma(r.n as f64 + 1.0) - ln_gamma(r.z as f64 + 1.0) - ln_gamma((r.n - r.z) as f64 + 1.0)
            })
            .collect();

        let (phi_lo, phi_hi): (Vec<f64>, Vec<f64>) = records
            .iter()
            .map(|r| {
                // Beta(1 + Z, 1 + N − Z) posterior
                let a = 1.0 + r.z as f64;
                let b = 1.0 + (r.n - r.z) as f64;
                let mean = a / (a + b);
                let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
                ((mean - 10.0 * sd).max(PHI_EDGE), (mean + 10.0 * sd).min(1.0 - PHI_EDGE))
            })
            .unzip();
        let phi_support = BoxSupport::new(phi_lo, phi_hi)?;

        let mut model = Self {
            records,
            log_t,
            y_norm,
            z_norm,
            theta_support: BoxSupport::new(vec![-10.0, -20.0], vec![10.0, 40.0])?,
            phi_support,
        };
        if let Some(b) = model.data_informed_theta_box() {
            model.theta_support = b;
        }
        Ok(model)
    }

    /// Poisson regression at φ = Z/N by Newton's method; box is the estimate
    /// ± 30 standard errors (at least ±1).
    fn data_informed_theta_box(&self) -> Option<BoxSupport> {
        let phi_hat: Vec<f64> = self.records.iter().map(|r| r.z as f64 / r.n as f64).collect();
        let y_tot: f64 = self.records.iter().map(|r| r.y as f64).sum();
        let t_tot: f64 = self.records.iter().map(|r| r.t).sum();
        if y_tot == 0.0 {
            return None;
        }
        let mut b = [(y_tot / t_tot).ln(), 0.0];
        let mut info = [0.0; 3];
        for _ in 0..100 {
            let mut grad = [0.0; 2];
            info = [0.0; 3];
            for (i, r) in self.records.iter().enumerate() {
                let p = phi_hat[i];
                let lam = (self.log_t[i] + b[0] + b[1] * p).exp();
                let resid = r.y as f64 - lam;
                grad[0] += resid;
                grad[1] += resid * p;
                info[0] += lam;
                info[1] += lam * p;
                info[2] += lam * p * p;
            }
            let det = info[0] * info[2] - info[1] * info[1];
            if !(det > 0.0) || !det.is_finite() {
                return None;
            }
            let step = [
                (info[2] * grad[0] - info[1] * grad[1]) / det,
                (info[0] * grad[1] - info[1] * grad[0]) / det,
            ];
            b[0] += step[0];
            b[1] += step[1];
            if step[0].abs() + step[1].abs() < 1e-10 {
                break;
            }
        }
        let det = info[0] * info[2] - info[1] * info[1];
        let se = [(info[2] / det).sqrt(), (info[0] / det).sqrt()];
        if !b.iter().chain(&se).all(|v| v.is_finite()) {
            return None;
        }
        let half = [(30.0 * se[0]).max(1.0), (30.0 * se[1]).max(1.0)];
        BoxSupport::new(vec![b[0] - half[0], b[1] - half[1]], vec![b[0] + half[0], b[1] + half[1]]).ok()
    }

    pub fn with_theta_support(mut self, support: BoxSupport) -> Result<Self> {
        if support.dim() != 2 {
            return Err(Error::InvalidModel("θ is two-dimensional".into()));
        }
        self.theta_support = support;
        Ok(self)
    }

    pub fn with_phi_support(mut self, support: BoxSupport) -> Result<Self> {
        if support.dim() != self.records.len()
            || support.lower().iter().any(|l| *l <= 0.0)
            || support.upper().iter().any(|u| *u >= 1.0)
        {
            return Err(Error::InvalidModel("φ box must lie in (0, 1) per city".into()));
        }
        self.phi_support = support;
        Ok(self)
    }

    pub fn records(&self) -> &[HpvRecord] {
        &self.records
    }
}

impl CutModel for HpvModel {
    fn name(&self) -> &str {
        "hpv"
    }

    fn log_lik_y(&self, theta: &[f64], phi: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (i, r) in self.records.iter().enumerate() {
            let log_rate = self.log_t[i] + theta[0] + theta[1] * phi[i];
            ll += r.y as f64 * log_rate - log_rate.exp() - self.y_norm[i];
        }
        ll
    }

    fn log_lik_z(&self, phi: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (i, r) in self.records.iter().enumerate() {
            let p = phi[i];
            ll += self.z_norm[i] + r.z as f64 * p.ln() + (r.n - r.z) as f64 * (-p).ln_1p();
        }
        ll
    }

    fn theta_support(&self) -> &BoxSupport {
        &self.theta_support
    }

    fn phi_support(&self) -> &BoxSupport {
        &self.phi_support
    }

    fn phi_start(&self) -> Vec<f64> {
        self.records
            .iter()
            .zip(self.phi_support.lower().iter().zip(self.phi_support.upper()))
            .map(|(r, (l, u))| (r.z as f64 / r.n as f64).clamp(*l, *u))
            .collect()
    }
}
