use super::{BoxSupport, CutModel};
use crate::error::{Error, Result};

/// Outcome variance of the regression module.
pub const NOISE_VAR: f64 = 3.0;

/// Linear regression with a shared coefficient φ:
///
/// * `Yᵢ ~ N(θᵀ x_θ,ᵢ + φ x_φ,ᵢ, 3)`
/// * `Zⱼ ~ N(φ, 1)`
///
/// with uniform priors on the boxes. Likelihoods are evaluated from
/// precomputed cross products, so each evaluation is O(d²).
#[derive(Debug, Clone)]
pub struct RegressionModel {
    d: usize,
    n_y: usize,
    n_z: usize,
    xtx: Vec<f64>, // d×d, row-major
    xty: Vec<f64>,
    xtu: Vec<f64>,
    uty: f64,
    utu: f64,
    yty: f64,
    z_sum: f64,
    z_sq: f64,
    theta_support: BoxSupport,
    phi_support: BoxSupport,
}

impl RegressionModel {
    /// `x` has one row per outcome with `d + 1` entries: the `d` θ-covariates
    /// followed by the φ-covariate.
    pub fn new(x: &[Vec<f64>], y: &[f64], z: &[f64], d: usize) -> Result<Self> {
        if !(1..=20).contains(&d) {
            return Err(Error::InvalidModel(format!("d = {d} must be in 1..=20")));
        }
        if x.len() != y.len() || y.is_empty() {
            return Err(Error::InvalidModel(format!("{} covariate rows for {} outcomes", x.len(), y.len())));
        }
        if let Some(r) = x.iter().position(|row| row.len() != d + 1) {
            return Err(Error::InvalidModel(format!("covariate row {r} has {} entries, expected {}", x[r].len(), d + 1)));
        }
        if z.is_empty() {
            return Err(Error::InvalidModel("no Z observations".into()));
        }
        if x.iter().flatten().chain(y).chain(z).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite regression data".into()));
        }

        let mut xtx = vec![0.0; d * d];
        let mut xty = vec![0.0; d];
        let mut xtu = vec![0.0; d];
        let (mut uty, mut utu, mut yty) = (0.0, 0.0, 0.0);
        for (row, &yi) in x.iter().zip(y) {
            let u = row[d];
            for a in 0..d {
                xty[a] += row[a] * yi;
                xtu[a] += row[a] * u;
                for b in 0..d {
                    xtx[a * d + b] += row[a] * row[b];
                }
            }
            uty += u * yi;
            utu += u * u;
            yty += yi * yi;
        }
        let z_sum: f64 = z.iter().sum();
        let z_sq: f64 = z.iter().map(|v| v * v).sum();

        let z_bar = z_sum / z.len() as f64;
        let phi_half = 10.0 / (z.len() as f64).sqrt();
        let phi_support = BoxSupport::new(vec![z_bar - phi_half], vec![z_bar + phi_half])?;

        let mut model = Self {
            d,
            n_y: y.len(),
            n_z: z.len(),
            xtx,
            xty,
            xtu,
            uty,
            utu,
            yty,
            z_sum,
            z_sq,
            theta_support: BoxSupport::cube(-10.0, 10.0, d)?,
            phi_support,
        };
        if let Some(b) = model.data_informed_theta_box() {
            model.theta_support = b;
        }
        Ok(model)
    }

    /// Union of the conditional means at both φ box ends, widened by ten
    /// conditional SDs. `None` when XᵀX is singular.
    fn data_informed_theta_box(&self) -> Option<BoxSupport> {
        let cov = self.conditional_cov()?;
        let lo_mean = self.conditional_mean(self.phi_support.lower()[0])?;
        let hi_mean = self.conditional_mean(self.phi_support.upper()[0])?;
        let mut lower = Vec::with_capacity(self.d);
        let mut upper = Vec::with_capacity(self.d);
        for k in 0..self.d {
            let sd = cov[k * self.d + k].sqrt();
            lower.push(lo_mean[k].min(hi_mean[k]) - 10.0 * sd);
            upper.push(lo_mean[k].max(hi_mean[k]) + 10.0 * sd);
        }
        BoxSupport::new(lower, upper).ok()
    }

    pub fn with_theta_support(mut self, support: BoxSupport) -> Result<Self> {
        if support.dim() != self.d {
            return Err(Error::InvalidModel("θ box dimension mismatch".into()));
        }
        self.theta_support = support;
        Ok(self)
    }

    pub fn with_phi_support(mut self, support: BoxSupport) -> Result<Self> {
        if support.dim() != 1 {
            return Err(Error::InvalidModel("φ is scalar".into()));
        }
        self.phi_support = support;
        Ok(self)
    }

    /// Mean of the untruncated normal p(θ | Y, φ): (XᵀX)⁻¹ Xᵀ(Y − φ u).
    pub fn conditional_mean(&self, phi: f64) -> Option<Vec<f64>> {
        let rhs: Vec<f64> = self.xty.iter().zip(&self.xtu).map(|(a, b)| a - phi * b).collect();
        let l = cholesky(&self.xtx, self.d)?;
        Some(cholesky_solve(&l, self.d, &rhs))
    }

    /// Covariance of the untruncated p(θ | Y, φ): 3 (XᵀX)⁻¹.
    pub fn conditional_cov(&self) -> Option<Vec<f64>> {
        let d = self.d;
        let l = cholesky(&self.xtx, d)?;
        let mut cov = vec![0.0; d * d];
        for c in 0..d {
            let mut e = vec![0.0; d];
            e[c] = 1.0;
            let col = cholesky_solve(&l, d, &e);
            for r in 0..d {
                cov[r * d + c] = NOISE_VAR * col[r];
            }
        }
        Some(cov)
    }

    pub fn z_mean(&self) -> f64 {
        self.z_sum / self.n_z as f64
    }

    pub fn z_count(&self) -> usize {
        self.n_z
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-12 * a[i * n + i].abs().max(1e-300) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

impl CutModel for RegressionModel {
    fn name(&self) -> &str {
        "regression"
    }

    fn log_lik_y(&self, theta: &[f64], phi: &[f64]) -> f64 {
        let d = self.d;
        let p = phi[0];
        // ‖Y − Xθ − φu‖²
        let mut quad = 0.0;
        let mut lin = 0.0;
        let mut cross = 0.0;
        for a in 0..d {
            let ta = theta[a];
            lin += ta * self.xty[a];
            cross += ta * self.xtu[a];
            let row = &self.xtx[a * d..(a + 1) * d];
            let mut s = 0.0;
            for b in 0..d {
                s += row[b] * theta[b];
            }
            quad += ta * s;
        }
        let rss = self.yty - 2.0 * lin - 2.0 * p * self.uty + quad + 2.0 * p * cross + p * p * self.utu;
        -0.5 * self.n_y as f64 * (2.0 * std::f64::consts::PI * NOISE_VAR).ln() - 0.5 * rss / NOISE_VAR
    }

    fn log_lik_z(&self, phi: &[f64]) -> f64 {
        let p = phi[0];
        let n = self.n_z as f64;
        -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * (self.z_sq - 2.0 * p * self.z_sum + n * p * p)
    }

    fn theta_support(&self) -> &BoxSupport {
        &self.theta_support
    }

    fn phi_support(&self) -> &BoxSupport {
        &self.phi_support
    }

    fn phi_start(&self) -> Vec<f64> {
        vec![self.z_mean()]
    }
}
