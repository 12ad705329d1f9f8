//! The auxiliary stochastic approximation Monte Carlo chain over (θ̃, grid index).
//!
//! The chain targets `pₙ(θ̃, i) ∝ p(Y | θ̃, φ₀⁽ⁱ⁾) p(θ̃) / w̃ⁱ` and adapts the
//! log-weights `log w̃` towards the log normalizing constants
//! `log p(Y | φ₀⁽ⁱ⁾)` (up to a common constant).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::AuxGrid;
use crate::mcmc::{accept, rw_propose};
use crate::model::CutModel;

/// Gain `n₀ / max(n₀, n)`.
pub fn xi(n: u64, n0: u64) -> f64 {
    n0 as f64 / n0.max(n) as f64
}

/// `log w̃ᵢ += ξₙ (1{i = visited} − 1/m)`, then shift so the maximum is 0.
pub fn update_weights(log_w: &mut [f64], visited: usize, n: u64, n0: u64) {
    let g = xi(n, n0);
    let inv_m = 1.0 / log_w.len() as f64;
    for (i, w) in log_w.iter_mut().enumerate() {
        *w += g * (if i == visited { 1.0 } else { 0.0 } - inv_m);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_w.iter_mut().for_each(|w| *w -= max);
}

/// Empirical frequency of each grid index.
pub fn visit_frequencies(indices: &[usize], m: usize) -> Result<Vec<f64>> {
    if indices.is_empty() || m == 0 {
        return Err(Error::arg("visit trace is empty"));
    }
    let mut f = vec![0.0; m];
    for &i in indices {
        if i >= m {
            return Err(Error::arg(format!("grid index {i} out of range for m = {m}")));
        }
        f[i] += 1.0;
    }
    let n = indices.len() as f64;
    f.iter_mut().for_each(|v| *v /= n);
    Ok(f)
}

/// True if some frequency leaves `1/m ± rel_tol/m`, the sign of an
/// unconverged auxiliary chain.
pub fn frequencies_diverge(freqs: &[f64], rel_tol: f64) -> bool {
    let m = freqs.len() as f64;
    freqs.iter().any(|f| (f - 1.0 / m).abs() > rel_tol / m)
}

/// Tuning of the auxiliary chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SamcConfig {
    pub n0: u64,
    /// Probability of a θ random-walk move (otherwise a grid move).
    pub p_mix: f64,
    pub theta_step_sd: Vec<f64>,
    /// Nearest neighbours per grid point before symmetrization.
    pub neighbours: usize,
}

impl SamcConfig {
    pub fn validate(&self, theta_dim: usize) -> Result<()> {
        if self.n0 == 0 {
            return Err(Error::arg("n0 must be at least 1"));
        }
        if !(self.p_mix > 0.0 && self.p_mix < 1.0) {
            return Err(Error::arg("p_mix must lie in (0, 1)"));
        }
        if self.theta_step_sd.is_empty()
            || (self.theta_step_sd.len() != 1 && self.theta_step_sd.len() != theta_dim)
            || self.theta_step_sd.iter().any(|s| !(*s > 0.0))
        {
            return Err(Error::arg("theta_step_sd must be positive with one entry or one per θ coordinate"));
        }
        if self.neighbours == 0 {
            return Err(Error::arg("neighbours must be at least 1"));
        }
        Ok(())
    }
}

/// Auxiliary chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct SamcState {
    pub theta: Vec<f64>,
    pub index: usize,
    pub log_w: Vec<f64>,
    pub n: u64,
    /// log p(Y | θ̃, φ₀⁽ⁱⁿᵈᵉˣ⁾) + log p(θ̃) at the current state.
    pub log_lik: f64,
}

/// One emitted auxiliary draw with the weights in force before its update.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxSample {
    pub theta: Vec<f64>,
    pub index: usize,
    pub log_w_prev: Vec<f64>,
}

/// Which move a step proposed and whether it was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Theta { accepted: bool },
    Grid { accepted: bool },
}

/// The auxiliary chain with its random stream.
pub struct AuxChain<'a, M: CutModel + ?Sized> {
    model: &'a M,
    grid: &'a AuxGrid,
    neighbours: Vec<Vec<usize>>,
    config: SamcConfig,
    state: SamcState,
    rng: ChaCha8Rng,
}

impl<'a, M: CutModel + ?Sized> AuxChain<'a, M> {
    /// Starts at a uniform θ̃ in the box and a uniform grid index, with all
    /// weights equal.
    pub fn new(model: &'a M, grid: &'a AuxGrid, config: SamcConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        config.validate(model.theta_dim())?;
        if grid.dim() != model.phi_dim() {
            return Err(Error::arg("grid dimension differs from φ"));
        }
        if !grid.inside(model.phi_support()) {
            return Err(Error::domain("grid point outside the φ box"));
        }
        let theta = model.theta_support().sample_uniform(&mut rng);
        let index = rng.random_range(0..grid.m());
        let log_lik = model.log_lik_y(&theta, grid.point(index)) + model.log_prior_theta(&theta);
        if !log_lik.is_finite() {
            return Err(Error::domain("auxiliary chain starts at a zero-density point"));
        }
        let state = SamcState { theta, index, log_w: vec![0.0; grid.m()], n: 0, log_lik };
        Self::with_state(model, grid, config, state, rng)
    }

    /// Resumes from an explicit state.
    pub fn with_state(model: &'a M, grid: &'a AuxGrid, config: SamcConfig, state: SamcState, rng: ChaCha8Rng) -> Result<Self> {
        config.validate(model.theta_dim())?;
        if state.index >= grid.m() || state.log_w.len() != grid.m() || !model.theta_support().contains(&state.theta) {
            return Err(Error::arg("invalid auxiliary chain state"));
        }
        let neighbours = grid.neighbour_sets(config.neighbours);
        Ok(Self { model, grid, neighbours, config, state, rng })
    }

    pub fn state(&self) -> &SamcState {
        &self.state
    }

    pub fn neighbours(&self) -> &[Vec<usize>] {
        &self.neighbours
    }

    fn log_target(&self, theta: &[f64], index: usize) -> f64 {
        self.model.log_lik_y(theta, self.grid.point(index)) + self.model.log_prior_theta(theta)
    }

    /// Log MH ratio for moving the grid index from `i` to `j` at fixed θ̃,
    /// given the likelihood at `j`.
    pub fn grid_move_log_ratio(&self, i: usize, j: usize, log_lik_j: f64, log_w: &[f64]) -> f64 {
        let (ni, nj) = (self.neighbours[i].len() as f64, self.neighbours[j].len() as f64);
        (log_lik_j - log_w[j]) - (self.state.log_lik - log_w[i]) + ni.ln() - nj.ln()
    }

    /// One Metropolis–Hastings step followed by the weight update.
    pub fn step(&mut self) -> (AuxSample, Move) {
        let mv = if self.rng.random::<f64>() < self.config.p_mix {
            let prop = rw_propose(&self.state.theta, &self.config.theta_step_sd, &mut self.rng);
            let mut accepted = false;
            if self.model.theta_support().contains(&prop) {
                let ll = self.log_target(&prop, self.state.index);
                let ratio = if ll.is_finite() { ll - self.state.log_lik } else { f64::NEG_INFINITY };
                if accept(ratio, &mut self.rng) {
                    self.state.theta = prop;
                    self.state.log_lik = ll;
                    accepted = true;
                }
            }
            Move::Theta { accepted }
        } else {
            let i = self.state.index;
            let nb = &self.neighbours[i];
            let mut accepted = false;
            if !nb.is_empty() {
                let j = nb[self.rng.random_range(0..nb.len())];
                let ll = self.log_target(&self.state.theta, j);
                let ratio = if ll.is_finite() {
                    self.grid_move_log_ratio(i, j, ll, &self.state.log_w)
                } else {
                    f64::NEG_INFINITY
                };
                if accept(ratio, &mut self.rng) {
                    self.state.index = j;
                    self.state.log_lik = ll;
                    accepted = true;
                }
            }
            Move::Grid { accepted }
        };
        let sample = AuxSample {
            theta: self.state.theta.clone(),
            index: self.state.index,
            log_w_prev: self.state.log_w.clone(),
        };
        self.state.n += 1;
        update_weights(&mut self.state.log_w, self.state.index, self.state.n, self.config.n0);
        (sample, mv)
    }
}
