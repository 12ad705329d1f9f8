//! Random-walk Metropolis building blocks shared by the samplers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::BoxSupport;

/// `x + sd ⊙ ε` with ε standard normal; `sd` broadcast if it has one entry.
pub fn rw_propose<R: Rng + ?Sized>(x: &[f64], sd: &[f64], rng: &mut R) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(k, v)| {
            let s = if sd.len() == 1 { sd[0] } else { sd[k] };
            v + s * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// `ln u < log_ratio` for a fresh uniform `u`.
pub fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// Current point and its log target.
#[derive(Debug, Clone)]
pub struct RwState {
    pub x: Vec<f64>,
    pub log_p: f64,
}

/// One random-walk Metropolis step restricted to `support`; proposals
/// outside it are rejected without drawing an acceptance uniform.
pub fn rw_step<R, F>(state: &mut RwState, sd: &[f64], support: &BoxSupport, log_target: F, rng: &mut R) -> bool
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    let prop = rw_propose(&state.x, sd, rng);
    if !support.contains(&prop) {
        return false;
    }
    let lp = log_target(&prop);
    if !lp.is_finite() {
        // still consume the uniform so stream positions do not depend on
        // where the density happens to underflow
        let _: f64 = rng.random();
        return false;
    }
    if accept(lp - state.log_p, rng) {
        state.x = prop;
        state.log_p = lp;
        true
    } else {
        false
    }
}
