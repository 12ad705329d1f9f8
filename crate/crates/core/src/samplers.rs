//! Main-chain drivers for the cut distribution.
//!
//! All four samplers share the same φ chain: a random-walk Metropolis chain
//! on p(φ | Z) driven by its own random stream. φ acceptance never looks at
//! θ, so for a given seed every algorithm produces the same φ path; they
//! differ only in how θ is refreshed.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Algorithm, RunConfig};
use crate::error::{Error, Result};
use crate::grid::AuxGrid;
use crate::mcmc::{rw_propose, rw_step, RwState};
use crate::model::{log_phi_posterior, CutModel};
use crate::partition::PartitionSpec;
use crate::proposal::{pstar_draw_naive, sample_pkappa, weight_process, Store};
use crate::rng::{stream, Stream};
use crate::samc::{AuxChain, SamcConfig};

/// `min{1, exp(log p(φ′|Z) − log p(φ|Z) + q_log_ratio)}`.
pub fn phi_accept_prob<M: CutModel + ?Sized>(model: &M, phi_prev: &[f64], phi_prop: &[f64], q_log_ratio: f64) -> Result<f64> {
    let prev = log_phi_posterior(model, phi_prev)?;
    let prop = log_phi_posterior(model, phi_prop)?;
    Ok(accept_prob(prop, prev, q_log_ratio))
}

fn accept_prob(log_prop: f64, log_prev: f64, q_log_ratio: f64) -> f64 {
    if log_prop == f64::NEG_INFINITY {
        return 0.0;
    }
    let r = log_prop - log_prev + q_log_ratio;
    if r.is_nan() {
        0.0
    } else {
        r.exp().min(1.0)
    }
}

/// Random-walk Metropolis chain on p(φ | Z); proposals outside Φ are
/// rejected without consuming an acceptance uniform.
pub struct PhiChain<'a, M: CutModel + ?Sized> {
    model: &'a M,
    step_sd: Vec<f64>,
    phi: Vec<f64>,
    log_post: f64,
    rng: ChaCha8Rng,
}

impl<'a, M: CutModel + ?Sized> PhiChain<'a, M> {
    pub fn new(model: &'a M, start: Vec<f64>, step_sd: Vec<f64>, rng: ChaCha8Rng) -> Result<Self> {
        check_steps(&step_sd, model.phi_dim(), "phi_step_sd")?;
        let log_post = log_phi_posterior(model, &start)?;
        if !log_post.is_finite() {
            return Err(Error::domain(format!("φ start {start:?} has zero posterior density")));
        }
        Ok(Self { model, step_sd, phi: start, log_post, rng })
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// One update; returns whether the proposal was accepted.
    pub fn step(&mut self) -> bool {
        use rand::Rng;
        let prop = rw_propose(&self.phi, &self.step_sd, &mut self.rng);
        if !self.model.phi_support().contains(&prop) {
            return false;
        }
        let lp = self.model.log_lik_z(&prop) + self.model.log_prior_phi(&prop);
        let a = accept_prob(lp, self.log_post, 0.0);
        let u: f64 = self.rng.random();
        if u < a {
            self.phi = prop;
            self.log_post = lp;
            true
        } else {
            false
        }
    }
}

fn check_steps(sd: &[f64], dim: usize, what: &str) -> Result<()> {
    if sd.is_empty() || (sd.len() != 1 && sd.len() != dim) || sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::arg(format!("{what} must be positive with one entry or {dim}")));
    }
    Ok(())
}

/// Wall-clock seconds spent in each phase of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseTimings {
    /// Auxiliary chain steps and store updates, including the pre-run.
    pub aux: f64,
    /// φ updates.
    pub phi: f64,
    /// θ refreshes (proposal construction and draws, or internal chains).
    pub theta: f64,
    pub total: f64,
}

/// The full (pre burn-in, pre-thinning) output of one chain.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub theta: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    /// Whether φ moved at each iteration.
    pub phi_accepted: Vec<bool>,
    pub phi_accepts: usize,
    /// Number of stored cells after each iteration (SACut and naive only).
    pub store_sizes: Vec<usize>,
    pub timings: PhaseTimings,
    /// Final store (SACut and naive only).
    pub store: Option<Store>,
}

impl ChainTrace {
    fn with_capacity(n: usize) -> Self {
        Self {
            theta: Vec::with_capacity(n),
            phi: Vec::with_capacity(n),
            phi_accepted: Vec::with_capacity(n),
            phi_accepts: 0,
            store_sizes: Vec::new(),
            timings: PhaseTimings::default(),
            store: None,
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn push(&mut self, theta: &[f64], phi: &[f64], accepted: bool) {
        self.theta.push(theta.to_vec());
        self.phi.push(phi.to_vec());
        self.phi_accepted.push(accepted);
        self.phi_accepts += accepted as usize;
    }
}

fn worker_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::arg(format!("cannot build worker pool: {e}")))
}

/// Initial θ and the φ chain. θ₀ and φ₀ are uniform in their boxes; if φ₀
/// has zero density the model's data-informed start is used instead.
fn init<'a, M: CutModel + ?Sized>(model: &'a M, config: &RunConfig, run: u64) -> Result<(Vec<f64>, PhiChain<'a, M>)> {
    let mut rng = stream(config.seed, run, Stream::Init);
    let theta = model.theta_support().sample_uniform(&mut rng);
    let phi0 = model.phi_support().sample_uniform(&mut rng);
    let phi_rng = stream(config.seed, run, Stream::Phi);
    let chain = match log_phi_posterior(model, &phi0) {
        Ok(lp) if lp.is_finite() => PhiChain::new(model, phi0, config.phi_step_sd.clone(), phi_rng)?,
        _ => PhiChain::new(model, model.phi_start(), config.phi_step_sd.clone(), phi_rng)?,
    };
    Ok((theta, chain))
}

fn samc_config(config: &RunConfig) -> SamcConfig {
    SamcConfig {
        n0: config.n0,
        p_mix: config.p_mix,
        theta_step_sd: config.theta_step_sd.clone(),
        neighbours: config.neighbours,
    }
}

fn with_iteration(e: Error, n: usize) -> Error {
    match e {
        Error::DegenerateProposal { .. } => Error::DegenerateProposal { iteration: Some(n) },
        other => other,
    }
}

fn run_store_based<M: CutModel + ?Sized>(model: &M, grid: &AuxGrid, config: &RunConfig, run: u64, naive: bool) -> Result<ChainTrace> {
    let start = Instant::now();
    let spec = PartitionSpec::new(&config.kappa, model.theta_support().clone())?;
    let r_total = spec.cell_count()?;
    let pool = worker_pool(config.workers)?;
    let (mut theta, mut phi_chain) = init(model, config, run)?;
    let mut theta_rng = stream(config.seed, run, Stream::Theta);
    let mut store = if naive { Store::exact() } else { Store::rounded(spec.clone()) };
    let mut trace = ChainTrace::with_capacity(config.n_iterations);
    trace.store_sizes.reserve(config.n_iterations);

    let t = Instant::now();
    let mut aux = AuxChain::new(model, grid, samc_config(config), stream(config.seed, run, Stream::Aux))?;
    for _ in 0..config.aux_prerun {
        aux.step();
    }
    trace.timings.aux += t.elapsed().as_secs_f64();

    for n in 0..config.n_iterations {
        let t = Instant::now();
        let (sample, _) = aux.step();
        store.absorb(&sample, model, grid);
        trace.store_sizes.push(store.len());
        trace.timings.aux += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let accepted = phi_chain.step();
        trace.timings.phi += t.elapsed().as_secs_f64();

        if accepted {
            let t = Instant::now();
            let phi = phi_chain.phi();
            theta = if naive {
                pstar_draw_naive(&store, phi, model, pool.as_ref(), &mut theta_rng).map_err(|e| with_iteration(e, n))?
            } else {
                let probs = store.pstar(phi, model, pool.as_ref()).map_err(|e| with_iteration(e, n))?;
                let w = weight_process(probs, store.n(), r_total)?;
                sample_pkappa(&w, &spec, &mut theta_rng)
            };
            trace.timings.theta += t.elapsed().as_secs_f64();
        }
        trace.push(&theta, phi_chain.phi(), accepted);
    }
    trace.store = Some(store);
    trace.timings.total = start.elapsed().as_secs_f64();
    Ok(trace)
}

/// SACut: the auxiliary chain feeds a rounded store; at each accepted φ the
/// new θ is drawn from the piecewise-uniform proposal built for that φ.
pub fn run_sacut<M: CutModel + ?Sized>(model: &M, grid: &AuxGrid, config: &RunConfig, run: u64) -> Result<ChainTrace> {
    run_store_based(model, grid, config, run, false)
}

/// Naive SACut: as [`run_sacut`] but θ is drawn among the exact stored
/// auxiliary values.
pub fn run_naive_sacut<M: CutModel + ?Sized>(model: &M, grid: &AuxGrid, config: &RunConfig, run: u64) -> Result<ChainTrace> {
    run_store_based(model, grid, config, run, true)
}

/// Nested MCMC: after each φ update, `n_int` random-walk steps on θ
/// targeting p(θ | Y, φₙ). `n_int = 1` is the classic cut algorithm of
/// WinBUGS.
pub fn run_nested_mcmc<M: CutModel + ?Sized>(model: &M, config: &RunConfig, run: u64) -> Result<ChainTrace> {
    if config.n_int == 0 {
        return Err(Error::arg("n_int must be at least 1"));
    }
    check_steps(&config.theta_step_sd, model.theta_dim(), "theta_step_sd")?;
    let start = Instant::now();
    let (theta, mut phi_chain) = init(model, config, run)?;
    let mut rng = stream(config.seed, run, Stream::Theta);
    let target = |t: &[f64], phi: &[f64]| model.log_lik_y(t, phi) + model.log_prior_theta(t);
    let mut state = RwState { log_p: target(&theta, phi_chain.phi()), x: theta };
    let mut trace = ChainTrace::with_capacity(config.n_iterations);
    for _ in 0..config.n_iterations {
        let t = Instant::now();
        let accepted = phi_chain.step();
        trace.timings.phi += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let phi = phi_chain.phi();
        if accepted {
            state.log_p = target(&state.x, phi);
        }
        for _ in 0..config.n_int {
            rw_step(&mut state, &config.theta_step_sd, model.theta_support(), |x| target(x, phi), &mut rng);
        }
        trace.timings.theta += t.elapsed().as_secs_f64();
        trace.push(&state.x, phi, accepted);
    }
    trace.timings.total = start.elapsed().as_secs_f64();
    Ok(trace)
}

/// Partial Gibbs: θ is drawn exactly from p(θ | Y, φₙ) at each accepted φ.
pub fn run_partial_gibbs<M: CutModel + ?Sized>(model: &M, config: &RunConfig, run: u64) -> Result<ChainTrace> {
    if !model.has_exact_conditional() {
        return Err(Error::Unsupported(format!("model {} has no exact θ sampler", model.name())));
    }
    let start = Instant::now();
    let (mut theta, mut phi_chain) = init(model, config, run)?;
    let mut rng = stream(config.seed, run, Stream::Theta);
    let mut trace = ChainTrace::with_capacity(config.n_iterations);
    for _ in 0..config.n_iterations {
        let t = Instant::now();
        let accepted = phi_chain.step();
        trace.timings.phi += t.elapsed().as_secs_f64();
        if accepted {
            let t = Instant::now();
            theta = model
                .sample_theta_exact(phi_chain.phi(), &mut rng)
                .ok_or_else(|| Error::Unsupported(format!("model {} has no exact θ sampler", model.name())))?;
            trace.timings.theta += t.elapsed().as_secs_f64();
        }
        trace.push(&theta, phi_chain.phi(), accepted);
    }
    trace.timings.total = start.elapsed().as_secs_f64();
    Ok(trace)
}

/// Dispatches on `config.algorithm`. The grid is needed by SACut and naive
/// SACut only.
pub fn run_chain<M: CutModel + ?Sized>(model: &M, grid: Option<&AuxGrid>, config: &RunConfig, run: u64) -> Result<ChainTrace> {
    let need_grid = || grid.ok_or_else(|| Error::arg("this algorithm needs an auxiliary grid"));
    match config.algorithm {
        Algorithm::Sacut => run_sacut(model, need_grid()?, config, run),
        Algorithm::Naive => run_naive_sacut(model, need_grid()?, config, run),
        Algorithm::Nested => run_nested_mcmc(model, config, run),
        Algorithm::Gibbs => run_partial_gibbs(model, config, run),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::ks_distance;
    use crate::model::testing::{shift, Independent};
    use crate::model::{BoxSupport, ConjugateToy};
    use crate::stats::std_normal_cdf;

    fn quick(algorithm: Algorithm, n: usize) -> RunConfig {
        RunConfig {
            algorithm,
            n_iterations: n,
            aux_prerun: 1000,
            seed: 11,
            m: 10,
            ..RunConfig::default()
        }
    }

    fn toy() -> ConjugateToy {
        ConjugateToy::new(1.0, 0.0, 1.0).unwrap()
    }

    fn toy_grid() -> AuxGrid {
        AuxGrid::from_points((0..10).map(|i| vec![-2.0 + 4.0 * i as f64 / 9.0]).collect()).unwrap()
    }

    #[test]
    fn accept_prob_examples() {
        let m = shift(1.0);
        assert_eq!(phi_accept_prob(&m, &[0.5], &[-0.5], 0.0).unwrap(), 1.0);
        let half = phi_accept_prob(&m, &[0.0], &[(2.0 * 2f64.ln()).sqrt()], 0.0).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        assert_eq!(accept_prob(f64::NEG_INFINITY, -1.0, 0.0), 0.0);
        assert!(phi_accept_prob(&m, &[0.0], &[20.0], 0.0).is_err());
    }

    #[test]
    fn phi_path_is_algorithm_independent() {
        let model = toy();
        let grid = toy_grid();
        let mut paths = Vec::new();
        for alg in [Algorithm::Sacut, Algorithm::Naive, Algorithm::Nested, Algorithm::Gibbs] {
            let t = run_chain(&model, Some(&grid), &quick(alg, 2000), 0).unwrap();
            paths.push(t.phi);
        }
        assert!(paths.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn theta_moves_only_on_phi_acceptance() {
        let model = toy();
        let grid = toy_grid();
        for alg in [Algorithm::Sacut, Algorithm::Naive, Algorithm::Gibbs] {
            let t = run_chain(&model, Some(&grid), &quick(alg, 3000), 0).unwrap();
            assert_eq!(t.len(), 3000);
            for n in 1..t.len() {
                if t.theta[n] != t.theta[n - 1] {
                    assert!(t.phi_accepted[n], "{alg} moved θ at a rejected iteration {n}");
                }
            }
            assert!(t.theta.iter().all(|x| model.theta_support().contains(x)));
            assert!(t.phi.iter().all(|x| model.phi_support().contains(x)));
        }
    }

    #[test]
    fn naive_draws_come_from_the_auxiliary_stream() {
        let model = toy();
        let grid = toy_grid();
        let t = run_naive_sacut(&model, &grid, &quick(Algorithm::Naive, 1500), 0).unwrap();
        let store = t.store.unwrap();
        let first_move = t.phi_accepted.iter().position(|a| *a).unwrap();
        for th in &t.theta[first_move..] {
            let found = store.keys().any(|k| store.point(k).unwrap() == th.as_slice());
            assert!(found);
        }
    }

    #[test]
    fn single_cell_theta_box_is_constant_for_naive() {
        // a one-point θ support is impossible for a box, so use a θ box so
        // narrow that the auxiliary chain can only emit its start value
        let model = Independent {
            theta: BoxSupport::cube(0.0, 1e-300, 1).unwrap(),
            phi: BoxSupport::cube(-5.0, 5.0, 1).unwrap(),
            constant: 0.0,
        };
        let grid = AuxGrid::from_points(vec![vec![-1.0], vec![1.0]]).unwrap();
        let cfg = RunConfig { theta_step_sd: vec![1.0], ..quick(Algorithm::Naive, 500) };
        let t = run_naive_sacut(&model, &grid, &cfg, 0).unwrap();
        let first = t.phi_accepted.iter().position(|a| *a).unwrap();
        assert!(t.theta[first..].windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn phi_independent_likelihood_gives_theta_posterior() {
        let model = Independent {
            theta: BoxSupport::cube(-6.0, 6.0, 1).unwrap(),
            phi: BoxSupport::cube(-6.0, 6.0, 1).unwrap(),
            constant: 0.0,
        };
        let grid = AuxGrid::from_points(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        // the true weights are all equal here; a small gain keeps their noise
        // from dominating a short run
        let cfg = RunConfig { phi_step_sd: vec![2.0], theta_step_sd: vec![1.0], n0: 10, ..quick(Algorithm::Sacut, 20_000) };
        let t = run_sacut(&model, &grid, &cfg, 0).unwrap();
        let xs: Vec<f64> = t.theta[2000..].iter().map(|v| v[0]).collect();
        let ks = ks_distance(&xs, std_normal_cdf);
        assert!(ks < 0.06, "{ks} mean {}", crate::stats::mean(&xs));
    }

    #[test]
    fn nested_phi_path_ignores_n_int() {
        let model = toy();
        let a = run_nested_mcmc(&model, &quick(Algorithm::Nested, 1000), 0).unwrap();
        let b = run_nested_mcmc(&model, &RunConfig { n_int: 7, ..quick(Algorithm::Nested, 1000) }, 0).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_ne!(a.theta, b.theta);
    }

    #[test]
    fn gibbs_requires_an_exact_sampler() {
        let m = shift(1.0);
        assert!(matches!(run_partial_gibbs(&m, &quick(Algorithm::Gibbs, 100), 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn degenerate_phi_box_gives_iid_gibbs_draws() {
        let model = toy().with_phi_support(BoxSupport::cube(0.0, 1e-12, 1).unwrap()).unwrap();
        let cfg = RunConfig { phi_step_sd: vec![1e-14], ..quick(Algorithm::Gibbs, 4000) };
        let t = run_partial_gibbs(&model, &cfg, 0).unwrap();
        assert!(t.phi_accepts > 3000);
        let xs: Vec<f64> = t.theta.iter().map(|v| v[0]).collect();
        // p(θ | y = 1, φ ≈ 0) = N(0, 1)
        let ks = ks_distance(&xs, std_normal_cdf);
        assert!(ks < 0.04, "{ks}");
    }

    #[test]
    fn worker_count_does_not_change_the_trace() {
        let model = toy();
        let grid = toy_grid();
        let a = run_sacut(&model, &grid, &quick(Algorithm::Sacut, 1500), 0).unwrap();
        let b = run_sacut(&model, &grid, &RunConfig { workers: 3, ..quick(Algorithm::Sacut, 1500) }, 0).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.store_sizes, b.store_sizes);
    }
}
