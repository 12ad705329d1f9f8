//! Convergence and accuracy diagnostics, and the orthotope-count analysis.

use std::collections::HashSet;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::BoxSupport;
use crate::partition::PartitionSpec;
use crate::rng::replicate;
use crate::stats::{mean, quantile_sorted, sorted, variance};

/// Classic (non-split) potential scale reduction factor
/// `√((((n − 1)/n)·W + B/n) / W)`.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::arg("R-hat needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::arg("R-hat needs equal-length chains of at least 10 draws"));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return Err(Error::DegenerateChains("zero within-chain variance".into()));
    }
    let nf = n as f64;
    let b = nf * variance(&means);
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

/// R-hat after splitting every chain into halves (odd middle draw dropped).
pub fn gelman_rubin_split(chains: &[Vec<f64>]) -> Result<f64> {
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        halves.push(c[..h].to_vec());
        halves.push(c[c.len() - h..].to_vec());
    }
    gelman_rubin(&halves)
}

/// Lag-1 sample autocorrelation `Σ (xₜ − x̄)(xₜ₊₁ − x̄) / Σ (xₜ − x̄)²`.
pub fn lag1_autocorr(trace: &[f64]) -> Result<f64> {
    if trace.len() < 3 {
        return Err(Error::arg("autocorrelation needs at least 3 values"));
    }
    let m = mean(trace);
    let denom: f64 = trace.iter().map(|x| (x - m) * (x - m)).sum();
    if !(denom > 0.0) {
        return Err(Error::DegenerateChains("zero variance trace".into()));
    }
    let num: f64 = trace.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    Ok((num / denom).clamp(-1.0, 1.0))
}

/// Mean of squared componentwise errors.
pub fn mse_components(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() || truth.is_empty() {
        return Err(Error::arg(format!("{} estimates for {} true values", estimates.len(), truth.len())));
    }
    Ok(estimates.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / truth.len() as f64)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let s = sorted(samples);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Matched empirical quantiles at `count` equally spaced probabilities from 0 to 1.
pub fn qq_pairs(a: &[f64], b: &[f64], count: usize) -> Result<Vec<(f64, f64)>> {
    if count < 2 {
        return Err(Error::arg("need at least two quantiles"));
    }
    let probs: Vec<f64> = (0..count).map(|k| k as f64 / (count - 1) as f64).collect();
    qq_pairs_at(a, b, &probs)
}

/// Matched empirical quantiles at the given probabilities.
pub fn qq_pairs_at(a: &[f64], b: &[f64], probs: &[f64]) -> Result<Vec<(f64, f64)>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("quantile comparison needs nonempty samples"));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    Ok(probs.iter().map(|p| (quantile_sorted(&sa, *p), quantile_sorted(&sb, *p))).collect())
}

/// Probabilities 0.01, 0.02, …, 0.99.
pub fn central_probs() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Largest quantile gap over the central 98%.
pub fn max_central_deviation(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(qq_pairs_at(a, b, &central_probs())?.iter().map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Expected number of distinct cells among `n` uniform draws over `r_total`
/// equally likely cells: `R − R((R − 1)/R)ⁿ`.
pub fn expected_cells(r_total: u64, n: u64) -> f64 {
    let r = r_total as f64;
    -r * (n as f64 * (-1.0 / r).ln_1p()).exp_m1()
}

/// Cell count of `[−5·10^(−κ−1), 1 + 5·10^(−κ−1)]^d` at precision κ.
pub fn unit_cells(d: usize, kappa: u32) -> Result<u64> {
    let half = 0.5 / 10f64.powi(kappa as i32);
    PartitionSpec::new(&[kappa], BoxSupport::cube(-half, 1.0 + half, d)?)?.cell_count()
}

/// [`expected_cells`] for the padded unit cube.
pub fn expected_cells_uniform(d: usize, kappa: u32, n: u64) -> Result<f64> {
    Ok(expected_cells(unit_cells(d, kappa)?, n))
}

/// Monte Carlo mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_values(v: &[f64]) -> Self {
        let se = if v.len() > 1 { (variance(v) / v.len() as f64).sqrt() } else { 0.0 };
        Self { mean: mean(v), se }
    }
}

/// Distinct cells visited by `n` i.i.d. draws from `sampler`, over
/// `replicates` independent replicates.
pub fn simulate_cells_visited<F>(sampler: F, spec: &PartitionSpec, n: u64, replicates: usize, seed: u64) -> Result<Estimate>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    Ok(simulate_cells_curve(sampler, spec, &[n], replicates, seed)?[0])
}

/// As [`simulate_cells_visited`], reporting the count at each checkpoint of
/// one growing sequence of draws. Checkpoints must be increasing.
pub fn simulate_cells_curve<F>(
    sampler: F,
    spec: &PartitionSpec,
    checkpoints: &[u64],
    replicates: usize,
    seed: u64,
) -> Result<Vec<Estimate>>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    if replicates < 30 {
        return Err(Error::arg("at least 30 replicates are required"));
    }
    if checkpoints.is_empty() || checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("checkpoints must be positive and increasing"));
    }
    let counts: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate(seed, r as u64);
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut drawn = 0;
            for &c in checkpoints {
                while drawn < c {
                    seen.insert(spec.key(&sampler(&mut rng)));
                    drawn += 1;
                }
                out.push(seen.len() as f64);
            }
            out
        })
        .collect();
    Ok((0..checkpoints.len())
        .map(|k| Estimate::from_values(&counts.iter().map(|c| c[k]).collect::<Vec<_>>()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::std_normal_cdf;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rhat_examples() {
        let c: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let r = gelman_rubin(&[c.clone(), c.clone()]).unwrap();
        assert!((r - (19.0f64 / 20.0).sqrt()).abs() < 1e-12);
        assert!(matches!(gelman_rubin(&[vec![1.0; 20], vec![2.0; 20]]), Err(Error::DegenerateChains(_))));
        assert!(gelman_rubin(&[c.clone()]).is_err());
    }

    #[test]
    fn rhat_iid_chains() {
        let mut rng = replicate(1, 0);
        let chains: Vec<Vec<f64>> = (0..4).map(|_| (0..10_000).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let r = gelman_rubin(&chains).unwrap();
        assert!((0.99..=1.05).contains(&r), "{r}");
        let rs = gelman_rubin_split(&chains).unwrap();
        assert!((0.99..=1.05).contains(&rs), "{rs}");
    }

    #[test]
    fn autocorrelation_examples() {
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((lag1_autocorr(&alt).unwrap() + 1.0).abs() < 2e-3);
        let pairs: Vec<f64> = (0..1000).map(|i| ((i / 2) as f64 * 1.7).sin()).collect();
        assert!(lag1_autocorr(&pairs).unwrap() > 0.0);
        let mut rng = replicate(2, 0);
        let iid: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(lag1_autocorr(&iid).unwrap().abs() < 0.05);
        assert!(lag1_autocorr(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_components(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mse_components(&[0.1, -0.1], &[0.0, 0.0]).unwrap() - 0.01).abs() < 1e-15);
        let truth: Vec<f64> = (1..=20).map(|p| (p as f64).sin()).collect();
        let est: Vec<f64> = truth.iter().map(|t| t + 0.01).collect();
        assert!((mse_components(&est, &truth).unwrap() - 1e-4).abs() < 1e-12);
        assert!(mse_components(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[0.0], std_normal_cdf), 0.5);
        assert_eq!(ks_distance(&[-1.0, -2.0], |x| if x < 0.0 { 0.0 } else { x.min(1.0) }), 1.0);
        let mut rng = replicate(3, 0);
        let s: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(ks_distance(&s, std_normal_cdf) < 0.02);
    }

    #[test]
    fn qq_examples() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).cos()).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        assert!(qq_pairs(&a, &a, 11).unwrap().iter().all(|(x, y)| x == y));
        assert!(qq_pairs(&a, &b, 11).unwrap().iter().all(|(x, y)| (y - x - 1.0).abs() < 1e-12));
        assert!((max_central_deviation(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_cells_examples() {
        assert_eq!(unit_cells(1, 1).unwrap(), 11);
        assert_eq!(unit_cells(1, 2).unwrap(), 101);
        assert_eq!(unit_cells(2, 1).unwrap(), 121);
        assert!((expected_cells_uniform(1, 1, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((expected_cells_uniform(3, 2, 1).unwrap() - 1.0).abs() < 1e-6);
        assert!((expected_cells_uniform(1, 1, 2).unwrap() - (11.0 - 100.0 / 11.0)).abs() < 1e-12);
        assert!((expected_cells_uniform(1, 1, 10_000).unwrap() - 11.0).abs() < 1e-9);
    }

    #[test]
    fn simulated_cells_match_closed_form() {
        let half = 0.05;
        let spec = PartitionSpec::new(&[1], BoxSupport::cube(-half, 1.0 + half, 1).unwrap()).unwrap();
        let est = simulate_cells_visited(|r| vec![r.random_range(-half..1.0 + half)], &spec, 2, 1000, 5).unwrap();
        assert!((est.mean - 1.9091).abs() < 3.0 * est.se + 1e-4, "{est:?}");
        let point = simulate_cells_visited(|_| vec![0.3], &spec, 50, 30, 5).unwrap();
        assert_eq!(point.mean, 1.0);
        assert!(simulate_cells_visited(|_| vec![0.3], &spec, 50, 29, 5).is_err());
    }

    proptest! {
        #[test]
        fn rhat_affine_invariant(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let mut rng = replicate(seed, 0);
            let chains: Vec<Vec<f64>> = (0..3).map(|_| (0..50).map(|_| rng.random::<f64>()).collect()).collect();
            let moved: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|x| a * x + b).collect()).collect();
            let r1 = gelman_rubin(&chains).unwrap();
            let r2 = gelman_rubin(&moved).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
            prop_assert!(r1 >= (49.0f64 / 50.0).sqrt() - 1e-12);
        }

        #[test]
        fn expected_cells_monotone_and_bounded(d in 1usize..3, kappa in 0u32..3, n in 1u64..5000) {
            let r = unit_cells(d, kappa).unwrap() as f64;
            let e1 = expected_cells_uniform(d, kappa, n).unwrap();
            let e2 = expected_cells_uniform(d, kappa, n + 1).unwrap();
            prop_assert!(e1 >= 1.0 - 1e-9 && e1 <= r + 1e-9);
            prop_assert!(e2 >= e1 - 1e-9);
        }
    }
}
