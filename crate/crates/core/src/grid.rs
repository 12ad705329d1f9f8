//! The auxiliary φ grid: Max-Min selection from posterior draws, and the
//! coverage and overlap checks used to validate it.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::gelman_rubin;
use crate::error::{Error, Result};
use crate::mcmc::{rw_step, RwState};
use crate::model::{log_joint_y, log_phi_posterior, BoxSupport, CutModel};
use crate::rng::{replicate, stream, Stream};
use crate::stats::{quantile_sorted, sorted};

/// The pre-selected φ values at which the auxiliary chain operates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxGrid {
    points: Vec<Vec<f64>>,
    std_lower: Vec<f64>,
    std_upper: Vec<f64>,
    /// Candidate index of the first Max-Min pick, when selected that way.
    first_pick: Option<usize>,
}

impl AuxGrid {
    /// A grid with explicit standardization bounds (`upper > lower` per coordinate).
    pub fn new(points: Vec<Vec<f64>>, std_lower: Vec<f64>, std_upper: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::arg("grid has no points"));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) || std_lower.len() != d || std_upper.len() != d {
            return Err(Error::arg("grid points and bounds must share one nonzero dimension"));
        }
        if let Some(k) = (0..d).find(|&k| !(std_upper[k] > std_lower[k])) {
            return Err(Error::Standardization { coordinate: k });
        }
        for i in 0..points.len() {
            if points[i].iter().any(|v| !v.is_finite()) {
                return Err(Error::arg(format!("grid point {i} is not finite")));
            }
            if points[..i].contains(&points[i]) {
                return Err(Error::arg(format!("grid point {i} is a duplicate")));
            }
        }
        Ok(Self { points, std_lower, std_upper, first_pick: None })
    }

    /// A grid standardized by the range of its own points; coordinates with
    /// zero range get unit scale.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let d = points.first().map_or(0, Vec::len);
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in &points {
            for k in 0..d.min(p.len()) {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        for k in 0..d {
            if !(hi[k] > lo[k]) {
                hi[k] = lo[k] + 1.0;
            }
        }
        Self::new(points, lo, hi)
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.std_lower.len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn first_pick(&self) -> Option<usize> {
        self.first_pick
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, v)| (v - self.std_lower[k]) / (self.std_upper[k] - self.std_lower[k]))
            .collect()
    }

    fn std_dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(k, (x, y))| {
                let r = (x - y) / (self.std_upper[k] - self.std_lower[k]);
                r * r
            })
            .sum()
    }

    /// Indices of the `k` nearest other points of point `i` (standardized
    /// Euclidean distance, ties to the lower index).
    pub fn nearest(&self, i: usize, k: usize) -> Vec<usize> {
        let mut others: Vec<(f64, usize)> = (0..self.m())
            .filter(|&j| j != i)
            .map(|j| (self.std_dist2(&self.points[i], &self.points[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        others.into_iter().take(k).map(|(_, j)| j).collect()
    }

    /// Symmetric neighbour sets: `j ∈ N(i)` iff `j` is among the `k` nearest
    /// of `i` or `i` among the `k` nearest of `j`. Each set is sorted.
    pub fn neighbour_sets(&self, k: usize) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.m()];
        for i in 0..self.m() {
            for j in self.nearest(i, k) {
                sets[i].push(j);
                sets[j].push(i);
            }
        }
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        sets
    }

    pub fn inside(&self, support: &BoxSupport) -> bool {
        self.points.iter().all(|p| support.contains(p))
    }
}

/// Draws from p(φ | Z) and the chain's acceptance rate.
#[derive(Debug, Clone)]
pub struct PhiDraws {
    pub draws: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub warning: Option<String>,
}

/// Random-walk Metropolis on log p(φ | Z) from the model's starting point:
/// `5·count` iterations, the first fifth discarded, then every fourth kept.
pub fn sample_phi_marginal<M: CutModel + ?Sized>(model: &M, count: usize, step_sd: &[f64], seed: u64) -> Result<PhiDraws> {
    if count == 0 {
        return Err(Error::arg("count must be positive"));
    }
    if step_sd.is_empty() || step_sd.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::arg("step sizes must be positive"));
    }
    if step_sd.len() != 1 && step_sd.len() != model.phi_dim() {
        return Err(Error::arg("step_sd length must be 1 or the φ dimension"));
    }
    let support = model.phi_support();
    let start: Vec<f64> = model
        .phi_start()
        .iter()
        .enumerate()
        .map(|(k, v)| v.clamp(support.lower()[k], support.upper()[k]))
        .collect();
    let mut state = RwState { log_p: log_phi_posterior(model, &start)?, x: start };
    let mut rng = stream(seed, 0, Stream::Misc);
    let target = |phi: &[f64]| model.log_lik_z(phi) + model.log_prior_phi(phi);
    let burn = count;
    let total = 5 * count;
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(count);
    for it in 0..total {
        if rw_step(&mut state, step_sd, support, target, &mut rng) {
            accepted += 1;
        }
        if it >= burn && (it - burn) % 4 == 3 {
            draws.push(state.x.clone());
        }
    }
    let acceptance_rate = accepted as f64 / total as f64;
    let warning = (acceptance_rate < 0.01)
        .then(|| format!("φ sampler acceptance rate {acceptance_rate:.4} is below 1%; reduce the step size"));
    Ok(PhiDraws { draws, acceptance_rate, warning })
}

/// Max-Min selection with a first pick drawn from `seed`.
pub fn max_min_select(candidates: &[Vec<f64>], m: usize, seed: u64) -> Result<AuxGrid> {
    if candidates.is_empty() {
        return Err(Error::arg("no candidates"));
    }
    let first = stream(seed, 0, Stream::Misc).random_range(0..candidates.len());
    max_min_select_from(candidates, m, first)
}

/// Max-Min selection starting from candidate `first`: repeatedly add the
/// candidate whose distance to the selected set is largest (standardized
/// Euclidean distance, ties to the lower index).
pub fn max_min_select_from(candidates: &[Vec<f64>], m: usize, first: usize) -> Result<AuxGrid> {
    let n = candidates.len();
    if m == 0 || m > n {
        return Err(Error::arg(format!("cannot select {m} points from {n} candidates")));
    }
    if first >= n {
        return Err(Error::arg("first pick out of range"));
    }
    let d = candidates[0].len();
    if d == 0 || candidates.iter().any(|c| c.len() != d) {
        return Err(Error::arg("candidates must share one nonzero dimension"));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for c in candidates {
        for k in 0..d {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    if let Some(k) = (0..d).find(|&k| !(hi[k] > lo[k])) {
        return Err(Error::Standardization { coordinate: k });
    }
    let std: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| (0..d).map(|k| (c[k] - lo[k]) / (hi[k] - lo[k])).collect())
        .collect();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut min_d: Vec<f64> = std.iter().map(|c| dist2(c, &std[first])).collect();
    while chosen.len() < m {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !taken[j] && best.is_none_or(|b| min_d[j] > min_d[b]) {
                best = Some(j);
            }
        }
        let b = best.expect("m ≤ n leaves a candidate");
        if min_d[b] == 0.0 {
            return Err(Error::arg(format!("only {} distinct candidates, {m} requested", chosen.len())));
        }
        taken[b] = true;
        chosen.push(b);
        for j in 0..n {
            min_d[j] = min_d[j].min(dist2(&std[j], &std[b]));
        }
    }
    let mut grid = AuxGrid::new(chosen.iter().map(|&i| candidates[i].clone()).collect(), lo, hi)?;
    grid.first_pick = Some(first);
    Ok(grid)
}

/// Fraction of candidates inside the convex hull of the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub ratio: f64,
    pub warning: Option<String>,
}

/// Coverage ratio of the grid over `candidates`, with hull membership decided
/// by a linear feasibility problem in standardized coordinates.
pub fn coverage_ratio(grid: &AuxGrid, candidates: &[Vec<f64>]) -> Result<Coverage> {
    if candidates.is_empty() {
        return Err(Error::arg("no candidates"));
    }
    let d = grid.dim();
    if d > 10 {
        return Err(Error::arg("coverage ratio supports at most 10 dimensions"));
    }
    if candidates.iter().any(|c| c.len() != d) {
        return Err(Error::arg("candidate dimension differs from the grid"));
    }
    if grid.m() < d + 1 {
        return Ok(Coverage {
            ratio: 0.0,
            warning: Some(format!("{} grid points cannot span a {d}-dimensional hull", grid.m())),
        });
    }
    let verts: Vec<Vec<f64>> = grid.points().iter().map(|p| grid.standardize(p)).collect();
    let inside: Vec<bool> = candidates
        .par_iter()
        .map(|c| in_hull(&grid.standardize(c), &verts))
        .collect();
    let count = inside.iter().filter(|b| **b).count();
    Ok(Coverage { ratio: count as f64 / candidates.len() as f64, warning: None })
}

const HULL_TOL: f64 = 1e-9;

/// Whether `x` is a convex combination of `verts`, by phase-one simplex
/// (Bland's rule) on `Σ λᵢ vᵢ = x, Σ λᵢ = 1, λ ≥ 0`.
pub fn in_hull(x: &[f64], verts: &[Vec<f64>]) -> bool {
    let d = x.len();
    for k in 0..d {
        let lo = verts.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
        let hi = verts.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
        if x[k] < lo - HULL_TOL || x[k] > hi + HULL_TOL {
            return false;
        }
    }
    let m = verts.len();
    let rows = d + 1;
    // columns: m λ's, rows artificials, then the right-hand side
    let cols = m + rows + 1;
    let mut t = vec![vec![0.0; cols]; rows + 1];
    for r in 0..rows {
        let b = if r < d { x[r] } else { 1.0 };
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            t[r][j] = sign * if r < d { verts[j][r] } else { 1.0 };
        }
        t[r][m + r] = 1.0;
        t[r][cols - 1] = sign * b;
    }
    // objective row: minimize the sum of artificials, in reduced form
    for j in 0..cols {
        if j >= m && j < m + rows {
            continue;
        }
        t[rows][j] = -(0..rows).map(|r| t[r][j]).sum::<f64>();
    }
    let mut basis: Vec<usize> = (m..m + rows).collect();
    for _ in 0..10_000 {
        let Some(enter) = (0..m + rows).find(|&j| t[rows][j] < -HULL_TOL) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for r in 0..rows {
            if t[r][enter] > HULL_TOL {
                let ratio = t[r][cols - 1] / t[r][enter];
                let better = ratio < best - 1e-15
                    || ((ratio - best).abs() <= 1e-15 && leave.is_some_and(|l| basis[r] < basis[l]));
                if better {
                    best = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(p) = leave else { break };
        let piv = t[p][enter];
        for v in t[p].iter_mut() {
            *v /= piv;
        }
        for r in 0..=rows {
            if r != p {
                let f = t[r][enter];
                if f != 0.0 {
                    for j in 0..cols {
                        t[r][j] -= f * t[p][j];
                    }
                }
            }
        }
        basis[p] = enter;
    }
    -t[rows][cols - 1] <= 1e-7
}

/// Whether a grid point's inter-quartile box meets those of its neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapFlag {
    Overlaps,
    Disjoint,
    Unknown,
}

/// Inter-quartile boxes of p(θ | Y, φ₀⁽ⁱ⁾), or `None` if the two internal
/// chains disagree (R-hat above 1.5 in some coordinate).
fn iqr_box<M: CutModel + ?Sized>(model: &M, phi: &[f64], draws: usize, seed: u64, index: u64) -> Result<Option<Vec<(f64, f64)>>> {
    let support = model.theta_support();
    let d = support.dim();
    let mut rng = replicate(seed, index);
    let starts = [support.midpoint(), support.sample_uniform(&mut rng)];
    let target = |t: &[f64]| model.log_lik_y(t, phi) + model.log_prior_theta(t);
    let mut chains: Vec<Vec<Vec<f64>>> = Vec::with_capacity(2);
    for start in starts {
        let mut state = RwState { log_p: log_joint_y(model, &start, phi)?, x: start };
        let mut sd: Vec<f64> = support.widths().iter().map(|w| 0.1 * w).collect();
        let burn = 2 * draws;
        let batch = 50;
        let mut acc = 0usize;
        for it in 0..burn {
            if rw_step(&mut state, &sd, support, target, &mut rng) {
                acc += 1;
            }
            if (it + 1) % batch == 0 {
                let rate = acc as f64 / batch as f64;
                let f = (2.0 * (rate - 0.44)).exp();
                sd.iter_mut().for_each(|s| *s *= f);
                acc = 0;
            }
        }
        let mut out = Vec::with_capacity(draws);
        for _ in 0..draws {
            rw_step(&mut state, &sd, support, target, &mut rng);
            out.push(state.x.clone());
        }
        chains.push(out);
    }
    let mut boxes = Vec::with_capacity(d);
    for k in 0..d {
        let per_chain: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|t| t[k]).collect()).collect();
        match gelman_rubin(&per_chain) {
            Ok(r) if r <= 1.5 => {}
            Ok(_) | Err(Error::DegenerateChains(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
        let pooled = sorted(&per_chain.concat());
        boxes.push((quantile_sorted(&pooled, 0.25), quantile_sorted(&pooled, 0.75)));
    }
    Ok(Some(boxes))
}

/// For each grid point, whether its inter-quartile θ box intersects those of
/// its two nearest grid neighbours.
pub fn overlap_summary<M: CutModel + ?Sized>(model: &M, grid: &AuxGrid, draws_per_point: usize, seed: u64) -> Result<Vec<OverlapFlag>> {
    if draws_per_point < 100 {
        return Err(Error::arg("at least 100 draws per grid point are required"));
    }
    let boxes: Vec<Option<Vec<(f64, f64)>>> = (0..grid.m())
        .into_par_iter()
        .map(|i| iqr_box(model, grid.point(i), draws_per_point, seed, i as u64))
        .collect::<Result<_>>()?;
    let meets = |a: &[(f64, f64)], b: &[(f64, f64)]| a.iter().zip(b).all(|(x, y)| x.0 <= y.1 && y.0 <= x.1);
    Ok((0..grid.m())
        .map(|i| {
            let Some(own) = &boxes[i] else { return OverlapFlag::Unknown };
            let mut flag = OverlapFlag::Overlaps;
            for j in grid.nearest(i, 2) {
                match &boxes[j] {
                    None => return OverlapFlag::Unknown,
                    Some(other) if !meets(own, other) => flag = OverlapFlag::Disjoint,
                    Some(_) => {}
                }
            }
            flag
        })
        .collect())
}
