//! Importance-weight stores built from the auxiliary stream, and the
//! proposal distributions for θ derived from them.
//!
//! Every absorbed auxiliary draw `(θ̃ⱼ, iⱼ, w̃ⱼ₋₁)` adds
//! `w̃ⱼ₋₁⁽ⁱ⁾ / p(Y | θ, φ₀⁽ⁱ⁾)` to the accumulator of its cell (rounded store)
//! or of its exact value (naive store). For a query φ′ the cell probability
//! is then proportional to `Aᵣ · p(Y | θᵣ, φ′)` with `Aᵣ = Σᵢ A[r, i]`, which
//! costs one likelihood evaluation per stored cell.
//!
//! The emitted weights are kept with maximum 0; the store restores the
//! normalization `Σᵢ log w̃ᵢ = 0` (which the weight update preserves) before
//! using them, so draws taken under different shifts are weighted
//! consistently.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::AuxGrid;
use crate::model::CutModel;
use crate::partition::{CellKey, PartitionSpec};
use crate::samc::AuxSample;
use crate::stats::{log_add_exp, log_sum_exp};

/// How auxiliary draws are grouped.
#[derive(Debug, Clone, PartialEq)]
pub enum Keying {
    /// By partition cell; likelihoods at the cell representative.
    Rounded(PartitionSpec),
    /// By exact θ̃ value; likelihoods at θ̃ itself.
    Exact,
}

#[derive(Debug, Clone)]
struct Term {
    index: usize,
    log_a: f64,
    log_lik: f64,
}

#[derive(Debug, Clone)]
struct Entry {
    theta: Vec<f64>,
    terms: Vec<Term>,
    log_total: f64,
    visits: u64,
}

/// Accumulated importance weights over visited cells (or exact values).
#[derive(Debug, Clone)]
pub struct Store {
    keying: Keying,
    cells: BTreeMap<CellKey, Entry>,
    n: u64,
    skipped: u64,
}

fn exact_key(theta: &[f64]) -> CellKey {
    // order-preserving map of f64 bits onto i64
    theta
        .iter()
        .map(|x| {
            let b = x.to_bits() as i64;
            if b < 0 {
                b ^ i64::MAX
            } else {
                b
            }
        })
        .collect()
}

fn shifted_weight(log_w: &[f64], index: usize) -> f64 {
    log_w[index] - log_w.iter().sum::<f64>() / log_w.len() as f64
}

impl Store {
    pub fn rounded(spec: PartitionSpec) -> Self {
        Self::new(Keying::Rounded(spec))
    }

    pub fn exact() -> Self {
        Self::new(Keying::Exact)
    }

    pub fn new(keying: Keying) -> Self {
        Self { keying, cells: BTreeMap::new(), n: 0, skipped: 0 }
    }

    pub fn keying(&self) -> &Keying {
        &self.keying
    }

    /// The partition, for rounded stores.
    pub fn spec(&self) -> Option<&PartitionSpec> {
        match &self.keying {
            Keying::Rounded(s) => Some(s),
            Keying::Exact => None,
        }
    }

    /// Number of absorbed draws.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Draws dropped because the likelihood at their point was not finite.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Number of distinct cells (or values) stored.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &CellKey> {
        self.cells.keys()
    }

    pub fn contains(&self, key: &[i64]) -> bool {
        self.cells.contains_key(key)
    }

    /// The point where a stored key's likelihoods are evaluated.
    pub fn point(&self, key: &[i64]) -> Option<&[f64]> {
        self.cells.get(key).map(|e| e.theta.as_slice())
    }

    /// log Aᵣ for a stored key.
    pub fn log_total(&self, key: &[i64]) -> Option<f64> {
        self.cells.get(key).map(|e| e.log_total)
    }

    /// Raw number of draws absorbed into a stored key.
    pub fn visits(&self, key: &[i64]) -> Option<u64> {
        self.cells.get(key).map(|e| e.visits)
    }

    /// Adds one auxiliary draw. The denominator likelihood is computed once
    /// per (key, grid index) and cached.
    pub fn absorb<M: CutModel + ?Sized>(&mut self, sample: &AuxSample, model: &M, grid: &AuxGrid) {
        let (key, theta) = match &self.keying {
            Keying::Rounded(spec) => {
                let k = spec.key(&sample.theta);
                let t = spec.representative(&k);
                (k, t)
            }
            Keying::Exact => (exact_key(&sample.theta), sample.theta.clone()),
        };
        let i = sample.index;
        let cached = self
            .cells
            .get(&key)
            .and_then(|e| e.terms.iter().find(|t| t.index == i).map(|t| t.log_lik));
        let log_lik = cached.unwrap_or_else(|| model.log_lik_y(&theta, grid.point(i)));
        if !log_lik.is_finite() {
            self.skipped += 1;
            return;
        }
        let add = shifted_weight(&sample.log_w_prev, i) - log_lik;
        let entry = self.cells.entry(key).or_insert_with(|| Entry {
            theta,
            terms: Vec::new(),
            log_total: f64::NEG_INFINITY,
            visits: 0,
        });
        match entry.terms.iter_mut().find(|t| t.index == i) {
            Some(t) => t.log_a = log_add_exp(t.log_a, add),
            None => entry.terms.push(Term { index: i, log_a: add, log_lik }),
        }
        entry.log_total = log_add_exp(entry.log_total, add);
        entry.visits += 1;
        self.n += 1;
    }

    /// Normalized P*(key | φ′) over stored keys, in key order. Evaluates the
    /// likelihood once per stored key, in parallel on `pool` if given.
    pub fn pstar<M: CutModel + ?Sized>(&self, phi: &[f64], model: &M, pool: Option<&rayon::ThreadPool>) -> Result<CellProbs<'_>> {
        if self.cells.is_empty() {
            return Err(Error::DegenerateProposal { iteration: None });
        }
        let entries: Vec<(&CellKey, &Entry)> = self.cells.iter().collect();
        let eval = |e: &Entry| model.log_lik_y(&e.theta, phi);
        let lls: Vec<f64> = match pool {
            Some(p) if p.current_num_threads() > 1 => {
                p.install(|| entries.par_iter().map(|(_, e)| eval(e)).collect())
            }
            _ => entries.iter().map(|(_, e)| eval(e)).collect(),
        };
        let log_num: Vec<f64> = entries
            .iter()
            .zip(&lls)
            .map(|((_, e), ll)| if ll.is_finite() { e.log_total + ll } else { f64::NEG_INFINITY })
            .collect();
        let norm = log_sum_exp(&log_num);
        if !norm.is_finite() {
            return Err(Error::DegenerateProposal { iteration: None });
        }
        Ok(CellProbs {
            keys: entries.iter().map(|(k, _)| *k).collect(),
            probs: log_num.iter().map(|l| (l - norm).exp()).collect(),
        })
    }

    /// Writes `key_1..key_d,grid_index,log_a,log_lik` rows in key order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = self.cells.values().next().map_or(0, |e| e.theta.len());
        let mut header: Vec<String> = (1..=d).map(|k| format!("key_{k}")).collect();
        header.extend(["grid_index", "log_a", "log_lik"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for (key, e) in &self.cells {
            let mut terms: Vec<&Term> = e.terms.iter().collect();
            terms.sort_by_key(|t| t.index);
            for t in terms {
                let k: Vec<String> = key.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{},{},{},{}", k.join(","), t.index, t.log_a, t.log_lik)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Probabilities over the stored keys, in key order.
#[derive(Debug, Clone)]
pub struct CellProbs<'a> {
    pub keys: Vec<&'a CellKey>,
    pub probs: Vec<f64>,
}

/// Floor-regularized cell weights `(P*ᵣ + 1/(nR)) / (1 + 1/n)`; unvisited
/// cells get `(1/(nR)) / (1 + 1/n)` each.
#[derive(Debug, Clone)]
pub struct WeightProcess<'a> {
    keys: Vec<&'a CellKey>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    unvisited: f64,
    r_total: u64,
}

pub fn weight_process(probs: CellProbs<'_>, n: u64, r_total: u64) -> Result<WeightProcess<'_>> {
    if n == 0 {
        return Err(Error::arg("weight process needs n ≥ 1"));
    }
    if (probs.keys.len() as u64) > r_total {
        return Err(Error::arg("more visited cells than cells in the partition"));
    }
    let nf = n as f64;
    let floor = 1.0 / (nf * r_total as f64);
    let denom = 1.0 + 1.0 / nf;
    let weights: Vec<f64> = probs.probs.iter().map(|p| (p + floor) / denom).collect();
    let mut acc = 0.0;
    let cumulative = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    Ok(WeightProcess { keys: probs.keys, weights, cumulative, unvisited: floor / denom, r_total })
}

impl WeightProcess<'_> {
    /// Weights of the visited cells, in key order.
    pub fn visited(&self) -> impl Iterator<Item = (&CellKey, f64)> {
        self.keys.iter().copied().zip(self.weights.iter().copied())
    }

    /// Weight of each unvisited cell.
    pub fn unvisited_weight(&self) -> f64 {
        self.unvisited
    }

    pub fn r_total(&self) -> u64 {
        self.r_total
    }

    /// Weight of any cell of the partition.
    pub fn weight(&self, key: &[i64]) -> f64 {
        match self.keys.binary_search_by(|k| k.as_slice().cmp(key)) {
            Ok(i) => self.weights[i],
            Err(_) => self.unvisited,
        }
    }

    /// Sum of weights over all R cells.
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0) + (self.r_total - self.keys.len() as u64) as f64 * self.unvisited
    }

    /// Picks a cell by weight.
    pub fn sample_cell<R: Rng + ?Sized>(&self, spec: &PartitionSpec, rng: &mut R) -> CellKey {
        let visited_mass = self.cumulative.last().copied().unwrap_or(0.0);
        let unvisited_count = self.r_total - self.keys.len() as u64;
        let u: f64 = rng.random::<f64>() * (visited_mass + unvisited_count as f64 * self.unvisited);
        if u < visited_mass || unvisited_count == 0 {
            let i = self.cumulative.partition_point(|c| *c <= u).min(self.keys.len() - 1);
            return self.keys[i].clone();
        }
        if self.keys.len() as f64 / self.r_total as f64 > 0.5 {
            // enumerate the (few) unvisited cells
            let pick = rng.random_range(0..unvisited_count);
            let mut seen = 0;
            let mut v = 0;
            for idx in 0..self.r_total {
                let key = spec.key_at(idx);
                while v < self.keys.len() && self.keys[v].as_slice() < key.as_slice() {
                    v += 1;
                }
                if v < self.keys.len() && *self.keys[v] == key {
                    continue;
                }
                if seen == pick {
                    return key;
                }
                seen += 1;
            }
            unreachable!("unvisited cell count is consistent");
        }
        loop {
            let key = spec.key_at(rng.random_range(0..self.r_total));
            if self.keys.binary_search_by(|k| k.as_slice().cmp(&key)).is_err() {
                return key;
            }
        }
    }
}

/// Draws θ from the piecewise-uniform proposal: a cell by weight, then
/// uniformly within the clipped cell.
pub fn sample_pkappa<R: Rng + ?Sized>(w: &WeightProcess<'_>, spec: &PartitionSpec, rng: &mut R) -> Vec<f64> {
    let key = w.sample_cell(spec, rng);
    spec.sample_in_cell(&key, rng)
}

/// Density of the piecewise-uniform proposal at θ.
pub fn density_pkappa(w: &WeightProcess<'_>, spec: &PartitionSpec, theta: &[f64]) -> Result<f64> {
    if !spec.support().contains(theta) {
        return Err(Error::domain(format!("{theta:?} outside Θ")));
    }
    let key = spec.key(theta);
    Ok(w.weight(&key) / spec.cell_measure(&key)?)
}

/// Draws one stored exact θ̃ with probability P*(θ̃ | φ′).
pub fn pstar_draw_naive<M, R>(store: &Store, phi: &[f64], model: &M, pool: Option<&rayon::ThreadPool>, rng: &mut R) -> Result<Vec<f64>>
where
    M: CutModel + ?Sized,
    R: Rng + ?Sized,
{
    let probs = store.pstar(phi, model, pool)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = probs.keys.len() - 1;
    for (i, p) in probs.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            pick = i;
            break;
        }
    }
    Ok(store.point(probs.keys[pick]).expect("stored key").to_vec())
}
