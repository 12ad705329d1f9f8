//! Rounding partition of the θ box into (partial) hypercubes.
//!
//! Coordinate `k` of θ is rounded to `⌊10^κₖ θₖ + 0.5⌋ / 10^κₖ`. Cells are
//! identified by the integer lattice key `⌊10^κₖ θₖ + 0.5⌋`, never by float
//! centers. A cell is the half-open cube of side `10^-κₖ` around its center,
//! clipped to the box; edge cells whose clipped measure is zero are dropped
//! and their (measure-zero) points assigned to the neighbouring cell.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::BoxSupport;
use crate::stats::compensated_sum;

/// Integer lattice coordinates of a cell.
pub type CellKey = Vec<i64>;

/// Largest lattice coordinate magnitude for which keys stay exact.
const KEY_LIMIT: f64 = 9.0e15;

/// `⌊10^κ x + 0.5⌋ / 10^κ`, coordinatewise. `kappa` is broadcast if it has
/// one entry.
pub fn round_kappa(theta: &[f64], kappa: &[u32]) -> Vec<f64> {
    theta
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let s = scale(kappa_at(kappa, k));
            (s * x + 0.5).floor() / s
        })
        .collect()
}

/// Corollary-style sup-norm bound `grad_sup · √d / 10^κ` on the error of the
/// simple-function approximation.
pub fn approx_error_bound(grad_sup: f64, d: usize, kappa: u32) -> f64 {
    grad_sup * (d as f64).sqrt() / scale(kappa)
}

fn kappa_at(kappa: &[u32], k: usize) -> u32 {
    if kappa.len() == 1 {
        kappa[0]
    } else {
        kappa[k]
    }
}

fn scale(kappa: u32) -> f64 {
    10f64.powi(kappa as i32)
}

/// The partition of a box at per-dimension precision κ.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    kappa: Vec<u32>,
    support: BoxSupport,
    scale: Vec<f64>,
    kmin: Vec<i64>,
    kmax: Vec<i64>,
}

impl PartitionSpec {
    /// `kappa` must have one entry (broadcast) or one per dimension.
    pub fn new(kappa: &[u32], support: BoxSupport) -> Result<Self> {
        let d = support.dim();
        if kappa.len() != 1 && kappa.len() != d {
            return Err(Error::arg(format!("kappa has {} entries for dimension {d}", kappa.len())));
        }
        let kappa: Vec<u32> = (0..d).map(|k| kappa_at(kappa, k)).collect();
        if kappa.iter().any(|&k| k > 15) {
            return Err(Error::PartitionOverflow);
        }
        let scale: Vec<f64> = kappa.iter().map(|&k| scale(k)).collect();
        let mut kmin = Vec::with_capacity(d);
        let mut kmax = Vec::with_capacity(d);
        for k in 0..d {
            let (l, u, s) = (support.lower()[k], support.upper()[k], scale[k]);
            if (s * l).abs() > KEY_LIMIT || (s * u).abs() > KEY_LIMIT {
                return Err(Error::PartitionOverflow);
            }
            let mut lo = (s * l + 0.5).floor() as i64;
            let mut hi = (s * u + 0.5).floor() as i64;
            if (lo as f64 + 0.5) / s <= l {
                lo += 1;
            }
            if (hi as f64 - 0.5) / s >= u {
                hi -= 1;
            }
            kmin.push(lo);
            kmax.push(hi.max(lo));
        }
        Ok(Self { kappa, support, scale, kmin, kmax })
    }

    pub fn dim(&self) -> usize {
        self.kappa.len()
    }

    pub fn kappa(&self) -> &[u32] {
        &self.kappa
    }

    pub fn support(&self) -> &BoxSupport {
        &self.support
    }

    /// Smallest and largest lattice coordinate per dimension.
    pub fn key_range(&self) -> (&[i64], &[i64]) {
        (&self.kmin, &self.kmax)
    }

    /// Lattice key of the cell containing `theta` (clamped into the valid
    /// key range, which only affects points on dropped zero-measure faces or
    /// outside the box).
    pub fn key(&self, theta: &[f64]) -> CellKey {
        theta
            .iter()
            .enumerate()
            .map(|(k, x)| ((self.scale[k] * x + 0.5).floor() as i64).clamp(self.kmin[k], self.kmax[k]))
            .collect()
    }

    pub fn contains_key(&self, key: &[i64]) -> bool {
        key.len() == self.dim() && key.iter().enumerate().all(|(k, v)| *v >= self.kmin[k] && *v <= self.kmax[k])
    }

    /// The rounded point `key / 10^κ` (may lie just outside the box for edge cells).
    pub fn center(&self, key: &[i64]) -> Vec<f64> {
        key.iter().zip(&self.scale).map(|(k, s)| *k as f64 / s).collect()
    }

    /// The cell center clamped into the box; where densities are evaluated.
    pub fn representative(&self, key: &[i64]) -> Vec<f64> {
        self.center(key)
            .into_iter()
            .enumerate()
            .map(|(k, c)| c.clamp(self.support.lower()[k], self.support.upper()[k]))
            .collect()
    }

    /// Lower and upper corners of the cell clipped to the box.
    pub fn cell_bounds(&self, key: &[i64]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for (k, &v) in key.iter().enumerate() {
            let s = self.scale[k];
            lo.push(((v as f64 - 0.5) / s).max(self.support.lower()[k]));
            hi.push(((v as f64 + 0.5) / s).min(self.support.upper()[k]));
        }
        (lo, hi)
    }

    fn width(&self, k: usize, v: i64) -> f64 {
        let s = self.scale[k];
        ((v as f64 + 0.5) / s).min(self.support.upper()[k]) - ((v as f64 - 0.5) / s).max(self.support.lower()[k])
    }

    /// Lebesgue measure of the clipped cell.
    pub fn cell_measure(&self, key: &[i64]) -> Result<f64> {
        if !self.contains_key(key) {
            return Err(Error::domain(format!("cell {key:?} is not part of the partition")));
        }
        Ok(key.iter().enumerate().map(|(k, &v)| self.width(k, v)).product())
    }

    /// Measure of the cell whose center is `center`.
    pub fn cell_measure_at(&self, center: &[f64]) -> Result<f64> {
        if center.len() != self.dim() {
            return Err(Error::domain("center has the wrong dimension"));
        }
        let key: CellKey = center
            .iter()
            .zip(&self.scale)
            .map(|(c, s)| (s * c + 0.5).floor() as i64)
            .collect();
        self.cell_measure(&key)
    }

    /// Number of cells, failing if it exceeds 2⁶³.
    pub fn cell_count(&self) -> Result<u64> {
        let mut n: u64 = 1;
        for k in 0..self.dim() {
            let len = (self.kmax[k] - self.kmin[k] + 1) as u64;
            n = n.checked_mul(len).filter(|v| *v <= i64::MAX as u64).ok_or(Error::PartitionOverflow)?;
        }
        Ok(n)
    }

    /// Position of `key` in the lexicographic enumeration of all cells.
    pub fn index_of(&self, key: &[i64]) -> u64 {
        let mut idx = 0u64;
        for k in 0..self.dim() {
            let len = (self.kmax[k] - self.kmin[k] + 1) as u64;
            idx = idx * len + (key[k] - self.kmin[k]) as u64;
        }
        idx
    }

    /// Inverse of [`PartitionSpec::index_of`].
    pub fn key_at(&self, mut index: u64) -> CellKey {
        let mut key = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            let len = (self.kmax[k] - self.kmin[k] + 1) as u64;
            key[k] = self.kmin[k] + (index % len) as i64;
            index /= len;
        }
        key
    }

    /// All cell keys in lexicographic order.
    pub fn cells(&self) -> Result<impl Iterator<Item = CellKey> + '_> {
        let n = self.cell_count()?;
        Ok((0..n).map(move |i| self.key_at(i)))
    }

    /// Sum of all cell measures, computed per dimension.
    pub fn total_measure(&self) -> f64 {
        (0..self.dim())
            .map(|k| compensated_sum((self.kmin[k]..=self.kmax[k]).map(|v| self.width(k, v))))
            .product()
    }

    /// A uniform draw from the clipped cell.
    pub fn sample_in_cell<R: Rng + ?Sized>(&self, key: &[i64], rng: &mut R) -> Vec<f64> {
        let (lo, hi) = self.cell_bounds(key);
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| (l + (h - l) * rng.random::<f64>()).min(*h))
            .collect()
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=q {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if q == 0 { 1.0 } else if q == 1 { x } else { p1 };
            let pm1 = if q == 1 { 1.0 } else { p0 };
            dp = q as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    (nodes, weights)
}

/// A piecewise-constant density: one value per cell.
#[derive(Debug, Clone)]
pub struct SimpleFunction {
    spec: PartitionSpec,
    values: Vec<f64>,
}

impl SimpleFunction {
    pub fn spec(&self) -> &PartitionSpec {
        &self.spec
    }

    /// Value on each cell in enumeration order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_value(&self, key: &[i64]) -> f64 {
        self.values[self.spec.index_of(key) as usize]
    }

    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        if !self.spec.support().contains(theta) {
            return Err(Error::domain(format!("{theta:?} outside the partitioned box")));
        }
        Ok(self.cell_value(&self.spec.key(theta)))
    }

    /// ∫ S(f) over the box.
    pub fn total_mass(&self) -> f64 {
        let spec = &self.spec;
        compensated_sum(
            self.values
                .iter()
                .enumerate()
                .map(|(i, v)| v * spec.cell_measure(&spec.key_at(i as u64)).expect("valid key")),
        )
    }
}

/// Cell-average approximation of the density `f`: each cell takes the value
/// (∫ over the cell of f) / (cell measure), integrated by tensor
/// Gauss–Legendre with `quad_points_per_cell` nodes per dimension.
///
/// Fails if the total mass of `f` differs from 1 by more than 10⁻³; smaller
/// deviations are normalized away.
pub fn simple_function_approx<F>(f: F, spec: &PartitionSpec, quad_points_per_cell: usize) -> Result<SimpleFunction>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if quad_points_per_cell < 8 {
        return Err(Error::arg("at least 8 quadrature points per cell are required"));
    }
    let n = spec.cell_count()?;
    if n > 50_000_000 {
        return Err(Error::arg(format!("{n} cells is too many for cellwise quadrature")));
    }
    let d = spec.dim();
    let q = quad_points_per_cell;
    let (nodes, weights) = gauss_legendre(q);
    let total_nodes = q.checked_pow(d as u32).ok_or(Error::PartitionOverflow)?;

    let masses: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let key = spec.key_at(i);
            let (lo, hi) = spec.cell_bounds(&key);
            let half: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (h - l)).collect();
            let mid: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (h + l)).collect();
            let jac: f64 = half.iter().product();
            let mut point = vec![0.0; d];
            let mut acc = 0.0;
            for j in 0..total_nodes {
                let mut rest = j;
                let mut w = 1.0;
                for k in 0..d {
                    let a = rest % q;
                    rest /= q;
                    point[k] = mid[k] + half[k] * nodes[a];
                    w *= weights[a];
                }
                acc += w * f(&point);
            }
            acc * jac
        })
        .collect();

    let mass = compensated_sum(masses.iter().copied());
    if !mass.is_finite() || (mass - 1.0).abs() > 1e-3 {
        return Err(Error::Quadrature { mass });
    }
    let values = masses
        .iter()
        .enumerate()
        .map(|(i, m)| m / mass / spec.cell_measure(&spec.key_at(i as u64)).expect("valid key"))
        .collect();
    Ok(SimpleFunction { spec: spec.clone(), values })
}
