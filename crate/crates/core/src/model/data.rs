//! CSV ingestion and synthetic generators for the built-in models.
//!
//! Formats (all with a header row):
//!
//! * random effects: `group,y_bar,s_sq`
//! * regression: `kind,value,x_phi,x_1,...,x_d` where `kind` is `Y` or `Z`;
//!   `Z` rows leave the covariate columns empty
//! * HPV: `city,Z,N,Y,T`

use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson, StandardNormal};

use super::HpvRecord;
use crate::error::{Error, Result};

/// Per-group sufficient statistics of the random-effects model.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomEffectsData {
    pub y_bar: Vec<f64>,
    /// Sum of squared deviations from the group mean.
    pub s_sq: Vec<f64>,
}

/// Outcomes with covariates, and the separate φ observations.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub d: usize,
    /// One row per outcome: `d` θ-covariates followed by the φ-covariate.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn parse_f64(path: &Path, row: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| csv_err(path, format!("row {row}: cannot parse {field:?} as a number")))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<csv::StringRecord> {
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < expected.len() || expected.iter().zip(header.iter()).any(|(a, b)| *a != b) {
        return Err(csv_err(path, format!("expected header starting {}", expected.join(","))));
    }
    Ok(header)
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_random_effects(path: &Path) -> Result<RandomEffectsData> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["group", "y_bar", "s_sq"])?;
    let mut data = RandomEffectsData { y_bar: Vec::new(), s_sq: Vec::new() };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 3 {
            return Err(csv_err(path, format!("row {}: expected 3 fields", i + 1)));
        }
        data.y_bar.push(parse_f64(path, i + 1, &rec[1])?);
        data.s_sq.push(parse_f64(path, i + 1, &rec[2])?);
    }
    if data.y_bar.is_empty() {
        return Err(csv_err(path, "no groups"));
    }
    Ok(data)
}

pub fn write_random_effects(path: &Path, data: &RandomEffectsData) -> Result<()> {
    let header = ["group", "y_bar", "s_sq"].map(String::from);
    let rows: Vec<Vec<String>> = data
        .y_bar
        .iter()
        .zip(&data.s_sq)
        .enumerate()
        .map(|(i, (y, s))| vec![(i + 1).to_string(), y.to_string(), s.to_string()])
        .collect();
    write_rows(path, &header, &rows)
}

pub fn read_regression(path: &Path) -> Result<RegressionData> {
    let mut rdr = reader(path)?;
    let header = check_header(path, &mut rdr, &["kind", "value", "x_phi"])?;
    let d = header.len() - 3;
    if d == 0 {
        return Err(csv_err(path, "no θ covariate columns"));
    }
    for (k, name) in header.iter().skip(3).enumerate() {
        if name != format!("x_{}", k + 1) {
            return Err(csv_err(path, format!("column {} should be x_{}", k + 4, k + 1)));
        }
    }
    let mut data = RegressionData { d, x: Vec::new(), y: Vec::new(), z: Vec::new() };
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != d + 3 {
            return Err(csv_err(path, format!("row {row}: expected {} fields", d + 3)));
        }
        let value = parse_f64(path, row, &rec[1])?;
        match &rec[0] {
            "Y" => {
                let mut x = Vec::with_capacity(d + 1);
                for k in 0..d {
                    x.push(parse_f64(path, row, &rec[3 + k])?);
                }
                x.push(parse_f64(path, row, &rec[2])?);
                data.x.push(x);
                data.y.push(value);
            }
            "Z" => data.z.push(value),
            other => return Err(csv_err(path, format!("row {row}: unknown kind {other:?}"))),
        }
    }
    Ok(data)
}

pub fn write_regression(path: &Path, data: &RegressionData) -> Result<()> {
    let d = data.d;
    let mut header: Vec<String> = ["kind", "value", "x_phi"].map(String::from).to_vec();
    header.extend((1..=d).map(|k| format!("x_{k}")));
    let mut rows = Vec::with_capacity(data.y.len() + data.z.len());
    for (x, y) in data.x.iter().zip(&data.y) {
        let mut r = vec!["Y".to_string(), y.to_string(), x[d].to_string()];
        r.extend(x[..d].iter().map(|v| v.to_string()));
        rows.push(r);
    }
    for z in &data.z {
        let mut r = vec!["Z".to_string(), z.to_string()];
        r.extend(std::iter::repeat_n(String::new(), d + 1));
        rows.push(r);
    }
    write_rows(path, &header, &rows)
}

pub fn read_hpv(path: &Path) -> Result<Vec<HpvRecord>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["city", "Z", "N", "Y", "T"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 5 {
            return Err(csv_err(path, format!("row {row}: expected 5 fields")));
        }
        let int = |k: usize| {
            rec[k]
                .parse::<u64>()
                .map_err(|_| csv_err(path, format!("row {row}: {:?} is not a nonnegative integer", &rec[k])))
        };
        out.push(HpvRecord { z: int(1)?, n: int(2)?, y: int(3)?, t: parse_f64(path, row, &rec[4])? });
    }
    Ok(out)
}

pub fn write_hpv(path: &Path, records: &[HpvRecord]) -> Result<()> {
    let header = ["city", "Z", "N", "Y", "T"].map(String::from);
    let rows: Vec<Vec<String>> = records
        .iter()
        .enumerate()
        .map(|(i, r)| vec![(i + 1).to_string(), r.z.to_string(), r.n.to_string(), r.y.to_string(), r.t.to_string()])
        .collect();
    write_rows(path, &header, &rows)
}

/// Random-effects data with θ² = 2, φᵢ² ~ U(0.5, 1.5), and an outlying first
/// group (β₁ = 10, φ₁² = 1.6).
pub fn generate_random_effects<R: Rng + ?Sized>(groups: usize, group_size: usize, rng: &mut R) -> Result<RandomEffectsData> {
    if groups == 0 || group_size < 2 {
        return Err(Error::arg("need at least one group of size two"));
    }
    let beta_dist = Normal::new(0.0, 2f64.sqrt()).expect("valid normal");
    let mut data = RandomEffectsData { y_bar: Vec::with_capacity(groups), s_sq: Vec::with_capacity(groups) };
    for g in 0..groups {
        let (beta, phi_sq) = if g == 0 {
            (10.0, 1.6)
        } else {
            (beta_dist.sample(rng), rng.random_range(0.5..1.5))
        };
        let sd = f64::sqrt(phi_sq);
        let ys: Vec<f64> = (0..group_size)
            .map(|_| beta + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mean = ys.iter().sum::<f64>() / group_size as f64;
        data.y_bar.push(mean);
        data.s_sq.push(ys.iter().map(|y| (y - mean) * (y - mean)).sum());
    }
    Ok(data)
}

/// Regression data with θ_p = sin(p), φ = 1, standard normal covariates and
/// outcome variance 3.
pub fn generate_regression<R: Rng + ?Sized>(d: usize, n_y: usize, n_z: usize, rng: &mut R) -> Result<RegressionData> {
    if d == 0 || n_y == 0 || n_z == 0 {
        return Err(Error::arg("dimension and sample sizes must be positive"));
    }
    let noise_sd = super::regression::NOISE_VAR.sqrt();
    let phi = 1.0;
    let mut data = RegressionData { d, x: Vec::with_capacity(n_y), y: Vec::with_capacity(n_y), z: Vec::with_capacity(n_z) };
    for _ in 0..n_y {
        let x: Vec<f64> = (0..=d).map(|_| rng.sample(StandardNormal)).collect();
        let mean: f64 = (0..d).map(|p| ((p + 1) as f64).sin() * x[p]).sum::<f64>() + phi * x[d];
        data.y.push(mean + noise_sd * rng.sample::<f64, _>(StandardNormal));
        data.x.push(x);
    }
    for _ in 0..n_z {
        data.z.push(phi + rng.sample::<f64, _>(StandardNormal));
    }
    Ok(data)
}

/// HPV-style data from known (θ₁, θ₂): prevalence φᵢ ~ U(0.05, 0.25),
/// Nᵢ ~ U{100..1000}, person-years Tᵢ ~ U(10, 100) (thousands).
pub fn generate_hpv<R: Rng + ?Sized>(cities: usize, theta: [f64; 2], rng: &mut R) -> Result<Vec<HpvRecord>> {
    if cities == 0 {
        return Err(Error::arg("need at least one city"));
    }
    let mut out = Vec::with_capacity(cities);
    for _ in 0..cities {
        let phi: f64 = rng.random_range(0.05..0.25);
        let n: u64 = rng.random_range(100..=1000);
        let t: f64 = rng.random_range(10.0..100.0);
        let z = Binomial::new(n, phi).expect("valid binomial").sample(rng);
        let rate = t * (theta[0] + theta[1] * phi).exp();
        let y = Poisson::new(rate).map_err(|e| Error::arg(e.to_string()))?.sample(rng) as u64;
        out.push(HpvRecord { z, n, y, t });
    }
    Ok(out)
}
