//! End-to-end runs: model and grid construction, chains, summaries and
//! output files.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Algorithm, ModelKind, RunConfig};
use crate::diagnostics::{gelman_rubin, lag1_autocorr, max_central_deviation, qq_pairs_at, central_probs};
use crate::error::{Error, Result};
use crate::grid::{coverage_ratio, max_min_select, sample_phi_marginal, AuxGrid, Coverage};
use crate::model::data::{read_hpv, read_random_effects, read_regression};
use crate::model::{BoxSupport, ConjugateToy, CutModel, HpvModel, RandomEffectsModel, RegressionModel};
use crate::samplers::{run_chain, ChainTrace, PhaseTimings};
use crate::stats::{mean, quantile_sorted, sorted, variance};

fn override_box(lower: &Option<Vec<f64>>, upper: &Option<Vec<f64>>) -> Result<Option<BoxSupport>> {
    match (lower, upper) {
        (Some(l), Some(u)) => Ok(Some(BoxSupport::new(l.clone(), u.clone())?)),
        (None, None) => Ok(None),
        _ => Err(Error::arg("box overrides need both lower and upper bounds")),
    }
}

fn need_data(config: &RunConfig) -> Result<&Path> {
    config
        .data
        .as_deref()
        .ok_or_else(|| Error::arg(format!("model {} needs a data file", config.model)))
}

macro_rules! with_boxes {
    ($model:expr, $config:expr) => {{
        let mut m = $model;
        if let Some(b) = override_box(&$config.theta_lower, &$config.theta_upper)? {
            m = m.with_theta_support(b)?;
        }
        if let Some(b) = override_box(&$config.phi_lower, &$config.phi_upper)? {
            m = m.with_phi_support(b)?;
        }
        Box::new(m) as Box<dyn CutModel>
    }};
}

/// Builds the model named in the configuration, reading its data file.
pub fn build_model(config: &RunConfig) -> Result<Box<dyn CutModel>> {
    Ok(match config.model {
        ModelKind::Conjugate => with_boxes!(ConjugateToy::new(config.y_value, config.phi_prior_mean, config.phi_prior_sd)?, config),
        ModelKind::RandomEffects => {
            let d = read_random_effects(need_data(config)?)?;
            with_boxes!(RandomEffectsModel::new(d.y_bar, d.s_sq, config.group_size)?, config)
        }
        ModelKind::Regression => {
            let d = read_regression(need_data(config)?)?;
            with_boxes!(RegressionModel::new(&d.x, &d.y, &d.z, d.d)?, config)
        }
        ModelKind::Hpv => with_boxes!(HpvModel::new(read_hpv(need_data(config)?)?)?, config),
    })
}

/// The auxiliary grid with the diagnostics gathered while building it.
#[derive(Debug, Clone)]
pub struct GridBuild {
    pub grid: AuxGrid,
    pub candidates: Vec<Vec<f64>>,
    pub phi_acceptance: f64,
    pub coverage: Option<Coverage>,
    pub warnings: Vec<String>,
}

/// Coverage below this fraction triggers a warning.
pub const COVERAGE_WARN: f64 = 0.9;

/// Samples φ candidates from p(φ | Z), picks `m` by Max-Min and measures the
/// hull coverage (skipped above ten φ dimensions).
pub fn build_grid<M: CutModel + ?Sized>(model: &M, config: &RunConfig) -> Result<GridBuild> {
    let draws = sample_phi_marginal(model, config.grid_candidates, config.grid_step(), config.seed)?;
    let grid = max_min_select(&draws.draws, config.m, config.seed)?;
    let mut warnings: Vec<String> = draws.warning.into_iter().collect();
    let coverage = if grid.dim() <= 10 {
        let c = coverage_ratio(&grid, &draws.draws)?;
        if let Some(w) = &c.warning {
            warnings.push(w.clone());
        } else if c.ratio < COVERAGE_WARN {
            warnings.push(format!("grid covers only {:.3} of the φ draws; consider a larger m", c.ratio));
        }
        Some(c)
    } else {
        None
    };
    Ok(GridBuild { grid, candidates: draws.draws, phi_acceptance: draws.acceptance_rate, coverage, warnings })
}

/// Runs `config.chains` independent chains (concurrently; results are in
/// chain order and do not depend on scheduling).
pub fn run_chains<M: CutModel + ?Sized>(model: &M, grid: Option<&AuxGrid>, config: &RunConfig) -> Result<Vec<ChainTrace>> {
    (0..config.chains as u64)
        .into_par_iter()
        .map(|run| run_chain(model, grid, config, run))
        .collect()
}

/// Iterations kept after burn-in and thinning.
pub fn retained_indices(config: &RunConfig) -> impl Iterator<Item = usize> {
    let burn = (config.burn_in_fraction * config.n_iterations as f64).floor() as usize;
    (burn..config.n_iterations).step_by(config.thin)
}

/// Posterior summary of one scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// Across chains; absent with a single chain or zero within-variance.
    pub rhat: Option<f64>,
    /// Mean over chains of the lag-1 |autocorrelation| of retained samples.
    pub lag1_abs_ac: Option<f64>,
}

/// Summarizes per-chain scalar traces of one parameter.
pub fn summarize_param(name: &str, chains: &[Vec<f64>]) -> ParamSummary {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = sorted(&pooled);
    let rhat = if chains.len() >= 2 { gelman_rubin(chains).ok() } else { None };
    let acs: Vec<f64> = chains.iter().filter_map(|c| lag1_autocorr(c).ok()).map(f64::abs).collect();
    ParamSummary {
        name: name.to_string(),
        mean: mean(&pooled),
        sd: variance(&pooled).sqrt(),
        q025: quantile_sorted(&s, 0.025),
        q975: quantile_sorted(&s, 0.975),
        rhat,
        lag1_abs_ac: (!acs.is_empty()).then(|| mean(&acs)),
    }
}

/// Column names `theta_1..theta_d, phi_1..phi_p`.
pub fn param_names(theta_dim: usize, phi_dim: usize) -> Vec<String> {
    (1..=theta_dim)
        .map(|k| format!("theta_{k}"))
        .chain((1..=phi_dim).map(|k| format!("phi_{k}")))
        .collect()
}

/// Retained samples of every parameter, per chain: `out[param][chain]`.
pub fn retained_columns(traces: &[ChainTrace], config: &RunConfig) -> Vec<Vec<Vec<f64>>> {
    let Some(first) = traces.first() else { return Vec::new() };
    let (dt, dp) = (first.theta[0].len(), first.phi[0].len());
    let keep: Vec<usize> = retained_indices(config).collect();
    (0..dt + dp)
        .map(|j| {
            traces
                .iter()
                .map(|t| {
                    keep.iter()
                        .map(|&n| if j < dt { t.theta[n][j] } else { t.phi[n][j - dt] })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Grid facts recorded in the summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridInfo {
    pub m: usize,
    pub coverage: Option<f64>,
    pub phi_acceptance: f64,
    pub warnings: Vec<String>,
}

/// What a run reports in `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub model: String,
    pub seed: u64,
    pub chains: usize,
    pub retained_per_chain: usize,
    pub parameters: Vec<ParamSummary>,
    pub phi_acceptance: Vec<f64>,
    pub timings: Vec<PhaseTimings>,
    /// Stored cells at the end of each chain (store-based algorithms only).
    pub final_cells: Vec<usize>,
    pub grid: Option<GridInfo>,
    /// Content hash of the rendered configuration and the data file.
    pub input_hash: String,
    pub config: RunConfig,
    /// The rendered configuration; parsing it reproduces the run.
    pub config_text: String,
}

/// SHA-256 over the rendered configuration followed by the data file bytes.
pub fn input_hash(config: &RunConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(config.render().as_bytes());
    if let Some(p) = &config.data {
        h.update(std::fs::read(p)?);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn summarize(config: &RunConfig, model: &dyn CutModel, traces: &[ChainTrace], grid: Option<&GridBuild>) -> Result<RunSummary> {
    let names = param_names(model.theta_dim(), model.phi_dim());
    let cols = retained_columns(traces, config);
    let parameters = names.iter().zip(&cols).map(|(n, c)| summarize_param(n, c)).collect();
    Ok(RunSummary {
        algorithm: config.algorithm,
        model: model.name().to_string(),
        seed: config.seed,
        chains: traces.len(),
        retained_per_chain: retained_indices(config).count(),
        parameters,
        phi_acceptance: traces.iter().map(|t| t.phi_accepts as f64 / t.len() as f64).collect(),
        timings: traces.iter().map(|t| t.timings.clone()).collect(),
        final_cells: traces.iter().filter_map(|t| t.store_sizes.last().copied()).collect(),
        grid: grid.map(|g| GridInfo {
            m: g.grid.m(),
            coverage: g.coverage.as_ref().map(|c| c.ratio),
            phi_acceptance: g.phi_acceptance,
            warnings: g.warnings.clone(),
        }),
        input_hash: input_hash(config)?,
        config: config.clone(),
        config_text: config.render(),
    })
}

/// Output options beyond the always-written files.
#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    /// Also write the first chain's final store to `aux_store.csv`.
    pub aux_store: bool,
}

/// Deletes the listed files unless disarmed.
struct Cleanup(Vec<PathBuf>);

impl Drop for Cleanup {
    fn drop(&mut self) {
        for p in &self.0 {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn write_trace(path: &Path, names: &[String], traces: &[ChainTrace], config: &RunConfig) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "chain,iteration,{}", names.join(","))?;
    let keep: Vec<usize> = retained_indices(config).collect();
    for (c, t) in traces.iter().enumerate() {
        for &n in &keep {
            write!(out, "{c},{n}")?;
            for v in t.theta[n].iter().chain(&t.phi[n]) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_cells_curve(path: &Path, traces: &[ChainTrace], thin: usize) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "chain,iteration,cells")?;
    for (c, t) in traces.iter().enumerate() {
        let last = t.store_sizes.len().saturating_sub(1);
        for (n, s) in t.store_sizes.iter().enumerate() {
            if n % thin == 0 || n == last {
                writeln!(out, "{c},{},{s}", n + 1)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Builds the model (and grid when needed), runs the chains and writes
/// `trace.csv`, `cells_curve.csv`, `summary.json` and optionally
/// `aux_store.csv` into `out_dir`. Files written before a failure are removed.
pub fn run_experiment(config: &RunConfig, out_dir: &Path, options: &OutputOptions) -> Result<RunSummary> {
    config.validate().map_err(Error::InvalidArgument)?;
    let model = build_model(config)?;
    let grid = match config.algorithm {
        Algorithm::Sacut | Algorithm::Naive => Some(build_grid(model.as_ref(), config)?),
        _ => None,
    };
    let traces = run_chains(model.as_ref(), grid.as_ref().map(|g| &g.grid), config)?;
    let summary = summarize(config, model.as_ref(), &traces, grid.as_ref())?;

    std::fs::create_dir_all(out_dir)?;
    let mut cleanup = Cleanup(Vec::new());
    let names = param_names(model.theta_dim(), model.phi_dim());
    let trace_path = out_dir.join("trace.csv");
    cleanup.0.push(trace_path.clone());
    write_trace(&trace_path, &names, &traces, config)?;
    let curve_path = out_dir.join("cells_curve.csv");
    cleanup.0.push(curve_path.clone());
    write_cells_curve(&curve_path, &traces, config.thin)?;
    if options.aux_store {
        if let Some(store) = traces.first().and_then(|t| t.store.as_ref()) {
            let p = out_dir.join("aux_store.csv");
            cleanup.0.push(p.clone());
            store.write_csv(&p)?;
        }
    }
    let summary_path = out_dir.join("summary.json");
    cleanup.0.push(summary_path.clone());
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(&summary_path, json + "\n")?;
    cleanup.0.clear();
    Ok(summary)
}

/// One κ candidate compared against the reference (largest) κ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaEntry {
    pub kappa: u32,
    /// Largest |quantile difference| over the central 98%, over θ coordinates.
    pub max_deviation: f64,
    /// Per θ coordinate, (candidate, reference) quantile pairs at [`central_probs`].
    pub qq: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    pub reference: u32,
    pub probs: Vec<f64>,
    /// In ascending κ order.
    pub entries: Vec<KappaEntry>,
}

/// Short SACut runs for each candidate κ (same seed and grid), compared by
/// QQ against the run at the largest candidate.
pub fn kappa_select<M: CutModel + ?Sized>(
    model: &M,
    grid: &AuxGrid,
    base: &RunConfig,
    candidates: &[u32],
    trial_iterations: usize,
) -> Result<KappaReport> {
    let mut ks = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::arg("no κ candidates"));
    }
    let reference = *ks.last().expect("nonempty");
    let config_for = |k: u32| RunConfig {
        algorithm: Algorithm::Sacut,
        kappa: vec![k],
        n_iterations: trial_iterations,
        aux_prerun: base.aux_prerun.min(trial_iterations.saturating_sub(1)),
        ..base.clone()
    };
    let samples: Vec<Vec<Vec<f64>>> = ks
        .par_iter()
        .map(|&k| {
            let cfg = config_for(k);
            let traces = run_chains(model, Some(grid), &cfg)?;
            let cols = retained_columns(&traces, &cfg);
            Ok(cols[..model.theta_dim()].iter().map(|c| c.concat()).collect())
        })
        .collect::<Result<_>>()?;
    let probs = central_probs();
    let refs = samples.last().expect("nonempty");
    let entries = ks
        .iter()
        .zip(&samples)
        .map(|(&kappa, cand)| {
            let qq = cand
                .iter()
                .zip(refs)
                .map(|(a, b)| qq_pairs_at(a, b, &probs))
                .collect::<Result<Vec<_>>>()?;
            let max_deviation = cand
                .iter()
                .zip(refs)
                .map(|(a, b)| max_central_deviation(a, b))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok(KappaEntry { kappa, max_deviation, qq })
        })
        .collect::<Result<_>>()?;
    Ok(KappaReport { reference, probs, entries })
}

/// Writes `kappa_report.csv` (κ, deviation) and one `qq_kappa_<κ>.csv` per
/// candidate.
pub fn write_kappa_report(report: &KappaReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut table = String::from("kappa,reference,max_deviation\n");
    for e in &report.entries {
        table.push_str(&format!("{},{},{}\n", e.kappa, report.reference, e.max_deviation));
        let mut qq = String::from("coordinate,prob,candidate,reference\n");
        for (j, pairs) in e.qq.iter().enumerate() {
            for (p, (a, b)) in report.probs.iter().zip(pairs) {
                qq.push_str(&format!("{},{p},{a},{b}\n", j + 1));
            }
        }
        std::fs::write(out_dir.join(format!("qq_kappa_{}.csv", e.kappa)), qq)?;
    }
    std::fs::write(out_dir.join("kappa_report.csv"), table)?;
    Ok(())
}

/// Reads a `trace.csv` back as `(names, out[param][chain])`.
pub fn read_trace(path: &Path) -> Result<(Vec<String>, Vec<Vec<Vec<f64>>>)> {
    let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "iteration" {
        return Err(bad("expected header chain,iteration,...".into()));
    }
    let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
    let mut cols: Vec<Vec<Vec<f64>>> = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let chain: usize = rec[0].parse().map_err(|_| bad(format!("row {}: bad chain index", row + 1)))?;
        for (j, col) in cols.iter_mut().enumerate() {
            let v: f64 = rec
                .get(j + 2)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("row {}: bad value in column {}", row + 1, names[j])))?;
            if col.len() <= chain {
                col.resize(chain + 1, Vec::new());
            }
            col[chain].push(v);
        }
    }
    Ok((names, cols))
}
