use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cutset::config::{parse_config, Algorithm, RunConfig};
use cutset::diagnostics::{expected_cells_uniform, gelman_rubin_split, mse_components, simulate_cells_curve, unit_cells};
use cutset::experiment::{build_grid, build_model, kappa_select, read_trace, run_experiment, summarize_param, write_kappa_report, OutputOptions, ParamSummary};
use cutset::grid::{overlap_summary, OverlapFlag};
use cutset::model::data::{generate_hpv, generate_random_effects, generate_regression, write_hpv, write_random_effects, write_regression};
use cutset::model::BoxSupport;
use cutset::partition::PartitionSpec;
use cutset::rng::{stream, Stream};
use cutset::stats::truncated_normal_from_uniform;

const WORKERS_ENV: &str = "CUTSET_WORKERS";

#[derive(Parser)]
#[command(name = "cutset", version, about = "Stochastic approximation cut sampling for two-module Bayesian models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run chains and write trace.csv, cells_curve.csv and summary.json.
    Run(RunArgs),
    /// Build the auxiliary grid and report its coverage and overlap.
    Grid(GridArgs),
    /// Summarize an existing trace.csv.
    Diagnose(DiagnoseArgs),
    /// Monte Carlo count of partition cells visited by i.i.d. draws.
    OrthotopeSim(OrthotopeArgs),
    /// Compare short runs over candidate precisions against the largest.
    KappaSelect(KappaArgs),
    /// Write a synthetic data set.
    GenData(GenArgs),
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Worker threads (overrides the config file and CUTSET_WORKERS).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Also write the first chain's final store to aux_store.csv.
    #[arg(long)]
    aux_store: bool,
}

#[derive(clap::Args)]
struct GridArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Draws per grid point for the overlap check (0 skips it).
    #[arg(long, default_value_t = 0)]
    overlap_draws: usize,
}

#[derive(clap::Args)]
struct DiagnoseArgs {
    /// A trace.csv written by `run`.
    trace: PathBuf,
    /// Reference values, one per column, for the mean squared error.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    truth: Option<Vec<f64>>,
    /// Also report split R-hat.
    #[arg(long)]
    split: bool,
    /// Write the JSON report here instead of standard output.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Uniform,
    Normal,
}

#[derive(clap::Args)]
struct OrthotopeArgs {
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    kappa: u32,
    #[arg(long, value_enum, default_value = "uniform")]
    target: Target,
    /// Standard deviation of the normal target (centred on the cube).
    #[arg(long, default_value_t = 0.1)]
    sd: f64,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    checkpoints: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output path (standard output when omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct KappaArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    candidates: Vec<u32>,
    #[arg(long, default_value_t = 10_000)]
    trial_iterations: usize,
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    RandomEffects,
    Regression,
    Hpv,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    model: DataKind,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    groups: usize,
    #[arg(long, default_value_t = 20)]
    group_size: usize,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 50)]
    n_y: usize,
    #[arg(long, default_value_t = 100)]
    n_z: usize,
    #[arg(long, default_value_t = 13)]
    cities: usize,
    /// Intercept and slope of log incidence against prevalence.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-2.5,13")]
    theta: Vec<f64>,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse()
}

fn mentions_key(text: &str, key: &str) -> bool {
    text.lines()
        .filter_map(|l| l.split('#').next()?.split_once('='))
        .any(|(k, _)| k.trim() == key)
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let text = match &args.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    } else if !mentions_key(&text, "workers") {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            cfg.workers = v.trim().parse().with_context(|| format!("{WORKERS_ENV}={v:?} is not a worker count"))?;
        }
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(dir) = args.config.as_ref().and_then(|p| p.parent()) {
        // data paths are relative to the config file
        if let Some(d) = &cfg.data {
            if d.is_relative() && !dir.as_os_str().is_empty() {
                cfg.data = Some(dir.join(d));
            }
        }
    }
    cfg.validate().map_err(cutset::Error::InvalidArgument)?;
    Ok(cfg)
}

fn print_params(params: &[ParamSummary]) {
    println!("{:<12} {:>12} {:>12} {:>12} {:>12} {:>8} {:>8}", "parameter", "mean", "sd", "2.5%", "97.5%", "R-hat", "|AC|");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    for p in params {
        println!(
            "{:<12} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>8} {:>8}",
            p.name, p.mean, p.sd, p.q025, p.q975, opt(p.rhat), opt(p.lag1_abs_ac)
        );
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(a) = args.algorithm {
        cfg.algorithm = a;
    }
    let summary = run_experiment(&cfg, &args.out, &OutputOptions { aux_store: args.aux_store })?;
    if let Some(g) = &summary.grid {
        for w in &g.warnings {
            eprintln!("warning: {w}");
        }
    }
    print_params(&summary.parameters);
    println!("outputs written to {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct GridReport {
    m: usize,
    coverage: Option<f64>,
    phi_acceptance: f64,
    warnings: Vec<String>,
    overlap: Option<Vec<OverlapFlag>>,
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let model = build_model(&cfg)?;
    let built = build_grid(model.as_ref(), &cfg)?;
    let overlap = if args.overlap_draws > 0 {
        let flags = overlap_summary(model.as_ref(), &built.grid, args.overlap_draws, cfg.seed)?;
        Some(flags)
    } else {
        None
    };
    fs::create_dir_all(&args.out)?;
    let mut csv = String::from("index");
    for k in 1..=built.grid.dim() {
        csv.push_str(&format!(",phi_{k}"));
    }
    csv.push('\n');
    for (i, p) in built.grid.points().iter().enumerate() {
        let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        csv.push_str(&format!("{i},{}\n", row.join(",")));
    }
    fs::write(args.out.join("grid.csv"), csv)?;
    let report = GridReport {
        m: built.grid.m(),
        coverage: built.coverage.as_ref().map(|c| c.ratio),
        phi_acceptance: built.phi_acceptance,
        warnings: built.warnings.clone(),
        overlap,
    };
    fs::write(args.out.join("grid.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} grid points, coverage {}",
        report.m,
        report.coverage.map_or("not computed".into(), |c| format!("{c:.3}"))
    );
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseReport {
    chains: usize,
    parameters: Vec<ParamSummary>,
    split_rhat: Option<Vec<Option<f64>>>,
    mse: Option<f64>,
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let (names, cols) = read_trace(&args.trace)?;
    let parameters: Vec<ParamSummary> = names.iter().zip(&cols).map(|(n, c)| summarize_param(n, c)).collect();
    let mse = match &args.truth {
        Some(t) => {
            let means: Vec<f64> = parameters.iter().map(|p| p.mean).collect();
            if t.len() != means.len() {
                bail!(cutset::Error::InvalidArgument(format!("{} truth values for {} columns", t.len(), means.len())));
            }
            Some(mse_components(&means, t)?)
        }
        None => None,
    };
    let split_rhat = args
        .split
        .then(|| cols.iter().map(|c| gelman_rubin_split(c).ok()).collect());
    let report = DiagnoseReport { chains: cols.first().map_or(0, Vec::len), parameters, split_rhat, mse };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(p) => fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_orthotope(args: OrthotopeArgs) -> Result<()> {
    if !(args.sd > 0.0) {
        bail!(cutset::Error::InvalidArgument("sd must be positive".into()));
    }
    let half = 0.5 / 10f64.powi(args.kappa as i32);
    let support = BoxSupport::cube(-half, 1.0 + half, args.d)?;
    let spec = PartitionSpec::new(&[args.kappa], support.clone())?;
    let (lo, hi) = (-half, 1.0 + half);
    let target = args.target;
    let sd = args.sd;
    let sampler = move |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        use rand::Rng;
        match target {
            Target::Uniform => support.sample_uniform(rng),
            Target::Normal => (0..support.dim())
                .map(|_| truncated_normal_from_uniform(0.5, sd, lo, hi, rng.random()))
                .collect(),
        }
    };
    let curve = simulate_cells_curve(sampler, &spec, &args.checkpoints, args.replicates, args.seed)?;
    let r = unit_cells(args.d, args.kappa)?;
    let mut out = String::from("n,mean,se,expected_uniform,cells_total\n");
    for (n, e) in args.checkpoints.iter().zip(&curve) {
        out.push_str(&format!("{n},{},{},{},{r}\n", e.mean, e.se, expected_cells_uniform(args.d, args.kappa, *n)?));
    }
    match &args.out {
        Some(p) => fs::write(p, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_kappa(args: KappaArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    if args.trial_iterations < 2 {
        bail!(cutset::Error::InvalidArgument("trial_iterations must be at least 2".into()));
    }
    let model = build_model(&cfg)?;
    let built = build_grid(model.as_ref(), &cfg)?;
    let report = kappa_select(model.as_ref(), &built.grid, &cfg, &args.candidates, args.trial_iterations)?;
    write_kappa_report(&report, &args.out)?;
    println!("{:>6} {:>16}  (reference κ = {})", "kappa", "max deviation", report.reference);
    for e in &report.entries {
        println!("{:>6} {:>16.6}", e.kappa, e.max_deviation);
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut rng = stream(args.seed, 0, Stream::Misc);
    let path: &Path = &args.out;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    match args.model {
        DataKind::RandomEffects => write_random_effects(path, &generate_random_effects(args.groups, args.group_size, &mut rng)?)?,
        DataKind::Regression => write_regression(path, &generate_regression(args.d, args.n_y, args.n_z, &mut rng)?)?,
        DataKind::Hpv => {
            let [a, b] = args.theta[..] else {
                bail!(cutset::Error::InvalidArgument("theta needs two values".into()));
            };
            write_hpv(path, &generate_hpv(args.cities, [a, b], &mut rng)?)?
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// 1 for usage errors, 2 for model, data or I/O errors, 3 for numerical
/// degeneracy.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<cutset::Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(cutset::Error::Config { .. } | cutset::Error::InvalidArgument(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::OrthotopeSim(a) => cmd_orthotope(a),
        Command::KappaSelect(a) => cmd_kappa(a),
        Command::GenData(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
