//! Flat `key = value` run configuration.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// Which main-chain sampler to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Rounded-store stochastic approximation cut.
    Sacut,
    /// Exact-value store, discrete θ proposals.
    Naive,
    /// Internal random-walk chain on θ after each φ update.
    Nested,
    /// Exact θ draws (conjugate models only).
    Gibbs,
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sacut" => Ok(Self::Sacut),
            "naive" => Ok(Self::Naive),
            "nested" => Ok(Self::Nested),
            "gibbs" => Ok(Self::Gibbs),
            _ => Err(format!("unknown algorithm {s:?} (expected sacut, naive, nested or gibbs)")),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sacut => "sacut",
            Self::Naive => "naive",
            Self::Nested => "nested",
            Self::Gibbs => "gibbs",
        })
    }
}

/// Built-in model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Conjugate,
    RandomEffects,
    Regression,
    Hpv,
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "conjugate" => Ok(Self::Conjugate),
            "random_effects" => Ok(Self::RandomEffects),
            "regression" => Ok(Self::Regression),
            "hpv" => Ok(Self::Hpv),
            _ => Err(format!("unknown model {s:?} (expected conjugate, random_effects, regression or hpv)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Conjugate => "conjugate",
            Self::RandomEffects => "random_effects",
            Self::Regression => "regression",
            Self::Hpv => "hpv",
        })
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub n_iterations: usize,
    pub burn_in_fraction: f64,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub kappa: Vec<u32>,
    pub n0: u64,
    pub m: usize,
    pub p_mix: f64,
    pub aux_prerun: usize,
    pub n_int: usize,
    pub neighbours: usize,
    pub phi_step_sd: Vec<f64>,
    pub theta_step_sd: Vec<f64>,
    pub workers: usize,
    pub grid_candidates: usize,
    /// Step size of the φ sampler used to build the grid; defaults to `phi_step_sd`.
    pub grid_step_sd: Option<Vec<f64>>,
    pub model: ModelKind,
    pub data: Option<PathBuf>,
    pub y_value: f64,
    pub phi_prior_mean: f64,
    pub phi_prior_sd: f64,
    pub group_size: usize,
    pub theta_lower: Option<Vec<f64>>,
    pub theta_upper: Option<Vec<f64>>,
    pub phi_lower: Option<Vec<f64>>,
    pub phi_upper: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sacut,
            n_iterations: 100_000,
            burn_in_fraction: 0.1,
            thin: 100,
            chains: 1,
            seed: 1,
            kappa: vec![3],
            n0: 1000,
            m: 50,
            p_mix: 0.75,
            aux_prerun: 10_000,
            n_int: 1,
            neighbours: 4,
            phi_step_sd: vec![0.25],
            theta_step_sd: vec![0.1],
            workers: 1,
            grid_candidates: 2000,
            grid_step_sd: None,
            model: ModelKind::Conjugate,
            data: None,
            y_value: 1.0,
            phi_prior_mean: 0.0,
            phi_prior_sd: 1.0,
            group_size: 20,
            theta_lower: None,
            theta_upper: None,
            phi_lower: None,
            phi_upper: None,
        }
    }
}

fn parse_scalar<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse {v:?} as {}", std::any::type_name::<T>()))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(format!("empty entry in list {v:?}"));
    }
    items.into_iter().map(parse_scalar).collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "algorithm" => self.algorithm = v.parse()?,
            "n_iterations" => self.n_iterations = parse_scalar(v)?,
            "burn_in_fraction" => self.burn_in_fraction = parse_scalar(v)?,
            "thin" => self.thin = parse_scalar(v)?,
            "chains" => self.chains = parse_scalar(v)?,
            "seed" => self.seed = parse_scalar(v)?,
            "kappa" => self.kappa = parse_list(v)?,
            "n0" => self.n0 = parse_scalar(v)?,
            "m" => self.m = parse_scalar(v)?,
            "p_mix" => self.p_mix = parse_scalar(v)?,
            "aux_prerun" => self.aux_prerun = parse_scalar(v)?,
            "n_int" => self.n_int = parse_scalar(v)?,
            "neighbours" => self.neighbours = parse_scalar(v)?,
            "phi_step_sd" => self.phi_step_sd = parse_list(v)?,
            "theta_step_sd" => self.theta_step_sd = parse_list(v)?,
            "workers" => self.workers = parse_scalar(v)?,
            "grid_candidates" => self.grid_candidates = parse_scalar(v)?,
            "grid_step_sd" => self.grid_step_sd = Some(parse_list(v)?),
            "model" => self.model = v.parse()?,
            "data" => self.data = Some(PathBuf::from(v)),
            "y_value" => self.y_value = parse_scalar(v)?,
            "phi_prior_mean" => self.phi_prior_mean = parse_scalar(v)?,
            "phi_prior_sd" => self.phi_prior_sd = parse_scalar(v)?,
            "group_size" => self.group_size = parse_scalar(v)?,
            "theta_lower" => self.theta_lower = Some(parse_list(v)?),
            "theta_upper" => self.theta_upper = Some(parse_list(v)?),
            "phi_lower" => self.phi_lower = Some(parse_list(v)?),
            "phi_upper" => self.phi_upper = Some(parse_list(v)?),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Checks the cross-field constraints.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.n_iterations <= self.aux_prerun {
            return Err("n_iterations must exceed aux_prerun".into());
        }
        if self.thin == 0 {
            return Err("thin must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err("burn_in_fraction must lie in [0, 1)".into());
        }
        if self.chains == 0 || self.workers == 0 {
            return Err("chains and workers must be at least 1".into());
        }
        if self.kappa.is_empty() || self.phi_step_sd.is_empty() || self.theta_step_sd.is_empty() {
            return Err("kappa and step sizes must not be empty".into());
        }
        if self.phi_step_sd.iter().chain(&self.theta_step_sd).any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err("step sizes must be positive".into());
        }
        if self.n0 == 0 || self.n_int == 0 || self.neighbours == 0 {
            return Err("n0, n_int and neighbours must be at least 1".into());
        }
        if self.m < 2 || self.grid_candidates < self.m {
            return Err("need m ≥ 2 and grid_candidates ≥ m".into());
        }
        if !(self.p_mix > 0.0 && self.p_mix < 1.0) {
            return Err("p_mix must lie in (0, 1)".into());
        }
        if self.theta_lower.is_some() != self.theta_upper.is_some() || self.phi_lower.is_some() != self.phi_upper.is_some() {
            return Err("box overrides need both lower and upper bounds".into());
        }
        Ok(())
    }

    /// Step size used when building the grid.
    pub fn grid_step(&self) -> &[f64] {
        self.grid_step_sd.as_deref().unwrap_or(&self.phi_step_sd)
    }

    /// Renders the configuration so that [`parse_config`] returns it unchanged.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("algorithm", self.algorithm.to_string());
        line("n_iterations", self.n_iterations.to_string());
        line("burn_in_fraction", self.burn_in_fraction.to_string());
        line("thin", self.thin.to_string());
        line("chains", self.chains.to_string());
        line("seed", self.seed.to_string());
        line("kappa", join(&self.kappa));
        line("n0", self.n0.to_string());
        line("m", self.m.to_string());
        line("p_mix", self.p_mix.to_string());
        line("aux_prerun", self.aux_prerun.to_string());
        line("n_int", self.n_int.to_string());
        line("neighbours", self.neighbours.to_string());
        line("phi_step_sd", join(&self.phi_step_sd));
        line("theta_step_sd", join(&self.theta_step_sd));
        line("workers", self.workers.to_string());
        line("grid_candidates", self.grid_candidates.to_string());
        if let Some(g) = &self.grid_step_sd {
            line("grid_step_sd", join(g));
        }
        line("model", self.model.to_string());
        if let Some(d) = &self.data {
            line("data", d.display().to_string());
        }
        line("y_value", self.y_value.to_string());
        line("phi_prior_mean", self.phi_prior_mean.to_string());
        line("phi_prior_sd", self.phi_prior_sd.to_string());
        line("group_size", self.group_size.to_string());
        for (k, v) in [
            ("theta_lower", &self.theta_lower),
            ("theta_upper", &self.theta_upper),
            ("phi_lower", &self.phi_lower),
            ("phi_upper", &self.phi_upper),
        ] {
            if let Some(v) = v {
                line(k, join(v));
            }
        }
        s
    }
}

/// Parses `key = value` lines (`#` starts a comment) over the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Config { line: line_no, message };
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if !seen.insert(k.to_string()) {
            return Err(err(format!("duplicate key {k:?}")));
        }
        cfg.set(k, v).map_err(err)?;
        cfg.validate_field(k).map_err(err)?;
    }
    cfg.validate().map_err(|message| Error::Config { line: last_line, message })?;
    Ok(cfg)
}

impl RunConfig {
    /// Constraints checkable from a single field, reported at its line.
    fn validate_field(&self, key: &str) -> std::result::Result<(), String> {
        match key {
            "thin" if self.thin == 0 => Err("thin must be at least 1".into()),
            "burn_in_fraction" if !(0.0..1.0).contains(&self.burn_in_fraction) => {
                Err("burn_in_fraction must lie in [0, 1)".into())
            }
            "n_iterations" if self.n_iterations == 0 => Err("n_iterations must be positive".into()),
            "p_mix" if !(self.p_mix > 0.0 && self.p_mix < 1.0) => Err("p_mix must lie in (0, 1)".into()),
            "phi_step_sd" | "theta_step_sd" | "grid_step_sd"
                if self
                    .phi_step_sd
                    .iter()
                    .chain(&self.theta_step_sd)
                    .chain(self.grid_step_sd.iter().flatten())
                    .any(|s| !(*s > 0.0)) =>
            {
                Err("step sizes must be positive".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.n0, c.p_mix, c.aux_prerun, c.burn_in_fraction, c.thin), (1000, 0.75, 10_000, 0.1, 100));
    }

    #[test]
    fn scalar_kappa_and_comments() {
        let c = parse_config("# header\nkappa = 3   # precision\nphi_step_sd = 0.1, 0.2\n").unwrap();
        assert_eq!(c.kappa, vec![3]);
        assert_eq!(c.phi_step_sd, vec![0.1, 0.2]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_config("seed = 2\nn_iterations = -1\n") {
            Err(Error::Config { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("\n\nbogus = 1"), Err(Error::Config { line: 3, .. })));
        assert!(matches!(parse_config("thin = 0"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(parse_config("n_iterations = 100"), Err(Error::Config { .. })));
        assert!(matches!(parse_config("seed = 1\nseed = 2"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(parse_config("algorithm = gibbs sampler"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(parse_config("theta_lower = 0"), Err(Error::Config { .. })));
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            prop_oneof![Just(Algorithm::Sacut), Just(Algorithm::Naive), Just(Algorithm::Nested), Just(Algorithm::Gibbs)],
            1usize..1000,
            0.0f64..0.99,
            prop::collection::vec(0u32..6, 1..4),
            prop::collection::vec(1e-6f64..10.0, 1..4),
            any::<u64>(),
            0.01f64..0.99,
            proptest::option::of(prop::collection::vec(-100.0f64..100.0, 1..3)),
            -1e3f64..1e3,
        )
            .prop_map(|(algorithm, prerun, burn, kappa, steps, seed, p_mix, lower, y)| {
                let upper = lower.as_ref().map(|l| l.iter().map(|v| v + 1.0).collect());
                RunConfig {
                    algorithm,
                    aux_prerun: prerun,
                    n_iterations: prerun + 1,
                    burn_in_fraction: burn,
                    kappa,
                    phi_step_sd: steps.clone(),
                    grid_step_sd: Some(steps),
                    seed,
                    p_mix,
                    theta_lower: lower,
                    theta_upper: upper,
                    y_value: y,
                    data: Some(PathBuf::from("data/x.csv")),
                    model: ModelKind::Regression,
                    ..RunConfig::default()
                }
            })
    }

    proptest! {
        #[test]
        fn render_round_trips(c in arb_config()) {
            prop_assert_eq!(parse_config(&c.render()).unwrap(), c);
        }
    }
}
