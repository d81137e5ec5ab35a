//! Run configuration: TOML text with `[section]` headers.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::domain::{OmegaSpec, Profile, WellSpec};
use crate::error::{Error, Result};
use crate::operators::EnergyParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Spectral,
    Resolvent,
    Semigroup,
    TrotterKato,
    Nonlinear,
    Identities,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Spectral,
        Experiment::Resolvent,
        Experiment::Semigroup,
        Experiment::TrotterKato,
        Experiment::Nonlinear,
        Experiment::Identities,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Spectral => "spectral",
            Experiment::Resolvent => "resolvent",
            Experiment::Semigroup => "semigroup",
            Experiment::TrotterKato => "trotter_kato",
            Experiment::Nonlinear => "nonlinear",
            Experiment::Identities => "identities",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::config(None, format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dim: usize,
    pub box_half_width: f64,
    pub points_per_axis: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Ball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaBlock {
    pub shape: Shape,
    /// Box: `lower..., upper...`; ball: `center..., radius`.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellBlock {
    pub width: f64,
    #[serde(default = "default_profile")]
    pub profile: Profile,
}

fn default_profile() -> Profile {
    Profile::Ramp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    List(Vec<f64>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
    #[serde(default)]
    pub gamma: f64,
    /// Defaults to `min(gamma / 2, (1 - 1e-6) / gamma)`.
    pub delta: Option<f64>,
    pub beta_schedule: Option<Schedule>,
    /// Elliptic shift of the resolvent sweep.
    #[serde(default = "one")]
    pub lambda: f64,
}

impl Default for ParamsBlock {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            delta: None,
            beta_schedule: None,
            lambda: 1.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralBlock {
    pub kbar: usize,
    #[serde(default = "default_eig_tol")]
    pub eig_tol: f64,
    #[serde(default = "default_eig_iter")]
    pub max_iter: usize,
    /// Amplitude of the probe projected onto the eigenspaces (0 disables).
    #[serde(default = "one")]
    pub probe: f64,
}

fn default_eig_tol() -> f64 {
    1e-8
}

fn default_eig_iter() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventBlock {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Amplitude of the `1/beta`-weighted exterior perturbation of the data.
    #[serde(default)]
    pub perturbation: f64,
}

impl Default for ResolventBlock {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            perturbation: 0.0,
        }
    }
}

fn default_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionBlock {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    /// `u_0 = bump_amplitude * bump` on the well.
    #[serde(default = "one")]
    pub bump_amplitude: f64,
    /// `v_0 = velocity_amplitude * bump`.
    #[serde(default)]
    pub velocity_amplitude: f64,
    /// Amplitude of the `1/beta`-weighted exterior perturbation.
    #[serde(default)]
    pub perturbation: f64,
}

impl Default for InitialBlock {
    fn default() -> Self {
        Self {
            bump_amplitude: 1.0,
            velocity_amplitude: 0.0,
            perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityBlock {
    /// Constant cubic coefficient `c`.
    pub c_field: f64,
    /// Amplitude of `chi_Omega = chi_omega * bump`.
    #[serde(default)]
    pub chi_omega: f64,
    /// Amplitude of `eta = eta * V`.
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    pub window_tau: Option<f64>,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_min_radius")]
    pub min_radius: f64,
    #[serde(default = "default_trials")]
    pub nemitski_trials: usize,
}

fn default_picard_tol() -> f64 {
    1e-8
}

fn default_max_sweeps() -> usize {
    60
}

fn default_min_radius() -> f64 {
    0.1
}

fn default_trials() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesBlock {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_power_draws")]
    pub power_draws: usize,
    #[serde(default = "default_minmax")]
    pub minmax_trials: usize,
}

impl Default for IdentitiesBlock {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            power_draws: default_power_draws(),
            minmax_trials: default_minmax(),
        }
    }
}

fn default_draws() -> usize {
    1000
}

fn default_power_draws() -> usize {
    200
}

fn default_minmax() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Experiment,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_output")]
    output: PathBuf,
    #[serde(default)]
    plot: bool,
    grid: GridBlock,
    omega: OmegaBlock,
    well: WellBlock,
    #[serde(default)]
    params: ParamsBlock,
    spectral: Option<SpectralBlock>,
    resolvent: Option<ResolventBlock>,
    evolution: Option<EvolutionBlock>,
    #[serde(default)]
    initial: InitialBlock,
    nonlinearity: Option<NonlinearityBlock>,
    identities: Option<IdentitiesBlock>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output: PathBuf,
    /// Emit a gnuplot script next to the CSVs.
    pub plot: bool,
    pub grid: GridBlock,
    pub omega: OmegaSpec,
    pub well: WellSpec,
    pub gamma: f64,
    pub delta: Option<f64>,
    pub lambda: f64,
    pub beta_schedule: Vec<f64>,
    pub spectral: Option<SpectralBlock>,
    pub resolvent: ResolventBlock,
    pub evolution: Option<EvolutionBlock>,
    pub initial: InitialBlock,
    pub nonlinearity: Option<NonlinearityBlock>,
    pub identities: IdentitiesBlock,
    text: String,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line whose key is `key`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.split('=')
            .next()
            .is_some_and(|k| k.trim() == key || k.trim().ends_with(&format!(".{key}")))
            && l.contains('=')
    })
    .map(|i| i + 1)
}

fn parse_schedule(s: &Schedule) -> std::result::Result<Vec<f64>, String> {
    match s {
        Schedule::List(v) => Ok(v.clone()),
        Schedule::Text(t) => t
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", x.trim())))
            .collect(),
    }
}

fn omega_spec(block: &OmegaBlock, dim: usize) -> std::result::Result<OmegaSpec, String> {
    let p = &block.params;
    match block.shape {
        Shape::Box => {
            if p.len() != 2 * dim {
                return Err(format!("box needs {} params (lower then upper), got {}", 2 * dim, p.len()));
            }
            Ok(OmegaSpec::Box {
                lower: p[..dim].to_vec(),
                upper: p[dim..].to_vec(),
            })
        }
        Shape::Ball => {
            if p.len() != dim + 1 {
                return Err(format!("ball needs {} params (center then radius), got {}", dim + 1, p.len()));
            }
            Ok(OmegaSpec::Ball {
                center: p[..dim].to_vec(),
                radius: p[dim],
            })
        }
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        Error::config(line, e.message().to_string())
    })?;
    let err = |key: &str, msg: String| Error::config(key_line(text, key), msg);

    let beta_schedule = match &raw.params.beta_schedule {
        Some(s) => parse_schedule(s).map_err(|m| err("beta_schedule", m))?,
        None => Vec::new(),
    };
    let omega = omega_spec(&raw.omega, raw.grid.dim).map_err(|m| err("params", m))?;
    let well = WellSpec {
        omega: omega.clone(),
        width: raw.well.width,
        profile: raw.well.profile,
    };
    let cfg = RunConfig {
        experiment: raw.experiment,
        seed: raw.seed,
        output: raw.output,
        plot: raw.plot,
        grid: raw.grid,
        omega,
        well,
        gamma: raw.params.gamma,
        delta: raw.params.delta,
        lambda: raw.params.lambda,
        beta_schedule,
        spectral: raw.spectral,
        resolvent: raw.resolvent.unwrap_or_default(),
        evolution: raw.evolution,
        initial: raw.initial,
        nonlinearity: raw.nonlinearity,
        identities: raw.identities.unwrap_or_default(),
        text: text.to_string(),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// The original text, hashed into the manifest.
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn with_experiment(mut self, experiment: Experiment) -> Result<Self> {
        self.experiment = experiment;
        self.validate()?;
        Ok(self)
    }

    pub fn energy_params(&self) -> Result<EnergyParams> {
        match self.delta {
            Some(d) => EnergyParams::new(self.gamma, d),
            None => EnergyParams::with_default_delta(self.gamma),
        }
    }

    fn err(&self, key: &str, msg: impl Into<String>) -> Error {
        Error::config(key_line(&self.text, key), msg)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.beta_schedule;
        if b.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(self.err("beta_schedule", "beta_schedule entries must be positive"));
        }
        if b.windows(2).any(|w| w[1] <= w[0]) {
            return Err(self.err("beta_schedule", "beta_schedule must be strictly increasing"));
        }
        if self.experiment != Experiment::Identities && b.is_empty() {
            return Err(self.err("beta_schedule", format!(
                "experiment `{}` needs params.beta_schedule",
                self.experiment.name()
            )));
        }
        if self.omega.dim() != self.grid.dim {
            return Err(self.err("params", "omega dimension differs from grid.dim"));
        }
        self.energy_params()
            .map_err(|e| self.err(if self.delta.is_some() { "delta" } else { "gamma" }, e.to_string()))?;
        let need = |present: bool, block: &str| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(Error::config(None, format!(
                    "experiment `{}` needs a [{block}] block",
                    self.experiment.name()
                )))
            }
        };
        match self.experiment {
            Experiment::Spectral => {
                need(self.spectral.is_some(), "spectral")?;
                if self.spectral.as_ref().is_some_and(|s| s.kbar == 0) {
                    return Err(self.err("kbar", "kbar must be at least 1"));
                }
            }
            Experiment::Resolvent => {
                if !(self.lambda > 0.0) {
                    return Err(self.err("lambda", "lambda must be positive"));
                }
            }
            Experiment::Semigroup | Experiment::TrotterKato => need(self.evolution.is_some(), "evolution")?,
            Experiment::Nonlinear => {
                need(self.evolution.is_some(), "evolution")?;
                need(self.nonlinearity.is_some(), "nonlinearity")?;
            }
            Experiment::Identities => {}
        }
        if let Some(e) = &self.evolution {
            if !(e.dt > 0.0 && e.horizon > 0.0) || e.sample_stride == 0 {
                return Err(self.err("dt", "evolution needs dt > 0, horizon > 0, sample_stride >= 1"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "spectral"

[grid]
dim = 1
box_half_width = 3.141592653589793
points_per_axis = 64

[omega]
shape = "box"
params = [-1.5707963267948966, 1.5707963267948966]

[well]
width = 0.5

[params]
beta_schedule = [10, 100]

[spectral]
kbar = 2
"#;

    #[test]
    fn minimal_spectral_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.experiment, Experiment::Spectral);
        assert_eq!(c.seed, 0);
        assert_eq!(c.well.profile, Profile::Ramp);
        assert_eq!(c.spectral.as_ref().unwrap().eig_tol, 1e-8);
        assert_eq!(c.beta_schedule, vec![10.0, 100.0]);
    }

    #[test]
    fn decreasing_schedule_is_rejected() {
        let text = MINIMAL.replace("[10, 100]", "\"100, 10\"");
        match parse_config(&text) {
            Err(Error::Config { line, message }) => {
                assert!(message.contains("increasing"));
                assert_eq!(line, Some(17));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = MINIMAL.replace("[params]\n", "[params]\ngama = 1.0\n");
        match parse_config(&text) {
            Err(Error::Config { line, message }) => {
                assert!(message.contains("gama"), "{message}");
                assert_eq!(line, Some(17));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_block_is_rejected() {
        let text = MINIMAL.replace("experiment = \"spectral\"", "experiment = \"nonlinear\"");
        assert!(matches!(parse_config(&text), Err(Error::Config { .. })));
    }
}
