//! Experiment orchestration: builds the discretisation from a [`RunConfig`],
//! runs one study and writes CSVs plus a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Experiment, RunConfig};
use crate::domain::{build_grid, build_well_potential, Grid, OmegaMask, PotentialField};
use crate::error::{Error, Result};
use crate::evolution::{evolve, trajectory_records, trotter_kato_study, EvolutionConfig, STEP_TOL};
use crate::identities::{run_identity_suite, SuiteOptions};
use crate::operators::{assemble_a_beta, EnergyParams, SpaceTag, WaveState};
use crate::semilinear::{
    estimate_nemitski_constant, nonlinear_convergence_study, GlobalSolution, NonlinearSetup,
    Nonlinearity, PicardOptions,
};
use crate::solver::resolvent_convergence_study;
use crate::spectral::{spectral_convergence_study, EigenOptions};
use crate::study::{to_csv, CsvRecord};

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

struct Setup {
    grid: Grid,
    potential: PotentialField,
    mask: OmegaMask,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let g = &cfg.grid;
    let grid = build_grid(g.dim, g.box_half_width, g.points_per_axis)?;
    let (potential, mask) = build_well_potential(&grid, &cfg.well)?;
    Ok(Setup {
        grid,
        potential,
        mask,
    })
}

fn bump_on_well(s: &Setup, amplitude: f64) -> Result<Vec<f64>> {
    let omega = &s.potential.well().omega;
    s.mask.restrict(&s.grid.sample(|x| amplitude * omega.bump(x)))
}

fn initial_state(cfg: &RunConfig, s: &Setup) -> Result<WaveState> {
    WaveState::new(
        bump_on_well(s, cfg.initial.bump_amplitude)?,
        bump_on_well(s, cfg.initial.velocity_amplitude)?,
        SpaceTag::Omega,
    )
}

/// Exterior field `amplitude * V`, or `None` for zero amplitude.
fn exterior(s: &Setup, amplitude: f64) -> Option<Vec<f64>> {
    (amplitude != 0.0).then(|| s.potential.values().iter().map(|v| amplitude * v).collect())
}

fn evolution_config(cfg: &RunConfig) -> Result<EvolutionConfig> {
    let e = cfg.evolution.as_ref().expect("validated");
    EvolutionConfig::new(e.dt, e.horizon, e.sample_stride)
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, body)?;
        self.files.push(p);
        Ok(())
    }

    fn csv<R: CsvRecord>(&mut self, name: &str, records: &[R]) -> Result<()> {
        if records.is_empty() {
            return Err(Error::StudyFailed(format!("{name} would have no data rows")));
        }
        self.text(name, &to_csv(records))
    }
}

/// Ad hoc CSV tables with a runtime header.
struct Table {
    header: String,
    rows: Vec<String>,
}

impl Table {
    fn new(header: &str) -> Self {
        Self {
            header: header.to_string(),
            rows: Vec::new(),
        }
    }

    fn render(&self) -> String {
        let mut s = format!("{}\n", self.header);
        for r in &self.rows {
            let _ = writeln!(s, "{r}");
        }
        s
    }
}

fn gnuplot(experiment: Experiment) -> String {
    let (file, cols, ylabel, logx) = match experiment {
        Experiment::Spectral => ("spectral.csv", "1:7", "eigenfunction distance", true),
        Experiment::Resolvent => ("resolvent.csv", "1:3", "resolvent error", true),
        Experiment::Semigroup => ("semigroup.csv", "2:4", "delta norm", false),
        Experiment::TrotterKato => ("trotter_kato_sup.csv", "1:2", "sup deviation", true),
        Experiment::Nonlinear => ("nonlinear_sup.csv", "1:2", "sup deviation", true),
        Experiment::Identities => ("identities.csv", "0:2", "worst value", false),
    };
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\n");
    if logx {
        s.push_str("set logscale x\n");
    }
    s.push_str("set logscale y\n");
    let _ = writeln!(s, "set ylabel '{ylabel}'");
    let _ = writeln!(s, "plot '{file}' using {cols} with linespoints");
    s
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs the configured experiment, writing into `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut out = Writer::new(&cfg.output)?;
    let s = setup(cfg)?;
    let summary = match cfg.experiment {
        Experiment::Spectral => run_spectral(cfg, &s, &mut out)?,
        Experiment::Resolvent => run_resolvent(cfg, &s, &mut out)?,
        Experiment::Semigroup => run_semigroup(cfg, &s, &mut out)?,
        Experiment::TrotterKato => run_trotter_kato(cfg, &s, &mut out)?,
        Experiment::Nonlinear => run_nonlinear(cfg, &s, &mut out)?,
        Experiment::Identities => run_identities(cfg, &s, &mut out)?,
    };
    if cfg.plot {
        out.text("plot.gp", &gnuplot(cfg.experiment))?;
    }
    let manifest = json!({
        "experiment": cfg.experiment.name(),
        "config_sha256": sha256_hex(cfg.text()),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "files": out.files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "summary": summary,
    });
    let manifest_path = out.dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("json") + "\n")?;
    out.files.push(manifest_path);
    Ok(RunOutcome {
        output: out.dir,
        files: out.files,
        summary,
    })
}

fn run_spectral(cfg: &RunConfig, s: &Setup, out: &mut Writer) -> Result<Value> {
    let sp = cfg.spectral.as_ref().expect("validated");
    let opts = EigenOptions {
        tol: sp.eig_tol,
        max_iter: sp.max_iter,
        seed: cfg.seed,
        ..EigenOptions::default()
    };
    let probe = if sp.probe != 0.0 {
        Some(bump_on_well(s, sp.probe)?)
    } else {
        None
    };
    let st = spectral_convergence_study(
        &s.grid,
        &s.potential,
        &s.mask,
        &cfg.beta_schedule,
        sp.kbar,
        &opts,
        probe.as_deref(),
    )?;
    out.csv("spectral.csv", &st.records)?;
    if !st.projection.is_empty() {
        let mut t = Table::new("beta,projection_dist");
        t.rows.extend(st.projection.iter().map(|(b, d)| format!("{b},{d:.12e}")));
        out.text("projection.csv", &t.render())?;
    }
    Ok(json!({
        "omega_eigenvalues": st.omega_pairs.iter().map(|p| p.value).collect::<Vec<_>>(),
        "projection_skipped": st.projection_skipped,
        "confinement_identity_error": st.confinement_identity_error,
    }))
}

fn run_resolvent(cfg: &RunConfig, s: &Setup, out: &mut Writer) -> Result<Value> {
    let f = bump_on_well(s, 1.0)?;
    let pert = exterior(s, cfg.resolvent.perturbation);
    let st = resolvent_convergence_study(
        &s.grid,
        &s.potential,
        &s.mask,
        &cfg.beta_schedule,
        cfg.lambda,
        &f,
        pert.as_deref(),
        cfg.resolvent.tol,
    )?;
    out.csv("resolvent.csv", &st.records)?;
    Ok(json!({
        "errors": st.errors,
        "strictly_decreasing": st.strictly_decreasing,
        "rate_products": st.rate_products,
    }))
}

fn run_semigroup(cfg: &RunConfig, s: &Setup, out: &mut Writer) -> Result<Value> {
    let params = cfg.energy_params()?;
    let ecfg = evolution_config(cfg)?;
    let u0 = initial_state(cfg, s)?;
    let mut records = Vec::new();
    let mut decay = Table::new(
        "beta,initial_x1,initial_delta,delta_monotone,max_step_ratio,envelope,max_x1_ratio,max_x1_drift,measured_rate,envelope_violations",
    );
    let mut failures = Vec::new();
    for &beta in &cfg.beta_schedule {
        let op = assemble_a_beta(&s.grid, &s.potential, beta)?;
        let (traj, rep) = evolve(&params, &op, &u0.zero_extend(&s.mask, beta)?, &ecfg)?;
        records.extend(trajectory_records(&op, &params, beta, &traj)?);
        decay.rows.push(format!(
            "{beta},{:.12e},{:.12e},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            rep.initial_x1,
            rep.initial_delta,
            rep.delta_monotone,
            rep.max_step_ratio,
            rep.envelope,
            rep.max_x1_ratio,
            rep.max_x1_drift,
            rep.measured_rate,
            rep.envelope_violations
        ));
        if !rep.delta_monotone || rep.envelope_violations > 0 {
            failures.push(beta);
        }
    }
    out.csv("semigroup.csv", &records)?;
    out.text("decay.csv", &decay.render())?;
    if !failures.is_empty() {
        return Err(Error::StudyFailed(format!("decay bound violated for beta in {failures:?}")));
    }
    Ok(json!({ "gamma": params.gamma(), "delta": params.delta(), "envelope": params.M() }))
}

fn run_trotter_kato(cfg: &RunConfig, s: &Setup, out: &mut Writer) -> Result<Value> {
    let params = cfg.energy_params()?;
    let ecfg = evolution_config(cfg)?;
    let u0 = initial_state(cfg, s)?;
    let pert = match exterior(s, cfg.initial.perturbation) {
        Some(w) => Some(WaveState::new(w, vec![0.0; s.grid.len()], SpaceTag::Beta(1.0))?),
        None => None,
    };
    let st = trotter_kato_study(
        &s.grid,
        &s.potential,
        &s.mask,
        &cfg.beta_schedule,
        &params,
        &u0,
        &ecfg,
        pert.as_ref(),
    )?;
    out.csv("trotter_kato.csv", &st.records)?;
    let mut t = Table::new("beta,sup_dev");
    t.rows.extend(st.sup_dev.iter().map(|(b, d)| format!("{b},{d:.12e}")));
    out.text("trotter_kato_sup.csv", &t.render())?;
    Ok(json!({ "sup_dev": st.sup_dev }))
}

fn window_rows(t: &mut Table, label: &str, sol: &GlobalSolution) {
    for w in &sol.windows {
        t.rows.push(format!(
            "{label},{},{:.6},{},{:.6e},{:.6e},{},{:.6e},{:.6e},{:.6e}",
            w.index,
            w.start_step as f64 * sol.dt,
            w.steps,
            w.constants.tau,
            w.constants.r,
            w.sweeps,
            w.max_ratio,
            w.residual,
            w.ball_max
        ));
    }
}

fn run_nonlinear(cfg: &RunConfig, s: &Setup, out: &mut Writer) -> Result<Value> {
    let nb = cfg.nonlinearity.as_ref().expect("validated");
    let e = cfg.evolution.as_ref().expect("validated");
    let params: EnergyParams = cfg.energy_params()?;
    let nl = Nonlinearity::cubic(&s.grid, &s.potential, &s.mask, nb.c_field, nb.chi_omega, nb.eta)?;
    let est = estimate_nemitski_constant(
        &nl,
        &s.grid,
        &s.potential,
        cfg.beta_schedule[0],
        nb.nemitski_trials,
        cfg.seed,
    )?;
    if est.cubic_violations + est.lipschitz_violations > 0 {
        return Err(Error::StudyFailed(format!("Nemitski bounds violated: {est:?}")));
    }
    let setup = NonlinearSetup {
        params,
        dt: e.dt,
        horizon: e.horizon,
        sample_stride: e.sample_stride,
        nemitski: est.constant,
        picard: PicardOptions {
            tol: nb.picard_tol,
            max_sweeps: nb.max_sweeps,
            window_tau: nb.window_tau,
            min_radius: nb.min_radius,
            ..PicardOptions::default()
        },
        step_tol: STEP_TOL,
    };
    let u0 = initial_state(cfg, s)?;
    let pert = match exterior(s, cfg.initial.perturbation) {
        Some(w) => Some(WaveState::new(w, vec![0.0; s.grid.len()], SpaceTag::Beta(1.0))?),
        None => None,
    };
    let st = nonlinear_convergence_study(
        &s.grid,
        &s.potential,
        &s.mask,
        &cfg.beta_schedule,
        &nl,
        &u0,
        &setup,
        pert.as_ref(),
    )?;
    out.csv("nonlinear.csv", &st.records)?;
    let mut sup = Table::new("beta,sup_dev,tau,chi_gap,a_term,b_term,c_term,window_dev");
    for ((b, d), g) in st.sup_dev.iter().zip(&st.diagnostics) {
        sup.rows.push(format!(
            "{b},{d:.12e},{:.6e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            g.tau, g.chi_gap, g.a_term, g.b_term, g.c_term, g.window_dev
        ));
    }
    out.text("nonlinear_sup.csv", &sup.render())?;
    let mut win = Table::new("run,window,t_start,steps,tau,radius,sweeps,max_ratio,residual,ball_max");
    window_rows(&mut win, "omega", &st.omega);
    for (b, sol) in cfg.beta_schedule.iter().zip(&st.beta_solutions) {
        window_rows(&mut win, &format!("beta={b}"), sol);
    }
    out.text("windows.csv", &win.render())?;
    Ok(json!({
        "nemitski_constant": est.constant,
        "sobolev_constant": est.sobolev,
        "nemitski_samples": est.samples,
        "max_contraction_ratio": st.max_ratio(),
        "max_mild_residual": st.max_residual(),
        "sup_dev": st.sup_dev,
    }))
}

fn run_identities(cfg: &RunConfig, s: &Setup, out: &mut Writer) -> Result<Value> {
    let b = &cfg.beta_schedule;
    let beta_range = match (b.first(), b.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => SuiteOptions::default().beta_range,
    };
    let opts = SuiteOptions {
        draws: cfg.identities.draws,
        power_draws: cfg.identities.power_draws,
        minmax_trials: cfg.identities.minmax_trials,
        beta_range,
        seed: cfg.seed,
        ..SuiteOptions::default()
    };
    let rep = run_identity_suite(&s.grid, &s.potential, &s.mask, &opts)?;
    out.csv("identities.csv", &rep.rows())?;
    if !rep.passed() {
        return Err(Error::StudyFailed(format!("identity suite failed: {rep:?}")));
    }
    Ok(json!({
        "draws": rep.draws,
        "power_checks": rep.power_checks,
        "minmax_checks": rep.minmax_checks,
    }))
}

/// Machine-readable failure record.
pub fn error_record(err: &Error) -> Value {
    let kind = match err {
        Error::Config { .. } => "config",
        Error::Io(_) => "io",
        _ => "study",
    };
    let mut v = json!({ "kind": kind, "message": err.to_string() });
    if let Error::Config { line: Some(l), .. } = err {
        v["line"] = json!(l);
    }
    if let Error::Window { index, .. } = err {
        v["window"] = json!(index);
    }
    v
}
