//! The damped wave generator, the trapezoidal (Cayley) time stepper, decay
//! bookkeeping and the Trotter-Kato sweep.

use rayon::prelude::*;

use crate::domain::{Grid, OmegaMask, PotentialField};
use crate::error::{check_len, Error, Result};
use crate::operators::{
    assemble_a_beta, assemble_a_omega, inner_x1_delta, norm_x1, norm_x1_delta, DiscreteOperator,
    EnergyParams, SpaceTag, WaveState,
};
use crate::solver::{check_schedule, resolve_b};
use crate::study::{opt_cell, CsvRecord};

/// Inner solve tolerance of the time stepper.
pub const STEP_TOL: f64 = 1e-13;

/// `B (u, v) = (v, -A u - gamma v)`.
pub fn apply_b(op: &DiscreteOperator, gamma: f64, state: &WaveState) -> Result<WaveState> {
    check_len(op.len(), state.len())?;
    if let Some(space) = op.space() {
        crate::operators::check_space(space, state.space)?;
    }
    let mut au = vec![0.0; op.len()];
    op.apply_shifted_into(0.0, &state.u, &mut au);
    let v2 = au
        .iter()
        .zip(&state.v)
        .map(|(a, v)| -a - gamma * v)
        .collect();
    Ok(WaveState {
        u: state.v.clone(),
        v: v2,
        space: state.space,
    })
}

/// `|<(B + delta) U, U>_delta + (gamma - 2 delta) ||v + delta u||^2|`.
pub fn check_dissipation(
    op: &DiscreteOperator,
    params: &EnergyParams,
    state: &WaveState,
) -> Result<f64> {
    let d = params.delta();
    let bu = apply_b(op, params.gamma(), state)?;
    let shifted = bu.lincomb(1.0, state, d)?;
    let lhs = inner_x1_delta(op, params, &shifted, state)?;
    let w: Vec<f64> = state.v.iter().zip(&state.u).map(|(v, u)| v + d * u).collect();
    let rhs = (params.gamma() - 2.0 * d) * op.l2_inner(&w, &w)?;
    Ok((lhs + rhs).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Record every `sample_stride`-th step.
    pub sample_stride: usize,
    pub tol: f64,
}

impl EvolutionConfig {
    pub fn new(dt: f64, horizon: f64, sample_stride: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        if !(horizon >= dt && horizon.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "horizon {horizon} must be at least dt = {dt}"
            )));
        }
        if sample_stride == 0 {
            return Err(Error::InvalidParams("sample stride must be positive".into()));
        }
        let cfg = Self {
            dt,
            horizon,
            sample_stride,
            tol: STEP_TOL,
        };
        let steps = cfg.steps() as f64;
        if (steps * dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::InvalidParams(format!(
                "horizon {horizon} is not a multiple of dt = {dt}"
            )));
        }
        Ok(cfg)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Trapezoidal one-step map `(I - dt/2 B)^{-1} (I + dt/2 B)`.
#[derive(Debug, Clone)]
pub struct CnStepper<'a> {
    op: &'a DiscreteOperator,
    params: EnergyParams,
    dt: f64,
    tol: f64,
}

impl<'a> CnStepper<'a> {
    pub fn new(op: &'a DiscreteOperator, params: EnergyParams, dt: f64, tol: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            op,
            params,
            dt,
            tol,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn op(&self) -> &DiscreteOperator {
        self.op
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn step(&self, state: &WaveState) -> Result<WaveState> {
        // with mu = 2/dt the map equals -I - 2 mu (B - mu)^{-1}
        let mu = 2.0 / self.dt;
        let (w, _) = resolve_b(self.op, &self.params, mu, state, self.tol)?;
        w.lincomb(-2.0 * mu, state, -1.0)
    }
}

pub fn cn_step(
    params: &EnergyParams,
    op: &DiscreteOperator,
    state: &WaveState,
    dt: f64,
) -> Result<WaveState> {
    CnStepper::new(op, *params, dt, STEP_TOL)?.step(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<WaveState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub initial_x1: f64,
    pub initial_delta: f64,
    /// Whether the `delta` norm never increased between samples.
    pub delta_monotone: bool,
    /// Largest `||U(t)||_delta / ||U(s)||_delta` for consecutive samples `s < t`.
    pub max_step_ratio: f64,
    /// `M = K_delta / k_delta`.
    pub envelope: f64,
    /// Largest `||U(t)||_{X^1} / ||U(0)||_{X^1}`.
    pub max_x1_ratio: f64,
    /// Largest `| ||U(t)||_{X^1} - ||U(0)||_{X^1} | / ||U(0)||_{X^1}`.
    pub max_x1_drift: f64,
    /// Least-squares slope of `-log ||U(t)||_{X^1}` against `t`.
    pub measured_rate: f64,
    /// Samples where `||U(t)||_{X^1} > M e^{-delta t} ||U(0)||_{X^1}`.
    pub envelope_violations: usize,
}

/// Relative slack allowed on the `delta` norm between samples.
pub const MONOTONE_SLACK: f64 = 1e-10;

fn sample_times(cfg: &EvolutionConfig) -> Vec<usize> {
    let steps = cfg.steps();
    let mut idx: Vec<usize> = (0..=steps).step_by(cfg.sample_stride).collect();
    if *idx.last().unwrap() != steps {
        idx.push(steps);
    }
    idx
}

/// Advances `state0` over the horizon and records sampled states.
pub fn integrate(stepper: &CnStepper<'_>, state0: &WaveState, cfg: &EvolutionConfig) -> Result<Trajectory> {
    let samples = sample_times(cfg);
    let mut times = Vec::with_capacity(samples.len());
    let mut states = Vec::with_capacity(samples.len());
    let mut s = state0.clone();
    let mut next = 0;
    for step in 0..=cfg.steps() {
        if samples[next] == step {
            times.push(step as f64 * cfg.dt);
            states.push(s.clone());
            next += 1;
        }
        if step < cfg.steps() {
            s = stepper.step(&s)?;
        }
    }
    Ok(Trajectory { times, states })
}

pub fn decay_report(
    op: &DiscreteOperator,
    params: &EnergyParams,
    traj: &Trajectory,
) -> Result<DecayReport> {
    let x1: Vec<f64> = traj
        .states
        .iter()
        .map(|s| norm_x1(op, s))
        .collect::<Result<_>>()?;
    let dn: Vec<f64> = traj
        .states
        .iter()
        .map(|s| norm_x1_delta(op, params, s))
        .collect::<Result<_>>()?;
    let mut max_step_ratio: f64 = 0.0;
    let mut delta_monotone = true;
    for w in dn.windows(2) {
        if w[0] > 0.0 {
            max_step_ratio = max_step_ratio.max(w[1] / w[0]);
        }
        if w[1] > w[0] * (1.0 + MONOTONE_SLACK) {
            delta_monotone = false;
        }
    }
    let x0 = x1[0];
    let m = params.M();
    let (max_x1_ratio, max_x1_drift, envelope_violations) = if x0 > 0.0 {
        let viol = traj
            .times
            .iter()
            .zip(&x1)
            .filter(|(t, x)| **x > m * (-params.delta() * **t).exp() * x0 * (1.0 + MONOTONE_SLACK))
            .count();
        (
            x1.iter().fold(0.0f64, |a, x| a.max(x / x0)),
            x1.iter().fold(0.0f64, |a, x| a.max((x - x0).abs() / x0)),
            viol,
        )
    } else {
        (0.0, 0.0, 0)
    };
    let measured_rate = fit_rate(&traj.times, &x1);
    Ok(DecayReport {
        initial_x1: x0,
        initial_delta: dn[0],
        delta_monotone,
        max_step_ratio,
        envelope: m,
        max_x1_ratio,
        max_x1_drift,
        measured_rate,
        envelope_violations,
    })
}

fn fit_rate(t: &[f64], x: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(x)
        .filter(|(_, x)| **x > 0.0)
        .map(|(t, x)| (*t, -x.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Integrates from `state0` and reports the decay envelope.
pub fn evolve(
    params: &EnergyParams,
    op: &DiscreteOperator,
    state0: &WaveState,
    cfg: &EvolutionConfig,
) -> Result<(Trajectory, DecayReport)> {
    let stepper = CnStepper::new(op, *params, cfg.dt, cfg.tol)?;
    let traj = integrate(&stepper, state0, cfg)?;
    let report = decay_report(op, params, &traj)?;
    Ok((traj, report))
}

/// One sampled time of a `beta` trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionRecord {
    pub beta: f64,
    pub t: f64,
    pub norm_x1: f64,
    pub norm_x1_delta: f64,
    pub dev_from_omega: Option<f64>,
}

impl CsvRecord for EvolutionRecord {
    fn header() -> &'static str {
        "beta,t,norm_x1,norm_x1_delta,dev_from_omega"
    }

    fn row(&self) -> String {
        format!(
            "{},{:.6},{:.12e},{:.12e},{}",
            self.beta,
            self.t,
            self.norm_x1,
            self.norm_x1_delta,
            opt_cell(self.dev_from_omega)
        )
    }
}

/// Records for a single trajectory without a comparison.
pub fn trajectory_records(
    op: &DiscreteOperator,
    params: &EnergyParams,
    beta: f64,
    traj: &Trajectory,
) -> Result<Vec<EvolutionRecord>> {
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| {
            Ok(EvolutionRecord {
                beta,
                t,
                norm_x1: norm_x1(op, s)?,
                norm_x1_delta: norm_x1_delta(op, params, s)?,
                dev_from_omega: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrotterKatoStudy {
    pub records: Vec<EvolutionRecord>,
    /// `(beta, D_beta)` with `D_beta` the sup over samples of the deviation.
    pub sup_dev: Vec<(f64, f64)>,
    pub omega: Trajectory,
}

/// Compares `T_beta(t) U_beta` with the zero-extended `T_Omega(t) U0`.
///
/// `u0` is a well state. `perturbation`, if given, is a full-grid state added
/// to the initial data of each `beta` run with weight `1 / beta`.
#[allow(clippy::too_many_arguments)]
pub fn trotter_kato_study(
    grid: &Grid,
    potential: &PotentialField,
    mask: &OmegaMask,
    betas: &[f64],
    params: &EnergyParams,
    u0: &WaveState,
    cfg: &EvolutionConfig,
    perturbation: Option<&WaveState>,
) -> Result<TrotterKatoStudy> {
    check_schedule(betas)?;
    if u0.space != SpaceTag::Omega {
        return Err(Error::SpaceMismatch("initial data must live on the well".into()));
    }
    let a_omega = assemble_a_omega(grid, mask)?;
    let omega = integrate(&CnStepper::new(&a_omega, *params, cfg.dt, cfg.tol)?, u0, cfg)?;

    let per_beta: Vec<Result<(Vec<EvolutionRecord>, f64)>> = betas
        .par_iter()
        .map(|&beta| {
            let a = assemble_a_beta(grid, potential, beta)?;
            let mut start = u0.zero_extend(mask, beta)?;
            if let Some(p) = perturbation {
                let p = p.clone().retagged(SpaceTag::Beta(beta))?;
                start = start.lincomb(1.0, &p, 1.0 / beta)?;
            }
            let traj = integrate(&CnStepper::new(&a, *params, cfg.dt, cfg.tol)?, &start, cfg)?;
            let mut recs = trajectory_records(&a, params, beta, &traj)?;
            let mut sup: f64 = 0.0;
            for (rec, (s, so)) in recs.iter_mut().zip(traj.states.iter().zip(&omega.states)) {
                let ext = so.zero_extend(mask, beta)?;
                let d = norm_x1(&a, &s.lincomb(1.0, &ext, -1.0)?)?;
                rec.dev_from_omega = Some(d);
                sup = sup.max(d);
            }
            Ok((recs, sup))
        })
        .collect();

    let mut records = Vec::new();
    let mut sup_dev = Vec::new();
    for (&beta, res) in betas.iter().zip(per_beta) {
        let (r, d) = res?;
        records.extend(r);
        sup_dev.push((beta, d));
    }
    Ok(TrotterKatoStudy {
        records,
        sup_dev,
        omega,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    /// `sup_{t <= tau} max_U ||T_Omega(t) U - U||`.
    pub omega: f64,
    /// The same quantity for `T_beta` on zero-extended data.
    pub per_beta: Vec<(f64, f64)>,
}

impl ContinuityReport {
    pub fn max_over_beta(&self) -> f64 {
        self.per_beta.iter().fold(0.0, |a, p| a.max(p.1))
    }
}

/// Strong-continuity modulus on `[0, tau]` for a finite family of well states.
pub fn continuity_modulus(
    grid: &Grid,
    potential: &PotentialField,
    mask: &OmegaMask,
    betas: &[f64],
    params: &EnergyParams,
    family: &[WaveState],
    cfg: &EvolutionConfig,
) -> Result<ContinuityReport> {
    check_schedule(betas)?;
    let modulus = |op: &DiscreteOperator, starts: Vec<WaveState>| -> Result<f64> {
        let stepper = CnStepper::new(op, *params, cfg.dt, cfg.tol)?;
        let mut m: f64 = 0.0;
        for s0 in starts {
            let traj = integrate(&stepper, &s0, cfg)?;
            for s in &traj.states {
                m = m.max(norm_x1(op, &s.lincomb(1.0, &s0, -1.0)?)?);
            }
        }
        Ok(m)
    };
    let a_omega = assemble_a_omega(grid, mask)?;
    let omega = modulus(&a_omega, family.to_vec())?;
    let per_beta = betas
        .par_iter()
        .map(|&beta| {
            let a = assemble_a_beta(grid, potential, beta)?;
            let starts = family
                .iter()
                .map(|s| s.zero_extend(mask, beta))
                .collect::<Result<Vec<_>>>()?;
            Ok((beta, modulus(&a, starts)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContinuityReport { omega, per_beta })
}
