//! Cubic Nemitski operators, Duhamel/Picard mild solutions on short windows,
//! their concatenation over a horizon, and the nonlinear sweep in `beta`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::domain::{Grid, OmegaMask, PotentialField};
use crate::error::{check_len, Error, Result};
use crate::evolution::CnStepper;
use crate::operators::{
    assemble_a_beta, assemble_a_omega, norm_l2, norm_x1, DiscreteOperator, EnergyParams, SpaceTag,
    WaveState,
};
use crate::solver::{cg_solve, check_schedule};
use crate::study::CsvRecord;

/// `f(x, s) = chi(x) + c(x) s^3` with `chi_beta = chi_Omega + eta / beta`.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    c: Vec<f64>,
    chi_omega: Vec<f64>,
    eta: Vec<f64>,
    mask: Arc<OmegaMask>,
    c_local: Vec<f64>,
    chi_local: Vec<f64>,
    cell_volume: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityAudit {
    /// Nodes where `g(x, 0) != 0`.
    pub nonzero_at_origin: usize,
    /// Sampled `(x, s)` with `|d_s g| > C_1 s^2`.
    pub derivative_violations: usize,
    /// `(beta, ||chi_beta - chi_Omega||_{L^2})`.
    pub chi_gaps: Vec<(f64, f64)>,
    pub chi_gap_vanishing: bool,
}

impl NonlinearityAudit {
    pub fn passed(&self) -> bool {
        self.nonzero_at_origin == 0 && self.derivative_violations == 0 && self.chi_gap_vanishing
    }
}

impl Nonlinearity {
    /// `c`, `chi_omega` and `eta` are full-grid fields; `chi_omega` must vanish
    /// off the well and `eta` on it.
    pub fn new(
        grid: &Grid,
        mask: &OmegaMask,
        c: Vec<f64>,
        chi_omega: Vec<f64>,
        eta: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.len();
        check_len(n, mask.grid_len())?;
        check_len(n, c.len())?;
        check_len(n, chi_omega.len())?;
        check_len(n, eta.len())?;
        if c.iter().chain(&chi_omega).chain(&eta).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("nonlinearity fields must be finite".into()));
        }
        if (0..n).any(|i| !mask.contains(i) && chi_omega[i] != 0.0) {
            return Err(Error::InvalidParams("chi_Omega must vanish outside the well".into()));
        }
        if (0..n).any(|i| mask.contains(i) && eta[i] != 0.0) {
            return Err(Error::InvalidParams("eta must vanish on the well".into()));
        }
        let nl = Self {
            c_local: mask.restrict(&c)?,
            chi_local: mask.restrict(&chi_omega)?,
            c,
            chi_omega,
            eta,
            mask: Arc::new(mask.clone()),
            cell_volume: grid.cell_volume(),
        };
        let audit = nl.audit(&[10.0, 1e2, 1e3, 1e4, 1e5])?;
        if !audit.passed() {
            return Err(Error::InvalidParams(format!("nonlinearity audit failed: {audit:?}")));
        }
        Ok(nl)
    }

    /// Constant coefficient `c_value` everywhere, `chi_Omega = chi_amplitude * bump`
    /// on the well and `eta = eta_amplitude * V`.
    pub fn cubic(
        grid: &Grid,
        potential: &PotentialField,
        mask: &OmegaMask,
        c_value: f64,
        chi_amplitude: f64,
        eta_amplitude: f64,
    ) -> Result<Self> {
        let omega = &potential.well().omega;
        let chi = grid
            .sample(|x| chi_amplitude * omega.bump(x))
            .into_iter()
            .enumerate()
            .map(|(i, x)| if mask.contains(i) { x } else { 0.0 })
            .collect();
        let eta = potential.values().iter().map(|v| eta_amplitude * v).collect();
        Self::new(grid, mask, vec![c_value; grid.len()], chi, eta)
    }

    /// `f = 0`.
    pub fn zero(grid: &Grid, mask: &OmegaMask) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, mask, vec![0.0; n], vec![0.0; n], vec![0.0; n])
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn max_abs_c(&self) -> f64 {
        self.c.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    /// `C_1 = 3 max |c|`.
    pub fn growth_constant(&self) -> f64 {
        3.0 * self.max_abs_c()
    }

    pub fn chi_omega(&self) -> &[f64] {
        &self.chi_omega
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn mask(&self) -> &OmegaMask {
        &self.mask
    }

    pub fn chi_beta(&self, beta: f64) -> Result<Vec<f64>> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParams(format!("chi_beta needs beta > 0, got {beta}")));
        }
        Ok(self
            .chi_omega
            .iter()
            .zip(&self.eta)
            .map(|(c, e)| c + e / beta)
            .collect())
    }

    /// `||chi_beta - chi_Omega||_{L^2}`.
    pub fn chi_gap(&self, beta: f64) -> Result<f64> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParams(format!("chi_beta needs beta > 0, got {beta}")));
        }
        let s: f64 = self.eta.iter().map(|e| (e / beta).powi(2)).sum();
        Ok((self.cell_volume * s).sqrt())
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().chain(&self.chi_omega).chain(&self.eta).all(|&x| x == 0.0)
    }

    pub fn audit(&self, betas: &[f64]) -> Result<NonlinearityAudit> {
        let nonzero_at_origin = self.c.iter().filter(|&&c| c * 0.0f64.powi(3) != 0.0).count();
        let c1 = self.growth_constant();
        let mut derivative_violations = 0;
        for &c in &self.c {
            for k in -40..=40 {
                let s = k as f64 * 0.25;
                let dg = 3.0 * c * s * s;
                if dg.abs() > c1 * s * s * (1.0 + 1e-15) {
                    derivative_violations += 1;
                }
            }
        }
        let chi_gaps: Vec<(f64, f64)> = betas
            .iter()
            .map(|&b| Ok((b, self.chi_gap(b)?)))
            .collect::<Result<_>>()?;
        let chi_gap_vanishing = chi_gaps.windows(2).all(|w| w[1].1 <= w[0].1)
            && chi_gaps.last().is_none_or(|g| g.1 <= chi_gaps[0].1 * betas[0] / g.0 * (1.0 + 1e-12));
        Ok(NonlinearityAudit {
            nonzero_at_origin,
            derivative_violations,
            chi_gaps,
            chi_gap_vanishing,
        })
    }
}

/// Nodal evaluation `chi(x_i) + c(x_i) u_i^3` in the given space.
pub fn nemitski_apply(nl: &Nonlinearity, space: SpaceTag, u: &[f64]) -> Result<Vec<f64>> {
    match space {
        SpaceTag::Beta(beta) => {
            check_len(nl.c.len(), u.len())?;
            let chi = nl.chi_beta(beta)?;
            Ok(u.iter()
                .zip(&nl.c)
                .zip(chi)
                .map(|((x, c), h)| h + c * x * x * x)
                .collect())
        }
        SpaceTag::Omega => {
            check_len(nl.c_local.len(), u.len())?;
            Ok(u.iter()
                .zip(&nl.c_local)
                .zip(&nl.chi_local)
                .map(|((x, c), h)| h + c * x * x * x)
                .collect())
        }
    }
}

/// `Phi(U) = (0, f(u))`.
fn phi(nl: &Nonlinearity, s: &WaveState) -> Result<WaveState> {
    Ok(WaveState {
        u: vec![0.0; s.len()],
        v: nemitski_apply(nl, s.space, &s.u)?,
        space: s.space,
    })
}

/// Measured Nemitski constants.
#[derive(Debug, Clone, PartialEq)]
pub struct NemitskiEstimate {
    /// Largest observed `||u||_{L^6} / ||u||_{H^1}`.
    pub sobolev: f64,
    /// `C = 2 max(sup ||chi||, 1.5 max|c| S^3)`.
    pub constant: f64,
    pub samples: usize,
    pub cubic_violations: usize,
    pub lipschitz_violations: usize,
    /// Largest sampled ratio of the left side to the right side of either bound.
    pub worst_ratio: f64,
}

fn l6_norm(u: &[f64], grid: &Grid) -> f64 {
    (grid.cell_volume() * u.iter().map(|x| x.powi(6)).sum::<f64>()).powf(1.0 / 6.0)
}

fn sample_field(grid: &Grid, rng: &mut ChaCha8Rng, kind: usize) -> Vec<f64> {
    let l = grid.half_width();
    let d = grid.dim();
    match kind % 3 {
        0 => (0..grid.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        1 => {
            let modes: Vec<(Vec<f64>, f64)> = (0..4)
                .map(|_| {
                    let k = (0..d).map(|_| rng.random_range(1..6) as f64).collect();
                    (k, rng.sample::<f64, _>(StandardNormal))
                })
                .collect();
            grid.sample(|x| {
                modes
                    .iter()
                    .map(|(k, a)| {
                        a * x
                            .iter()
                            .zip(k)
                            .map(|(xi, ki)| (ki * std::f64::consts::PI * (xi + l) / (2.0 * l)).sin())
                            .product::<f64>()
                    })
                    .sum()
            })
        }
        _ => {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-0.8 * l..0.8 * l)).collect();
            let w = rng.random_range(0.02..0.5) * l;
            grid.sample(|x| {
                let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
                (-r2 / (w * w)).exp()
            })
        }
    }
}

/// Largest discrete `L^6 / H^1` ratio found by the ascent
/// `u <- normalise(A_0^{-1} u^5)` from several starts.
pub fn sobolev_constant(grid: &Grid, starts: usize, iterations: usize, seed: u64) -> Result<f64> {
    let a0 = crate::operators::assemble_neg_laplacian(grid);
    let h1 = |u: &[f64]| crate::operators::norm_h1(u, grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for s in 0..starts {
        let mut u = sample_field(grid, &mut rng, s + 1);
        for _ in 0..iterations {
            let n = h1(&u)?;
            if n == 0.0 {
                break;
            }
            best = best.max(l6_norm(&u, grid) / n);
            let rhs: Vec<f64> = u.iter().map(|x| x.powi(5)).collect();
            // A_0 = -Delta_h + I
            let (w, _) = cg_solve(&a0, 1.0, &rhs, 1e-10)?;
            let nw = h1(&w)?;
            if nw == 0.0 {
                break;
            }
            u = w.iter().map(|x| x / nw).collect();
        }
        let n = h1(&u)?;
        if n > 0.0 {
            best = best.max(l6_norm(&u, grid) / n);
        }
    }
    Ok(best)
}

/// Measures `C` for the cubic and Lipschitz bounds and verifies both on
/// `trials` random fields and pairs, in `||.||_{1,beta}` for `beta = 0` and
/// `beta = beta_min` and on well-supported fields.
pub fn estimate_nemitski_constant(
    nl: &Nonlinearity,
    grid: &Grid,
    potential: &PotentialField,
    beta_min: f64,
    trials: usize,
    seed: u64,
) -> Result<NemitskiEstimate> {
    if trials < 1000 {
        return Err(Error::InvalidParams(format!("need at least 1000 trials, got {trials}")));
    }
    let sobolev = sobolev_constant(grid, 8, 60, seed)?;
    let chi_sup = norm_l2(&nl.chi_omega, grid)? + nl.chi_gap(beta_min)?;
    let constant = 2.0 * chi_sup.max(1.5 * nl.max_abs_c() * sobolev.powi(3));

    let mask = nl.mask();
    let a_b = assemble_a_beta(grid, potential, beta_min)?;
    let a_0 = assemble_a_beta(grid, potential, 0.0)?;
    let a_o = assemble_a_omega(grid, mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut est = NemitskiEstimate {
        sobolev,
        constant,
        samples: 0,
        cubic_violations: 0,
        lipschitz_violations: 0,
        worst_ratio: 0.0,
    };
    let mut t = 0;
    while est.samples < trials {
        t += 1;
        let mut u1 = sample_field(grid, &mut rng, t);
        let mut u2 = sample_field(grid, &mut rng, t + 1);
        let s1: f64 = rng.random_range(0.0..6.0);
        let s2: f64 = rng.random_range(0.0..6.0);
        let (op, space) = match t % 3 {
            0 => (&a_0, SpaceTag::Beta(beta_min)),
            1 => (&a_b, SpaceTag::Beta(beta_min)),
            _ => {
                u1 = mask.restrict(&u1)?;
                u2 = mask.restrict(&u2)?;
                (&a_o, SpaceTag::Omega)
            }
        };
        let n1 = op.form_norm(&u1)?;
        let n2 = op.form_norm(&u2)?;
        if n1 == 0.0 || n2 == 0.0 {
            continue;
        }
        u1.iter_mut().for_each(|x| *x *= s1 / n1);
        u2.iter_mut().for_each(|x| *x *= s2 / n2);
        let f1 = nemitski_apply(nl, space, &u1)?;
        let f2 = nemitski_apply(nl, space, &u2)?;
        // forcing is measured against the beta_min norm in every space
        let l2 = |x: &[f64]| -> f64 { (grid.cell_volume() * x.iter().map(|a| a * a).sum::<f64>()).sqrt() };
        let cubic_rhs = constant * (1.0 + s1.powi(3));
        let cubic_lhs = l2(&f1);
        let du: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a - b).collect();
        let df: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
        let lip_rhs = constant * (1.0 + s1 * s1 + s2 * s2) * op.form_norm(&du)?;
        let lip_lhs = l2(&df);
        est.samples += 1;
        if cubic_lhs > cubic_rhs {
            est.cubic_violations += 1;
        }
        if lip_lhs > lip_rhs {
            est.lipschitz_violations += 1;
        }
        if cubic_rhs > 0.0 {
            est.worst_ratio = est.worst_ratio.max(cubic_lhs / cubic_rhs);
        }
        if lip_rhs > 0.0 {
            est.worst_ratio = est.worst_ratio.max(lip_lhs / lip_rhs);
        }
    }
    Ok(est)
}

/// Constants of one Picard window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConstants {
    pub r: f64,
    pub c: f64,
    pub k3r: f64,
    pub l3r: f64,
    pub m: f64,
    pub delta: f64,
    pub rho: f64,
    pub tau: f64,
    pub steps: usize,
}

impl PicardConstants {
    /// `tau` is the largest multiple of `dt` satisfying both window
    /// conditions, or `window_tau` if given and admissible.
    pub fn new(
        r: f64,
        c: f64,
        params: &EnergyParams,
        dt: f64,
        window_tau: Option<f64>,
    ) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParams(format!("radius must be positive, got {r}")));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidParams(format!("Nemitski constant must be >= 0, got {c}")));
        }
        let m = params.M();
        let k3r = c * (1.0 + (3.0 * r).powi(3));
        let l3r = c * (1.0 + 2.0 * (3.0 * r).powi(2));
        let rho = r / (4.0 * (m + 1.0));
        let tau_max = if c == 0.0 {
            f64::INFINITY
        } else {
            (r / (4.0 * m * k3r)).min(1.0 / (2.0 * m * l3r))
        };
        let steps = match window_tau {
            Some(t) => {
                if t > tau_max {
                    return Err(Error::InvalidParams(format!(
                        "window length {t} exceeds the admissible {tau_max}"
                    )));
                }
                (t / dt + 1e-9).floor() as usize
            }
            None if tau_max.is_infinite() => usize::MAX,
            None => (tau_max / dt + 1e-9).floor() as usize,
        };
        if steps == 0 {
            return Err(Error::InvalidParams(format!(
                "admissible window {tau_max} is shorter than dt = {dt}"
            )));
        }
        Ok(Self {
            r,
            c,
            k3r,
            l3r,
            m,
            delta: params.delta(),
            rho,
            tau: if steps == usize::MAX { f64::INFINITY } else { steps as f64 * dt },
            steps,
        })
    }

    /// Checks both window conditions and the initial-data radius condition.
    pub fn satisfied(&self) -> bool {
        let eps = 1e-12;
        (self.m + 1.0) * self.rho <= self.r / 4.0 * (1.0 + eps)
            && (self.tau.is_infinite()
                || (self.m * self.tau * self.k3r <= self.r / 4.0 * (1.0 + eps)
                    && self.m * self.tau * self.l3r <= 0.5 * (1.0 + eps)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Abort when a gap ratio exceeds this.
    pub contraction_limit: f64,
    pub window_tau: Option<f64>,
    /// Lower bound on the hull radius used for the constants.
    pub min_radius: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 60,
            contraction_limit: 0.75,
            window_tau: None,
            min_radius: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    /// States at `t_j = j dt`, `j = 0..=steps`.
    pub states: Vec<WaveState>,
    pub sweeps: usize,
    pub gaps: Vec<f64>,
    pub ratios: Vec<f64>,
    /// `sup_j ||G(U)_j - U_j||` of the accepted iterate.
    pub residual: f64,
    /// `sup_j ||U_j - U_0||`.
    pub ball_max: f64,
    /// `sup_j ||T(t_j) U_0 - U_0||` of the linear trajectory.
    pub continuity: f64,
}

/// Discrete Duhamel map with trapezoidal quadrature:
/// `Z_0 = U_0`, `Z_{j+1} = S (Z_j + dt/2 Phi_j) + dt/2 Phi_{j+1}`.
fn duhamel(
    stepper: &CnStepper<'_>,
    nl: &Nonlinearity,
    u0: &WaveState,
    ys: &[WaveState],
) -> Result<Vec<WaveState>> {
    let half = 0.5 * stepper.dt();
    let phis: Vec<WaveState> = ys.iter().map(|y| phi(nl, y)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(ys.len());
    out.push(u0.clone());
    for j in 0..ys.len() - 1 {
        let z = out[j].lincomb(1.0, &phis[j], half)?;
        let z = stepper.step(&z)?.lincomb(1.0, &phis[j + 1], half)?;
        out.push(z);
    }
    Ok(out)
}

fn linear_run(stepper: &CnStepper<'_>, u0: &WaveState, steps: usize) -> Result<Vec<WaveState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(u0.clone());
    for j in 0..steps {
        let next = stepper.step(&out[j])?;
        out.push(next);
    }
    Ok(out)
}

fn sup_distance(op: &DiscreteOperator, a: &[WaveState], b: &[WaveState]) -> Result<f64> {
    let mut m: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        m = m.max(norm_x1(op, &x.lincomb(1.0, y, -1.0)?)?);
    }
    Ok(m)
}

/// Fixed point of the discrete Duhamel map on `constants.steps` steps,
/// started from the linear trajectory.
pub fn picard_local_solve(
    stepper: &CnStepper<'_>,
    nl: &Nonlinearity,
    u0: &WaveState,
    constants: &PicardConstants,
    opts: &PicardOptions,
    anchor: Option<&WaveState>,
    steps: usize,
) -> Result<LocalSolution> {
    let op = stepper.op();
    if steps == 0 || steps > constants.steps {
        return Err(Error::InvalidParams(format!(
            "window of {steps} steps outside 1..={}",
            constants.steps
        )));
    }
    if let Some(a) = anchor {
        let d = norm_x1(op, &u0.lincomb(1.0, a, -1.0)?)?;
        if d > constants.rho {
            return Err(Error::InvalidParams(format!(
                "initial data at distance {d} from the anchor exceeds rho = {}",
                constants.rho
            )));
        }
    }
    let linear = linear_run(stepper, u0, steps)?;
    let start = vec![u0.clone(); steps + 1];
    let continuity = sup_distance(op, &linear, &start)?;
    let mut y = linear;
    let mut gaps = Vec::new();
    let mut ratios = Vec::new();
    for sweep in 1..=opts.max_sweeps {
        let next = duhamel(stepper, nl, u0, &y)?;
        let ball = sup_distance(op, &next, &start)?;
        if constants.c > 0.0 && ball > constants.r {
            return Err(Error::BallExit {
                radius: constants.r,
                distance: ball,
            });
        }
        let gap = sup_distance(op, &next, &y)?;
        if let Some(&prev) = gaps.last() {
            let ratio = if prev > 0.0 { gap / prev } else { 0.0 };
            ratios.push(ratio);
            if ratio > opts.contraction_limit {
                return Err(Error::NonContraction { sweep, ratio });
            }
        }
        gaps.push(gap);
        y = next;
        if gap <= opts.tol {
            let check = duhamel(stepper, nl, u0, &y)?;
            let residual = sup_distance(op, &check, &y)?;
            return Ok(LocalSolution {
                states: y,
                sweeps: sweep,
                gaps,
                ratios,
                residual,
                ball_max: ball,
                continuity,
            });
        }
    }
    Err(Error::PicardStalled {
        sweeps: opts.max_sweeps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub index: usize,
    pub start_step: usize,
    pub steps: usize,
    pub constants: PicardConstants,
    pub sweeps: usize,
    pub max_ratio: f64,
    pub residual: f64,
    pub ball_max: f64,
    pub continuity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSolution {
    pub dt: f64,
    /// States at every step `t_j = j dt`.
    pub states: Vec<WaveState>,
    pub windows: Vec<WindowReport>,
}

impl GlobalSolution {
    /// Window containing step `j` (joints belong to the earlier window).
    pub fn window_of(&self, j: usize) -> Option<&WindowReport> {
        self.windows
            .iter()
            .find(|w| j <= w.start_step + w.steps)
    }

    pub fn max_ratio(&self) -> f64 {
        self.windows.iter().fold(0.0, |a, w| a.max(w.max_ratio))
    }

    pub fn max_residual(&self) -> f64 {
        self.windows.iter().fold(0.0, |a, w| a.max(w.residual))
    }
}

/// Concatenates Picard windows over `[0, horizon]`, recomputing the constants
/// from the running hull radius at the start of every window.
pub fn global_solve(
    stepper: &CnStepper<'_>,
    nl: &Nonlinearity,
    u0: &WaveState,
    horizon: f64,
    nemitski: f64,
    opts: &PicardOptions,
) -> Result<GlobalSolution> {
    let dt = stepper.dt();
    let total = (horizon / dt).round() as usize;
    if total == 0 || ((total as f64) * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::InvalidParams(format!(
            "horizon {horizon} is not a positive multiple of dt = {dt}"
        )));
    }
    let op = stepper.op();
    let mut states = vec![u0.clone()];
    let mut windows = Vec::new();
    let mut hull = norm_x1(op, u0)?;
    while states.len() - 1 < total {
        let start_step = states.len() - 1;
        let start = states.last().unwrap().clone();
        let r = hull.max(opts.min_radius);
        let constants = PicardConstants::new(r, nemitski, stepper.params(), dt, opts.window_tau)?;
        let steps = constants.steps.min(total - start_step);
        let index = windows.len();
        let local = picard_local_solve(stepper, nl, &start, &constants, opts, None, steps)
            .map_err(|e| Error::Window {
                index,
                source: Box::new(e),
            })?;
        for s in &local.states[1..] {
            hull = hull.max(norm_x1(op, s)?);
        }
        windows.push(WindowReport {
            index,
            start_step,
            steps,
            constants,
            sweeps: local.sweeps,
            max_ratio: local.ratios.iter().fold(0.0, |a: f64, &r| a.max(r)),
            residual: local.residual,
            ball_max: local.ball_max,
            continuity: local.continuity,
        });
        states.extend(local.states.into_iter().skip(1));
    }
    Ok(GlobalSolution {
        dt,
        states,
        windows,
    })
}

/// `1/2 ||U||_{X^1}^2 - 1/4 sum h^dim c u^4`, nonincreasing for `c <= 0`,
/// `chi = 0` and `gamma >= 0`.
pub fn discrete_energy(op: &DiscreteOperator, nl: &Nonlinearity, s: &WaveState) -> Result<f64> {
    let c = match s.space {
        SpaceTag::Beta(_) => &nl.c,
        SpaceTag::Omega => &nl.c_local,
    };
    check_len(c.len(), s.len())?;
    let quartic: f64 = s.u.iter().zip(c).map(|(u, c)| c * u.powi(4)).sum();
    Ok(0.5 * norm_x1(op, s)?.powi(2) - 0.25 * op.grid().cell_volume() * quartic)
}

/// One sampled time of the nonlinear sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearRecord {
    pub beta: f64,
    pub t: f64,
    pub dev_x1beta: f64,
    pub a_term: f64,
    pub b_term: f64,
    pub c_term: f64,
    pub picard_sweeps: usize,
}

impl CsvRecord for NonlinearRecord {
    fn header() -> &'static str {
        "beta,t,dev_x1beta,a_term,b_term,c_term,picard_sweeps"
    }

    fn row(&self) -> String {
        format!(
            "{},{:.6},{:.12e},{:.6e},{:.6e},{:.6e},{}",
            self.beta, self.t, self.dev_x1beta, self.a_term, self.b_term, self.c_term, self.picard_sweeps
        )
    }
}

/// Bound decomposition on the first window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowDiagnostics {
    pub beta: f64,
    pub tau: f64,
    pub m: f64,
    pub chi_gap: f64,
    /// `2 sup_s ||T_beta(s) U_beta0 - T_Omega(s) U_Omega0||`.
    pub a_term: f64,
    /// `2 M tau ||chi_beta - chi_Omega||`.
    pub b_term: f64,
    /// `2 tau sup_{s <= t} ||(T_beta(t - s) - T_Omega(t - s)) Phi_Omega(U_Omega(s))||`.
    pub c_term: f64,
    /// `sup_{t <= tau} ||U_beta(t) - U_Omega(t)||`.
    pub window_dev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearSetup {
    pub params: EnergyParams,
    pub dt: f64,
    pub horizon: f64,
    pub sample_stride: usize,
    pub nemitski: f64,
    pub picard: PicardOptions,
    pub step_tol: f64,
}

#[derive(Debug, Clone)]
pub struct NonlinearStudy {
    pub records: Vec<NonlinearRecord>,
    pub sup_dev: Vec<(f64, f64)>,
    pub diagnostics: Vec<WindowDiagnostics>,
    pub omega: GlobalSolution,
    pub beta_solutions: Vec<GlobalSolution>,
}

impl NonlinearStudy {
    pub fn max_ratio(&self) -> f64 {
        self.beta_solutions
            .iter()
            .chain(std::iter::once(&self.omega))
            .fold(0.0, |a, s| a.max(s.max_ratio()))
    }

    pub fn max_residual(&self) -> f64 {
        self.beta_solutions
            .iter()
            .chain(std::iter::once(&self.omega))
            .fold(0.0, |a, s| a.max(s.max_residual()))
    }
}

/// Compares the mild solutions for each `beta` with the zero-extended well
/// solution over the horizon.
#[allow(clippy::too_many_arguments)]
pub fn nonlinear_convergence_study(
    grid: &Grid,
    potential: &PotentialField,
    mask: &OmegaMask,
    betas: &[f64],
    nl: &Nonlinearity,
    u0: &WaveState,
    setup: &NonlinearSetup,
    perturbation: Option<&WaveState>,
) -> Result<NonlinearStudy> {
    check_schedule(betas)?;
    if u0.space != SpaceTag::Omega {
        return Err(Error::SpaceMismatch("initial data must live on the well".into()));
    }
    if setup.sample_stride == 0 {
        return Err(Error::InvalidParams("sample stride must be positive".into()));
    }
    let params = setup.params;
    let a_omega = assemble_a_omega(grid, mask)?;
    let st_omega = CnStepper::new(&a_omega, params, setup.dt, setup.step_tol)?;
    let omega = global_solve(&st_omega, nl, u0, setup.horizon, setup.nemitski, &setup.picard)
        .map_err(|e| Error::StudyFailed(format!("well solution failed: {e}")))?;
    let omega_hull = omega
        .states
        .iter()
        .map(|s| norm_x1(&a_omega, s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max)
        .max(setup.picard.min_radius);
    let diag_constants =
        PicardConstants::new(omega_hull, setup.nemitski, &params, setup.dt, setup.picard.window_tau)?;
    let total = omega.states.len() - 1;
    let k = diag_constants.steps.min(total);
    let tau = k as f64 * setup.dt;
    let phi_omega: Vec<WaveState> = omega.states[..=k]
        .iter()
        .map(|s| phi(nl, s))
        .collect::<Result<_>>()?;

    type PerBeta = (Vec<NonlinearRecord>, f64, WindowDiagnostics, GlobalSolution);
    let per_beta: Vec<Result<PerBeta>> = betas
        .par_iter()
        .map(|&beta| {
            let a = assemble_a_beta(grid, potential, beta)?;
            let st = CnStepper::new(&a, params, setup.dt, setup.step_tol)?;
            let mut start = u0.zero_extend(mask, beta)?;
            if let Some(p) = perturbation {
                start = start.lincomb(1.0, &p.clone().retagged(SpaceTag::Beta(beta))?, 1.0 / beta)?;
            }
            let sol = global_solve(&st, nl, &start, setup.horizon, setup.nemitski, &setup.picard)
                .map_err(|e| Error::StudyFailed(format!("beta = {beta}: {e}")))?;
            let devs: Vec<f64> = sol
                .states
                .iter()
                .zip(&omega.states)
                .map(|(s, so)| norm_x1(&a, &s.lincomb(1.0, &so.zero_extend(mask, beta)?, -1.0)?))
                .collect::<Result<_>>()?;

            // first-window decomposition
            let lin_b = linear_run(&st, &start, k)?;
            let lin_o = linear_run(&st_omega, u0, k)?;
            let ext: Vec<WaveState> = lin_o
                .iter()
                .map(|s| s.zero_extend(mask, beta))
                .collect::<Result<_>>()?;
            let a_term = 2.0 * sup_distance(&a, &lin_b, &ext)?;
            let chi_gap = nl.chi_gap(beta)?;
            let b_term = 2.0 * params.M() * tau * chi_gap;
            let mut c_sup: f64 = 0.0;
            for (i, p) in phi_omega.iter().enumerate() {
                let mut zb = p.zero_extend(mask, beta)?;
                let mut zo = p.clone();
                for _ in i..k {
                    zb = st.step(&zb)?;
                    zo = st_omega.step(&zo)?;
                    let d = norm_x1(&a, &zb.lincomb(1.0, &zo.zero_extend(mask, beta)?, -1.0)?)?;
                    c_sup = c_sup.max(d);
                }
            }
            let diag = WindowDiagnostics {
                beta,
                tau,
                m: params.M(),
                chi_gap,
                a_term,
                b_term,
                c_term: 2.0 * tau * c_sup,
                window_dev: devs[..=k].iter().fold(0.0f64, |a, &b| a.max(b)),
            };

            let mut records = Vec::new();
            for j in (0..=total).step_by(setup.sample_stride).chain(
                (total % setup.sample_stride != 0).then_some(total),
            ) {
                records.push(NonlinearRecord {
                    beta,
                    t: j as f64 * setup.dt,
                    dev_x1beta: devs[j],
                    a_term: diag.a_term,
                    b_term: diag.b_term,
                    c_term: diag.c_term,
                    picard_sweeps: sol.window_of(j.max(1)).map_or(0, |w| w.sweeps),
                });
            }
            let sup = devs.iter().fold(0.0f64, |a, &b| a.max(b));
            Ok((records, sup, diag, sol))
        })
        .collect();

    let mut records = Vec::new();
    let mut sup_dev = Vec::new();
    let mut diagnostics = Vec::new();
    let mut beta_solutions = Vec::new();
    for (&beta, res) in betas.iter().zip(per_beta) {
        let (r, sup, d, sol) = res?;
        records.extend(r);
        sup_dev.push((beta, sup));
        diagnostics.push(d);
        beta_solutions.push(sol);
    }
    Ok(NonlinearStudy {
        records,
        sup_dev,
        diagnostics,
        omega,
        beta_solutions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
    use crate::evolution::{integrate, EvolutionConfig, STEP_TOL};
    use std::f64::consts::PI;

    fn setup(n: usize) -> (Grid, PotentialField, OmegaMask) {
        let g = build_grid(1, PI, n).unwrap();
        let well = WellSpec {
            omega: OmegaSpec::interval(-PI / 2.0, PI / 2.0),
            width: PI / 4.0,
            profile: Profile::Ramp,
        };
        let (v, m) = build_well_potential(&g, &well).unwrap();
        (g, v, m)
    }

    #[test]
    fn nemitski_basic_cases() {
        let (g, v, m) = setup(63);
        let nl = Nonlinearity::cubic(&g, &v, &m, -1.0, 0.5, 0.3).unwrap();
        let zero = vec![0.0; g.len()];
        assert_eq!(nemitski_apply(&nl, SpaceTag::Beta(10.0), &zero).unwrap(), nl.chi_beta(10.0).unwrap());
        let lin = Nonlinearity::cubic(&g, &v, &m, 0.0, 0.5, 0.3).unwrap();
        let u = g.sample(|x| x[0].sin());
        assert_eq!(
            nemitski_apply(&lin, SpaceTag::Beta(10.0), &u).unwrap(),
            lin.chi_beta(10.0).unwrap()
        );
        // difference for well-supported fields is the forcing gap
        let uo: Vec<f64> = (0..m.len()).map(|i| (i as f64 * 0.1).cos()).collect();
        let fb = nemitski_apply(&nl, SpaceTag::Beta(100.0), &m.zero_extend(&uo).unwrap()).unwrap();
        let fo = m.zero_extend(&nemitski_apply(&nl, SpaceTag::Omega, &uo).unwrap()).unwrap();
        let d: Vec<f64> = fb.iter().zip(&fo).map(|(a, b)| a - b).collect();
        let gap = norm_l2(&d, &g).unwrap();
        assert!((gap - nl.chi_gap(100.0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn support_rules_are_enforced() {
        let (g, _, m) = setup(31);
        let n = g.len();
        assert!(Nonlinearity::new(&g, &m, vec![0.0; n], vec![1.0; n], vec![0.0; n]).is_err());
        let eta: Vec<f64> = (0..n).map(|i| if m.contains(i) { 1.0 } else { 0.0 }).collect();
        assert!(Nonlinearity::new(&g, &m, vec![0.0; n], vec![0.0; n], eta).is_err());
    }

    #[test]
    fn constants_satisfy_window_conditions() {
        let p = EnergyParams::with_default_delta(1.0).unwrap();
        let c = PicardConstants::new(2.0, 1.5, &p, 1e-4, None).unwrap();
        assert!(c.satisfied());
        assert!(c.steps >= 1);
        let p0 = EnergyParams::new(0.0, 0.0).unwrap();
        assert!(PicardConstants::new(100.0, 1.5, &p0, 1e-2, None).is_err());
        assert!(PicardConstants::new(2.0, 1.5, &p, 1e-4, Some(1.0)).is_err());
    }

    #[test]
    fn free_problem_is_the_linear_flow() {
        let (g, v, m) = setup(31);
        let nl = Nonlinearity::zero(&g, &m).unwrap();
        let a = assemble_a_beta(&g, &v, 10.0).unwrap();
        let p = EnergyParams::with_default_delta(0.5).unwrap();
        let st = CnStepper::new(&a, p, 0.01, STEP_TOL).unwrap();
        let u0 = WaveState::new(
            g.sample(|x| m.flags()[0] as u8 as f64 + x[0].cos().powi(2)),
            vec![0.0; g.len()],
            SpaceTag::Beta(10.0),
        )
        .unwrap();
        let sol = global_solve(&st, &nl, &u0, 0.5, 0.0, &PicardOptions::default()).unwrap();
        assert!(sol.windows.iter().all(|w| w.sweeps == 1));
        let cfg = EvolutionConfig::new(0.01, 0.5, 1).unwrap();
        let lin = integrate(&st, &u0, &cfg).unwrap();
        assert_eq!(lin.states, sol.states);
    }

    #[test]
    fn stationary_state_is_kept() {
        let (g, _, m) = setup(63);
        let n = g.len();
        let chi: Vec<f64> = g
            .sample(|x| x[0].cos().powi(2))
            .into_iter()
            .enumerate()
            .map(|(i, x)| if m.contains(i) { x } else { 0.0 })
            .collect();
        let nl = Nonlinearity::new(&g, &m, vec![0.0; n], chi, vec![0.0; n]).unwrap();
        let ao = assemble_a_omega(&g, &m).unwrap();
        let chi_o = m.restrict(nl.chi_omega()).unwrap();
        let (us, _) = cg_solve(&ao, 0.0, &chi_o, 1e-13).unwrap();
        let u0 = WaveState::new(us, vec![0.0; m.len()], SpaceTag::Omega).unwrap();
        let p = EnergyParams::with_default_delta(1.0).unwrap();
        let st = CnStepper::new(&ao, p, 1e-3, STEP_TOL).unwrap();
        let sol = global_solve(&st, &nl, &u0, 0.05, 1.0, &PicardOptions::default()).unwrap();
        let drift = sol
            .states
            .iter()
            .map(|s| norm_x1(&ao, &s.lincomb(1.0, &u0, -1.0).unwrap()).unwrap())
            .fold(0.0, f64::max);
        assert!(drift < 1e-8, "{drift}");
    }
}
