//! Randomised machine-precision checks of the discrete identities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::domain::{Grid, OmegaMask, PotentialField};
use crate::error::Result;
use crate::evolution::check_dissipation;
use crate::operators::{
    assemble_a_beta, assemble_a_omega, norm_h1, norm_x1, norm_x1_delta, EnergyParams, SpaceTag,
    WaveState,
};
use crate::solver::{resolve_b, resolvent_power, resolvent_residual};
use crate::spectral::{lowest_eigenpairs, minmax_check, EigenOptions};
use crate::study::CsvRecord;

/// Pinned thresholds of the suite.
pub const DISSIPATIVITY_TOL: f64 = 1e-10;
pub const FORM_TOL: f64 = 1e-12;
pub const RESOLVENT_TOL: f64 = 1e-9;
pub const POWER_SLACK: f64 = 1e-8;
/// Relative rounding allowance for the norm sandwich.
pub const SANDWICH_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub draws: usize,
    pub power_draws: usize,
    /// `beta` is drawn log-uniformly from this range.
    pub beta_range: (f64, f64),
    pub minmax_trials: usize,
    pub cg_tol: f64,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            draws: 1000,
            power_draws: 200,
            beta_range: (1.0, 1e4),
            minmax_trials: 50,
            cg_tol: 1e-12,
            seed: 0,
        }
    }
}

/// Worst observed value per identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub draws: usize,
    pub dissipativity_max_rel: f64,
    pub form_max_rel: f64,
    pub sandwich_violations: usize,
    pub resolvent_max_rel: f64,
    pub power_checks: usize,
    /// Largest `||(mu - B)^{-j} U||_delta (mu + delta)^j / ||U||_delta`.
    pub power_max_ratio: f64,
    pub power_violations: usize,
    pub minmax_checks: usize,
    pub minmax_violations: usize,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.dissipativity_max_rel <= DISSIPATIVITY_TOL
            && self.form_max_rel <= FORM_TOL
            && self.sandwich_violations == 0
            && self.resolvent_max_rel <= RESOLVENT_TOL
            && self.power_violations == 0
            && self.minmax_violations == 0
    }

    /// `(identity, worst value, threshold, passed)` rows.
    pub fn rows(&self) -> Vec<IdentityRecord> {
        let r = |name: &'static str, value: f64, threshold: f64, ok: bool| IdentityRecord {
            identity: name,
            value,
            threshold,
            passed: ok,
        };
        vec![
            r("dissipativity", self.dissipativity_max_rel, DISSIPATIVITY_TOL, self.dissipativity_max_rel <= DISSIPATIVITY_TOL),
            r("form_matrix", self.form_max_rel, FORM_TOL, self.form_max_rel <= FORM_TOL),
            r("norm_sandwich", self.sandwich_violations as f64, 0.0, self.sandwich_violations == 0),
            r("resolvent", self.resolvent_max_rel, RESOLVENT_TOL, self.resolvent_max_rel <= RESOLVENT_TOL),
            r("resolvent_power", self.power_max_ratio, 1.0 + POWER_SLACK, self.power_violations == 0),
            r("minmax", self.minmax_violations as f64, 0.0, self.minmax_violations == 0),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRecord {
    pub identity: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CsvRecord for IdentityRecord {
    fn header() -> &'static str {
        "identity,value,threshold,passed"
    }

    fn row(&self) -> String {
        format!("{},{:.6e},{:.6e},{}", self.identity, self.value, self.threshold, self.passed)
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_params(rng: &mut ChaCha8Rng) -> Result<EnergyParams> {
    let gamma: f64 = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..3.0) };
    let dmax = (gamma / 2.0).min(if gamma > 0.0 { (1.0 - 1e-6) / gamma } else { 0.0 });
    let delta = if dmax > 0.0 { rng.random_range(0.0..dmax) } else { 0.0 };
    EnergyParams::new(gamma, delta)
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

#[derive(Default)]
struct Draw {
    diss: f64,
    form: f64,
    sandwich: usize,
    resolvent: f64,
    power: Vec<f64>,
}

/// Runs `opts.draws` independent draws of `(beta, gamma, delta, mu, U)`;
/// the first `opts.power_draws` also check `j = 1, 2, 3` resolvent powers.
pub fn run_identity_suite(
    grid: &Grid,
    potential: &PotentialField,
    mask: &OmegaMask,
    opts: &SuiteOptions,
) -> Result<IdentityReport> {
    let n = grid.len();
    let draws: Vec<Result<Draw>> = (0..opts.draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
            let beta = log_uniform(&mut rng, opts.beta_range);
            let op = assemble_a_beta(grid, potential, beta)?;
            let params = random_params(&mut rng)?;
            let space = SpaceTag::Beta(beta);
            let state = WaveState::new(normals(&mut rng, n), normals(&mut rng, n), space)?;
            let mut d = Draw::default();

            let nd = norm_x1_delta(&op, &params, &state)?.powi(2);
            d.diss = check_dissipation(&op, &params, &state)? / nd;

            let u = &state.u;
            let f = op.form_inner(u, u)?;
            let m = op.weighted_bilinear(u, u)?;
            d.form = (f - m).abs() / m.abs();

            let h1 = norm_h1(u, grid)?;
            let nb = op.form_norm(u)?;
            if h1 > nb * (1.0 + SANDWICH_SLACK) || nb > (1.0 + beta).sqrt() * h1 * (1.0 + SANDWICH_SLACK) {
                d.sandwich = 1;
            }

            let mu = -params.delta() + 10f64.powf(rng.random_range(-1.0..1.5));
            let (w, _) = resolve_b(&op, &params, mu, &state, opts.cg_tol)?;
            d.resolvent = resolvent_residual(&op, &params, mu, &w, &state)? / norm_x1(&op, &state)?;

            if i < opts.power_draws {
                let base = norm_x1_delta(&op, &params, &state)?;
                for j in 1..=3 {
                    let x = resolvent_power(&op, &params, mu, &state, j, opts.cg_tol)?;
                    let lhs = norm_x1_delta(&op, &params, &x)?;
                    d.power.push(lhs * (mu + params.delta()).powi(j as i32) / base);
                }
            }
            Ok(d)
        })
        .collect();

    let mut report = IdentityReport {
        draws: opts.draws,
        dissipativity_max_rel: 0.0,
        form_max_rel: 0.0,
        sandwich_violations: 0,
        resolvent_max_rel: 0.0,
        power_checks: 0,
        power_max_ratio: 0.0,
        power_violations: 0,
        minmax_checks: 0,
        minmax_violations: 0,
    };
    for d in draws {
        let d = d?;
        report.dissipativity_max_rel = report.dissipativity_max_rel.max(d.diss);
        report.form_max_rel = report.form_max_rel.max(d.form);
        report.sandwich_violations += d.sandwich;
        report.resolvent_max_rel = report.resolvent_max_rel.max(d.resolvent);
        for r in d.power {
            report.power_checks += 1;
            report.power_max_ratio = report.power_max_ratio.max(r);
            if r > 1.0 + POWER_SLACK {
                report.power_violations += 1;
            }
        }
    }

    if opts.minmax_trials > 0 {
        let eig = EigenOptions {
            seed: opts.seed,
            ..EigenOptions::default()
        };
        let ops = [
            assemble_a_beta(grid, potential, opts.beta_range.0)?,
            assemble_a_beta(grid, potential, opts.beta_range.1)?,
            assemble_a_omega(grid, mask)?,
        ];
        for (i, op) in ops.iter().enumerate() {
            let pairs = lowest_eigenpairs(op, 3, &eig)?;
            let mm = minmax_check(op, &pairs, opts.minmax_trials, 1e-8, opts.seed ^ (i as u64 + 1))?;
            report.minmax_checks += mm.checks;
            report.minmax_violations += mm.violations.len();
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
    use std::f64::consts::PI;

    #[test]
    fn small_suite_passes() {
        let g = build_grid(2, PI, 15).unwrap();
        let well = WellSpec {
            omega: OmegaSpec::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            width: 0.5,
            profile: Profile::Smoothstep,
        };
        let (v, m) = build_well_potential(&g, &well).unwrap();
        let opts = SuiteOptions {
            draws: 40,
            power_draws: 10,
            minmax_trials: 6,
            ..SuiteOptions::default()
        };
        let r = run_identity_suite(&g, &v, &m, &opts).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.power_checks, 30);
    }
}
