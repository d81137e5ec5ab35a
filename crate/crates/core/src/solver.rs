//! Preconditioned conjugate gradients, the block resolvent of the damped wave
//! generator, and the elliptic resolvent sweep.

use rayon::prelude::*;

use crate::domain::{Grid, OmegaMask, PotentialField};
use crate::error::{check_len, Error, Result};
use crate::evolution::apply_b;
use crate::operators::{
    assemble_a_beta, assemble_a_omega, dot, norm_x1, DiscreteOperator, EnergyParams, WaveState,
};
use crate::sparse::CsrMatrix;
use crate::study::CsvRecord;

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual `||(A + lambda) u - f|| / ||f||` of the returned solution.
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    /// Defaults to `20 * len` when `None`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

/// Solves `(A + shift I) u = rhs` from a zero initial guess.
pub fn cg_solve(
    op: &DiscreteOperator,
    shift: f64,
    rhs: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, SolveReport)> {
    cg_solve_with(op, shift, rhs, &CgOptions { tol, max_iter: None })
}

pub fn cg_solve_with(
    op: &DiscreteOperator,
    shift: f64,
    rhs: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    if !(shift > -1.0) {
        return Err(Error::InvalidParams(format!("shift must exceed -1, got {shift}")));
    }
    cg_csr(op.matrix(), shift, rhs, opts)
}

/// Jacobi-preconditioned CG on a symmetric positive definite CSR matrix.
pub fn cg_csr(
    a: &CsrMatrix,
    shift: f64,
    rhs: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.dim();
    check_len(n, rhs.len())?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let max_iter = opts.max_iter.unwrap_or(20 * n.max(1));
    let mut x = vec![0.0; n];
    let bnorm = dot(rhs, rhs).sqrt();
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                tolerance: opts.tol,
            },
        ));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / (d + shift)).collect();
    let target = opts.tol * bnorm;

    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut it = 0;
    loop {
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= target || it >= max_iter {
            // confirm with the true residual
            a.mul_shifted_into(shift, &x, &mut q);
            for (qi, bi) in q.iter_mut().zip(rhs) {
                *qi = bi - *qi;
            }
            let true_norm = dot(&q, &q).sqrt();
            if true_norm <= target {
                return Ok((
                    x,
                    SolveReport {
                        iterations: it,
                        residual: true_norm / bnorm,
                        tolerance: opts.tol,
                    },
                ));
            }
            if it >= max_iter {
                return Err(Error::SolverNotConverged {
                    iterations: it,
                    residual: true_norm / bnorm,
                });
            }
            // restart from the true residual
            r.copy_from_slice(&q);
            for ((zi, ri), di) in z.iter_mut().zip(&r).zip(&inv_diag) {
                *zi = ri * di;
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        a.mul_shifted_into(shift, &p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::InvalidParams(
                "shifted operator is not positive definite".into(),
            ));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
    }
}

/// `(B - mu I)^{-1} (h, k)` for `B (u, v) = (v, -A u - gamma v)`.
///
/// With `sigma = mu (gamma + mu)` the first component is
/// `u = -(A + sigma I)^{-1} (k + (gamma + mu) h)` and the second is `h + mu u`.
pub fn resolve_b(
    op: &DiscreteOperator,
    params: &EnergyParams,
    mu: f64,
    state: &WaveState,
    tol: f64,
) -> Result<(WaveState, SolveReport)> {
    // mu = 0 is admitted even when delta = 0, since B itself is invertible
    if !(mu > -params.delta() || mu == 0.0) {
        return Err(Error::InvalidParams(format!(
            "resolvent parameter {mu} must exceed -delta = {}",
            -params.delta()
        )));
    }
    let space = op
        .space()
        .ok_or_else(|| Error::SpaceMismatch("operator does not define a phase space".into()))?;
    crate::operators::check_space(space, state.space)?;
    check_len(op.len(), state.len())?;
    let g = params.gamma();
    let sigma = mu * (g + mu);
    let rhs: Vec<f64> = state
        .v
        .iter()
        .zip(&state.u)
        .map(|(k, h)| k + (g + mu) * h)
        .collect();
    let (w, report) = cg_solve(op, sigma, &rhs, tol)?;
    let u: Vec<f64> = w.iter().map(|x| -x).collect();
    let v: Vec<f64> = state.u.iter().zip(&u).map(|(h, x)| h + mu * x).collect();
    Ok((
        WaveState {
            u,
            v,
            space: state.space,
        },
        report,
    ))
}

/// `||(B - mu I) W - U||_{X^1}` for `W = resolve_b(U)`.
pub fn resolvent_residual(
    op: &DiscreteOperator,
    params: &EnergyParams,
    mu: f64,
    w: &WaveState,
    target: &WaveState,
) -> Result<f64> {
    let bw = apply_b(op, params.gamma(), w)?;
    let lhs = bw.lincomb(1.0, w, -mu)?;
    norm_x1(op, &lhs.lincomb(1.0, target, -1.0)?)
}

/// `(mu I - B)^{-j} U`.
pub fn resolvent_power(
    op: &DiscreteOperator,
    params: &EnergyParams,
    mu: f64,
    state: &WaveState,
    j: usize,
    tol: f64,
) -> Result<WaveState> {
    let mut x = state.clone();
    for _ in 0..j {
        x = resolve_b(op, params, mu, &x, tol)?.0.scaled(-1.0);
    }
    Ok(x)
}

/// One row of the elliptic resolvent sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventRecord {
    pub beta: f64,
    pub quantity: &'static str,
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl CsvRecord for ResolventRecord {
    fn header() -> &'static str {
        "beta,quantity,value,iterations,residual"
    }

    fn row(&self) -> String {
        format!(
            "{},{},{:.12e},{},{:.3e}",
            self.beta, self.quantity, self.value, self.iterations, self.residual
        )
    }
}

#[derive(Debug, Clone)]
pub struct ResolventStudy {
    pub records: Vec<ResolventRecord>,
    /// `(beta_n, e_n)` with `e_n = ||u_n - u_Omega||_{1, beta_n}`.
    pub errors: Vec<(f64, f64)>,
    pub strictly_decreasing: bool,
    /// `e_n beta_n`, an empirical first-order rate indicator.
    pub rate_products: Vec<f64>,
    pub omega_report: SolveReport,
}

/// Compares `(A_beta + lambda)^{-1} f_n` with the zero-extended
/// `(A_Omega + lambda)^{-1} f` along a schedule of `beta`.
///
/// `f_omega` lives on the well nodes; `perturbation`, if given, is a
/// full-grid field added to the right side with weight `1 / beta`.
#[allow(clippy::too_many_arguments)]
pub fn resolvent_convergence_study(
    grid: &Grid,
    potential: &PotentialField,
    mask: &OmegaMask,
    betas: &[f64],
    lambda: f64,
    f_omega: &[f64],
    perturbation: Option<&[f64]>,
    tol: f64,
) -> Result<ResolventStudy> {
    check_schedule(betas)?;
    if !(lambda > -1.0) {
        return Err(Error::InvalidParams(format!("lambda must exceed -1, got {lambda}")));
    }
    if let Some(p) = perturbation {
        check_len(grid.len(), p.len())?;
    }
    let a_omega = assemble_a_omega(grid, mask)?;
    let (u_omega, omega_report) = cg_solve(&a_omega, lambda, f_omega, tol)?;
    let u_ext = mask.zero_extend(&u_omega)?;
    let f_ext = mask.zero_extend(f_omega)?;

    let per_beta: Vec<Result<(f64, SolveReport)>> = betas
        .par_iter()
        .map(|&beta| {
            let a = assemble_a_beta(grid, potential, beta)?;
            let rhs: Vec<f64> = match perturbation {
                Some(p) => f_ext.iter().zip(p).map(|(f, q)| f + q / beta).collect(),
                None => f_ext.clone(),
            };
            let (u, rep) = cg_solve(&a, lambda, &rhs, tol)?;
            let diff: Vec<f64> = u.iter().zip(&u_ext).map(|(a, b)| a - b).collect();
            Ok((a.form_norm(&diff)?, rep))
        })
        .collect();

    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut rate_products = Vec::new();
    for (&beta, res) in betas.iter().zip(per_beta) {
        let (e, rep) = res?;
        errors.push((beta, e));
        rate_products.push(e * beta);
        records.push(ResolventRecord {
            beta,
            quantity: "error_h1beta",
            value: e,
            iterations: rep.iterations,
            residual: rep.residual,
        });
        records.push(ResolventRecord {
            beta,
            quantity: "error_times_beta",
            value: e * beta,
            iterations: rep.iterations,
            residual: rep.residual,
        });
    }
    let strictly_decreasing = errors.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(ResolventStudy {
        records,
        errors,
        strictly_decreasing,
        rate_products,
        omega_report,
    })
}

pub(crate) fn check_schedule(betas: &[f64]) -> Result<()> {
    if betas.is_empty() {
        return Err(Error::InvalidParams("empty beta schedule".into()));
    }
    if betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(Error::InvalidParams("beta schedule entries must be positive".into()));
    }
    if betas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParams("beta schedule must be strictly increasing".into()));
    }
    Ok(())
}
