//! Lowest eigenpairs, min-max checks, spectral projections and the spectral
//! sweep in `beta`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::domain::{Grid, OmegaMask, PotentialField};
use crate::error::{check_len, Error, Result};
use crate::operators::{assemble_a_beta, assemble_a_omega, dot, DiscreteOperator, SpaceTag};
use crate::solver::{cg_solve, check_schedule};
use crate::study::CsvRecord;

/// Eigenvalue, eigenvector normalised in the discrete `L^2` norm, and the
/// residual `||A phi - lambda phi||_{L^2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    /// 1-based position in the ascending spectrum.
    pub index: usize,
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Absolute residual tolerance.
    pub tol: f64,
    /// Relative tolerance of the inner solves.
    pub cg_tol: f64,
    pub max_iter: usize,
    /// Seed of the random starting block.
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            cg_tol: 1e-10,
            max_iter: 2000,
            seed: 0,
        }
    }
}

fn col(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

fn col_mut(m: &mut DMatrix<f64>, j: usize) -> &mut [f64] {
    let n = m.nrows();
    &mut m.as_mut_slice()[j * n..(j + 1) * n]
}

fn orthonormalize(x: DMatrix<f64>) -> DMatrix<f64> {
    x.qr().q()
}

fn apply_block(op: &DiscreteOperator, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut ax = DMatrix::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let (src, dst) = (col(x, j).to_vec(), col_mut(&mut ax, j));
        op.apply_shifted_into(0.0, &src, dst);
    }
    ax
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Lowest `count` eigenpairs by block inverse subspace iteration with
/// Rayleigh-Ritz extraction.
pub fn lowest_eigenpairs(
    op: &DiscreteOperator,
    count: usize,
    opts: &EigenOptions,
) -> Result<Vec<EigenPair>> {
    let n = op.len();
    if count == 0 || count > n {
        return Err(Error::InvalidParams(format!(
            "cannot compute {count} eigenpairs of a {n} x {n} operator"
        )));
    }
    let p = (count + count.max(4)).min(n);
    let scale = op.grid().cell_volume().sqrt().recip();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));

    let mut converged = 0;
    let mut last: Vec<EigenPair> = Vec::new();
    for iter in 0..opts.max_iter {
        x = orthonormalize(x);
        let ax = apply_block(op, &x);
        let (theta, q) = sorted_eigen(x.transpose() * &ax);
        let y = &x * &q;
        let ay = &ax * &q;

        let residuals: Vec<f64> = (0..count)
            .map(|j| {
                col(&ay, j)
                    .iter()
                    .zip(col(&y, j))
                    .map(|(a, b)| (a - theta[j] * b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        converged = residuals.iter().take_while(|&&r| r <= opts.tol).count();
        last = (0..converged)
            .map(|j| {
                let mut v: Vec<f64> = col(&y, j).iter().map(|c| c * scale).collect();
                fix_sign(&mut v);
                EigenPair {
                    index: j + 1,
                    value: theta[j],
                    vector: v,
                    residual: residuals[j],
                }
            })
            .collect();
        if converged == count {
            return Ok(last);
        }
        if iter + 1 == opts.max_iter {
            break;
        }
        let mut next = DMatrix::zeros(n, p);
        for j in 0..p {
            let (s, _) = cg_solve(op, 0.0, col(&y, j), opts.cg_tol)?;
            col_mut(&mut next, j).copy_from_slice(&s);
        }
        x = next;
    }
    Err(Error::EigenNotConverged {
        requested: count,
        converged,
        iterations: opts.max_iter,
        partial: last,
    })
}

pub fn rayleigh_quotient(op: &DiscreteOperator, u: &[f64]) -> Result<f64> {
    check_len(op.len(), u.len())?;
    let uu = dot(u, u);
    if uu == 0.0 {
        return Err(Error::InvalidParams("Rayleigh quotient of the zero field".into()));
    }
    Ok(op.matrix().bilinear(u, u) / uu)
}

/// Largest Rayleigh quotient over the span of the columns of `u`.
fn max_rayleigh_on_span(op: &DiscreteOperator, u: DMatrix<f64>) -> f64 {
    let q = orthonormalize(u);
    let aq = apply_block(op, &q);
    let (theta, _) = sorted_eigen(q.transpose() * aq);
    *theta.last().unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinmaxKind {
    /// Max Rayleigh quotient over a `k`-dimensional subspace.
    Subspace,
    /// Rayleigh quotient of a field orthogonal to the first `k - 1` eigenvectors.
    Orthogonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinmaxViolation {
    pub k: usize,
    pub kind: MinmaxKind,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinmaxReport {
    pub checks: usize,
    /// Smallest observed `value - lambda_k` over all checks.
    pub min_margin: f64,
    pub violations: Vec<MinmaxViolation>,
}

/// Samples both sides of the min-max characterisation: random subspaces
/// (half of them small perturbations of the optimal span) and random fields
/// orthogonal to the lower eigenvectors.
pub fn minmax_check(
    op: &DiscreteOperator,
    pairs: &[EigenPair],
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<MinmaxReport> {
    let n = op.len();
    for p in pairs {
        check_len(n, p.vector.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = MinmaxReport {
        checks: 0,
        min_margin: f64::INFINITY,
        violations: Vec::new(),
    };
    let record = |k: usize, kind, value: f64, lambda: f64, report: &mut MinmaxReport| {
        report.checks += 1;
        report.min_margin = report.min_margin.min(value - lambda);
        if value < lambda - tol {
            report.violations.push(MinmaxViolation {
                k,
                kind,
                value,
                bound: lambda,
            });
        }
    };
    for k in 1..=pairs.len() {
        let lambda = pairs[k - 1].value;
        for t in 0..trials {
            let eps = if t % 2 == 0 { 0.0 } else { 10f64.powi(-((t / 2 % 6) as i32)) };
            let mut u = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            if eps > 0.0 {
                for j in 0..k {
                    let c = col_mut(&mut u, j);
                    for (ci, pi) in c.iter_mut().zip(&pairs[j].vector) {
                        *ci = pi + eps * *ci;
                    }
                }
            }
            let value = max_rayleigh_on_span(op, u);
            record(k, MinmaxKind::Subspace, value, lambda, &mut report);

            let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            if eps > 0.0 {
                for (vi, pi) in v.iter_mut().zip(&pairs[k - 1].vector) {
                    *vi = pi + eps * *vi;
                }
            }
            for _ in 0..2 {
                for p in &pairs[..k - 1] {
                    let c = dot(&v, &p.vector) / dot(&p.vector, &p.vector);
                    v.iter_mut().zip(&p.vector).for_each(|(a, b)| *a -= c * b);
                }
            }
            let value = rayleigh_quotient(op, &v)?;
            record(k, MinmaxKind::Orthogonal, value, lambda, &mut report);
        }
    }
    Ok(report)
}

/// Orthogonal projection onto the span of the first `k` eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProjection {
    basis: Vec<Vec<f64>>,
    weight: f64,
    source: Option<SpaceTag>,
}

impl SpectralProjection {
    pub fn new(op: &DiscreteOperator, pairs: &[EigenPair], k: usize) -> Result<Self> {
        if k > pairs.len() {
            return Err(Error::InvalidParams(format!(
                "projection rank {k} exceeds the {} available eigenpairs",
                pairs.len()
            )));
        }
        for p in &pairs[..k] {
            check_len(op.len(), p.vector.len())?;
        }
        Ok(Self {
            basis: pairs[..k].iter().map(|p| p.vector.clone()).collect(),
            weight: op.grid().cell_volume(),
            source: op.space(),
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn source(&self) -> Option<SpaceTag> {
        self.source
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// The same projection acting on zero-extended full-grid fields.
    pub fn zero_extended(&self, mask: &OmegaMask) -> Result<Self> {
        Ok(Self {
            basis: self
                .basis
                .iter()
                .map(|b| mask.zero_extend(b))
                .collect::<Result<_>>()?,
            weight: self.weight,
            source: self.source,
        })
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let n = self.basis.first().map_or(u.len(), Vec::len);
        check_len(n, u.len())?;
        let mut out = vec![0.0; n];
        for b in &self.basis {
            let c = self.weight * dot(u, b);
            out.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
        }
        Ok(out)
    }
}

pub fn spectral_projection_apply(proj: &SpectralProjection, u: &[f64]) -> Result<Vec<f64>> {
    proj.apply(u)
}

/// One row of the spectral sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRecord {
    pub beta: f64,
    pub k: usize,
    pub lambda_beta: f64,
    pub lambda_omega: f64,
    pub gap: f64,
    pub confinement_mass: f64,
    pub eigfun_dist: f64,
    pub residual: f64,
    /// Whether `beta > lambda_k` on the well.
    pub guarded: bool,
}

impl CsvRecord for SpectralRecord {
    fn header() -> &'static str {
        "beta,k,lambda_beta_k,lambda_omega_k,gap,confinement_mass,eigfun_dist,residual"
    }

    fn row(&self) -> String {
        format!(
            "{},{},{:.12e},{:.12e},{:.6e},{:.6e},{:.6e},{:.3e}",
            self.beta,
            self.k,
            self.lambda_beta,
            self.lambda_omega,
            self.gap,
            self.confinement_mass,
            self.eigfun_dist,
            self.residual
        )
    }
}

#[derive(Debug, Clone)]
pub struct SpectralStudy {
    pub records: Vec<SpectralRecord>,
    pub omega_pairs: Vec<EigenPair>,
    /// `(beta, ||P_beta u - P_Omega u||_{L^2})`, empty when skipped.
    pub projection: Vec<(f64, f64)>,
    pub projection_skipped: bool,
    /// Largest `|m - (lambda - ||phi||_{H^1}^2) / beta|` over all records.
    pub confinement_identity_error: f64,
}

/// Groups consecutive indices whose values differ by at most `tol`.
pub(crate) fn clusters(values: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] > tol {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Rotates `moving` within each cluster to best match `target` in the
/// weighted `L^2` sense; singleton clusters reduce to a sign flip.
pub fn align_vectors(
    moving: &[Vec<f64>],
    target: &[Vec<f64>],
    groups: &[std::ops::Range<usize>],
) -> Vec<Vec<f64>> {
    let mut out = moving.to_vec();
    for g in groups {
        let m = g.len();
        let c = DMatrix::from_fn(m, m, |i, j| dot(&moving[g.start + i], &target[g.start + j]));
        let svd = c.svd(true, true);
        let r = svd.u.unwrap() * svd.v_t.unwrap();
        for j in 0..m {
            let v = &mut out[g.start + j];
            v.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..m {
                let w = r[(i, j)];
                v.iter_mut()
                    .zip(&moving[g.start + i])
                    .for_each(|(a, b)| *a += w * b);
            }
        }
    }
    out
}

/// Sweep of the lowest `kbar` eigenpairs of `A_beta` against `A_Omega`.
///
/// `probe` is a well field used for the projection comparison; when `None`
/// the constant field 1 on the well is used.
pub fn spectral_convergence_study(
    grid: &Grid,
    potential: &PotentialField,
    mask: &OmegaMask,
    betas: &[f64],
    kbar: usize,
    opts: &EigenOptions,
    probe: Option<&[f64]>,
) -> Result<SpectralStudy> {
    check_schedule(betas)?;
    let a_omega = assemble_a_omega(grid, mask)?;
    let omega_pairs = lowest_eigenpairs(&a_omega, kbar + 1, opts)?;
    let lambda_kbar = omega_pairs[kbar - 1].value;
    let top = *betas.last().unwrap();
    if !(top > lambda_kbar) {
        return Err(Error::GuardViolation(format!(
            "largest beta {top} does not exceed lambda_{kbar} = {lambda_kbar}"
        )));
    }
    let omega_ext: Vec<Vec<f64>> = omega_pairs[..kbar]
        .iter()
        .map(|p| mask.zero_extend(&p.vector))
        .collect::<Result<_>>()?;
    let groups = clusters(
        &omega_pairs[..kbar].iter().map(|p| p.value).collect::<Vec<_>>(),
        10.0 * opts.tol,
    );
    let gap_ok = omega_pairs[kbar].value - lambda_kbar > 10.0 * opts.tol;
    let probe_field = match probe {
        Some(p) => {
            check_len(mask.len(), p.len())?;
            p.to_vec()
        }
        None => vec![1.0; mask.len()],
    };
    let p_omega = SpectralProjection::new(&a_omega, &omega_pairs, kbar)?.zero_extended(mask)?;
    let probe_ext = mask.zero_extend(&probe_field)?;
    let p_omega_u = p_omega.apply(&probe_ext)?;

    type PerBeta = (Vec<SpectralRecord>, f64, f64);
    let per_beta: Vec<Result<PerBeta>> = betas
        .par_iter()
        .map(|&beta| {
            let a = assemble_a_beta(grid, potential, beta)?;
            let pairs = lowest_eigenpairs(&a, kbar, opts).map_err(|e| {
                Error::StudyFailed(format!("eigensolve failed at beta = {beta}: {e}"))
            })?;
            let vecs: Vec<Vec<f64>> = pairs.iter().map(|p| p.vector.clone()).collect();
            let aligned = align_vectors(&vecs, &omega_ext, &groups);
            let mut records = Vec::with_capacity(kbar);
            let mut id_err: f64 = 0.0;
            for (j, pair) in pairs.iter().enumerate() {
                let phi = &pair.vector;
                let mass = grid.cell_volume()
                    * potential
                        .values()
                        .iter()
                        .zip(phi)
                        .map(|(v, x)| v * x * x)
                        .sum::<f64>();
                let h1sq = crate::operators::inner_h1(phi, phi, grid)?;
                id_err = id_err.max((mass - (pair.value - h1sq) / beta).abs());
                let diff: Vec<f64> = aligned[j].iter().zip(&omega_ext[j]).map(|(a, b)| a - b).collect();
                let lo = omega_pairs[j].value;
                records.push(SpectralRecord {
                    beta,
                    k: j + 1,
                    lambda_beta: pair.value,
                    lambda_omega: lo,
                    gap: lo - pair.value,
                    confinement_mass: mass,
                    eigfun_dist: a.form_norm(&diff)?,
                    residual: pair.residual,
                    guarded: beta > lo,
                });
            }
            let pb = SpectralProjection::new(&a, &pairs, kbar)?;
            let pbu = pb.apply(&probe_ext)?;
            let d: Vec<f64> = pbu.iter().zip(&p_omega_u).map(|(a, b)| a - b).collect();
            let proj = crate::operators::norm_l2(&d, grid)?;
            Ok((records, proj, id_err))
        })
        .collect();

    let mut records = Vec::new();
    let mut projection = Vec::new();
    let mut confinement_identity_error: f64 = 0.0;
    for (&beta, res) in betas.iter().zip(per_beta) {
        let (r, proj, id) = res?;
        records.extend(r);
        if gap_ok {
            projection.push((beta, proj));
        }
        confinement_identity_error = confinement_identity_error.max(id);
    }
    Ok(SpectralStudy {
        records,
        omega_pairs,
        projection,
        projection_skipped: !gap_ok,
        confinement_identity_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
    use std::f64::consts::PI;

    #[test]
    fn discrete_dirichlet_values() {
        // whole box is (-pi/2, pi/2), length pi
        let n = 99;
        let g = build_grid(1, PI / 2.0, n).unwrap();
        let well = WellSpec {
            omega: OmegaSpec::interval(-0.5, 0.5),
            width: 0.1,
            profile: Profile::Ramp,
        };
        let (v, _) = build_well_potential(&g, &well).unwrap();
        let a = assemble_a_beta(&g, &v, 0.0).unwrap();
        let pairs = lowest_eigenpairs(&a, 4, &EigenOptions::default()).unwrap();
        let h = g.spacing();
        for p in &pairs {
            let k = p.index as f64;
            let exact = 1.0 + 4.0 / (h * h) * (k * h / 2.0).sin().powi(2);
            assert!((p.value - exact).abs() < 1e-8, "{} vs {exact}", p.value);
            let norm = crate::operators::norm_l2(&p.vector, &g).unwrap();
            assert!((norm - 1.0).abs() < 1e-12);
            assert!(p.residual <= 1e-8);
        }
        for i in 0..4 {
            for j in 0..i {
                let ip = crate::operators::inner_l2(&pairs[i].vector, &pairs[j].vector, &g).unwrap();
                assert!(ip.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn minmax_attainment_and_random_subspaces() {
        let g = build_grid(1, PI, 63).unwrap();
        let well = WellSpec {
            omega: OmegaSpec::interval(-PI / 2.0, PI / 2.0),
            width: PI / 4.0,
            profile: Profile::Ramp,
        };
        let (_, m) = build_well_potential(&g, &well).unwrap();
        let a = assemble_a_omega(&g, &m).unwrap();
        let pairs = lowest_eigenpairs(&a, 3, &EigenOptions::default()).unwrap();
        for p in &pairs {
            assert!((rayleigh_quotient(&a, &p.vector).unwrap() - p.value).abs() < 1e-9);
        }
        let span = DMatrix::from_fn(a.len(), 3, |i, j| pairs[j].vector[i]);
        assert!((max_rayleigh_on_span(&a, span) - pairs[2].value).abs() < 1e-9);
        let rep = minmax_check(&a, &pairs, 100, 1e-8, 7).unwrap();
        assert!(rep.violations.is_empty());
        assert_eq!(rep.checks, 600);
    }

    #[test]
    fn projection_properties() {
        let g = build_grid(1, PI, 63).unwrap();
        let well = WellSpec {
            omega: OmegaSpec::interval(-PI / 2.0, PI / 2.0),
            width: PI / 4.0,
            profile: Profile::Ramp,
        };
        let (v, _) = build_well_potential(&g, &well).unwrap();
        let a = assemble_a_beta(&g, &v, 30.0).unwrap();
        let pairs = lowest_eigenpairs(&a, 4, &EigenOptions::default()).unwrap();
        let p = SpectralProjection::new(&a, &pairs, 3).unwrap();
        let img = p.apply(&pairs[0].vector).unwrap();
        for (x, y) in img.iter().zip(&pairs[0].vector) {
            assert!((x - y).abs() < 1e-10);
        }
        let img = p.apply(&pairs[3].vector).unwrap();
        assert!(img.iter().all(|x| x.abs() < 1e-10));
        let u = g.sample(|x| x[0].sin() + x[0] * x[0]);
        let pu = p.apply(&u).unwrap();
        let ppu = p.apply(&pu).unwrap();
        for (x, y) in pu.iter().zip(&ppu) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn cluster_grouping() {
        let c = clusters(&[1.0, 1.0 + 1e-9, 2.0, 3.0, 3.0], 1e-7);
        assert_eq!(c, vec![0..2, 2..3, 3..5]);
    }

    #[test]
    fn alignment_flips_signs() {
        let t = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = vec![vec![-1.0, 0.0], vec![0.0, 1.0]];
        let a = align_vectors(&m, &t, &[0..1, 1..2]);
        assert_eq!(a, t);
        let rot = vec![vec![0.0, 1.0], vec![-1.0, 0.0]];
        #[allow(clippy::single_range_in_vec_init)]
        let a = align_vectors(&rot, &t, &[0..2]);
        for (x, y) in a.iter().flatten().zip(t.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
