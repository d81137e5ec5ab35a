//! Discrete operators `A_beta`, `A_Omega`, the energy forms and the phase
//! space inner products.

use std::sync::Arc;

use crate::domain::{Grid, OmegaMask, PotentialField};
use crate::error::{check_len, Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    NegLaplacian,
    ABeta { beta: f64 },
    AOmega,
}

/// Which phase space a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpaceTag {
    /// Full-grid fields measured with the `beta` energy.
    Beta(f64),
    /// Fields on the well nodes only.
    Omega,
}

/// Sparse symmetric operator together with what is needed to interpret it.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    kind: OperatorKind,
    grid: Grid,
    matrix: CsrMatrix,
    weight: Vec<f64>,
    mask: Option<Arc<OmegaMask>>,
}

impl DiscreteOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn mask(&self) -> Option<&OmegaMask> {
        self.mask.as_deref()
    }

    /// Number of unknowns.
    pub fn len(&self) -> usize {
        self.matrix.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.dim() == 0
    }

    pub fn beta(&self) -> Option<f64> {
        match self.kind {
            OperatorKind::ABeta { beta } => Some(beta),
            _ => None,
        }
    }

    /// Phase space whose displacement energy this operator defines.
    pub fn space(&self) -> Option<SpaceTag> {
        match self.kind {
            OperatorKind::ABeta { beta } => Some(SpaceTag::Beta(beta)),
            OperatorKind::AOmega => Some(SpaceTag::Omega),
            OperatorKind::NegLaplacian => None,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matrix.mul_vec(x)
    }

    pub fn apply_shifted_into(&self, shift: f64, x: &[f64], y: &mut [f64]) {
        self.matrix.mul_shifted_into(shift, x, y)
    }

    /// `h^dim x^T A y`.
    pub fn weighted_bilinear(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len(self.len(), x.len())?;
        check_len(self.len(), y.len())?;
        Ok(self.grid.cell_volume() * self.matrix.bilinear(x, y))
    }

    /// Energy form evaluated by quadrature of forward differences and the
    /// zero-order weight, independent of the assembled matrix.
    pub fn form_inner(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len(self.len(), x.len())?;
        check_len(self.len(), y.len())?;
        match &self.mask {
            Some(mask) => {
                let xe = mask.zero_extend(x)?;
                let ye = mask.zero_extend(y)?;
                Ok(form_quadrature(&self.grid, &self.weight, &xe, &ye))
            }
            None => Ok(form_quadrature(&self.grid, &self.weight, x, y)),
        }
    }

    pub fn form_norm(&self, x: &[f64]) -> Result<f64> {
        Ok(self.form_inner(x, x)?.max(0.0).sqrt())
    }

    /// Discrete `L^2` product on this operator's unknowns.
    pub fn l2_inner(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len(self.len(), x.len())?;
        check_len(self.len(), y.len())?;
        Ok(self.grid.cell_volume() * dot(x, y))
    }

    pub fn write_matrix_market<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        self.matrix.write_matrix_market(out)
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn form_quadrature(grid: &Grid, weight: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let n = grid.points_per_axis();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut grad = 0.0;
    let mut mass = 0.0;
    for i in 0..grid.len() {
        let multi = grid.multi_index(i);
        for axis in 0..grid.dim() {
            if multi[axis] == 0 {
                grad += x[i] * y[i];
            }
            let (xn, yn) = if multi[axis] + 1 < n {
                let j = i + grid.stride(axis);
                (x[j], y[j])
            } else {
                (0.0, 0.0)
            };
            grad += (xn - x[i]) * (yn - y[i]);
        }
        mass += weight[i] * x[i] * y[i];
    }
    grid.cell_volume() * (grad * inv_h2 + mass)
}

fn laplacian_triplets(grid: &Grid) -> Vec<(usize, usize, f64)> {
    let n = grid.points_per_axis();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut t = Vec::with_capacity(grid.len() * (2 * grid.dim() + 1));
    for i in 0..grid.len() {
        let multi = grid.multi_index(i);
        t.push((i, i, 2.0 * grid.dim() as f64 * inv_h2));
        for axis in 0..grid.dim() {
            let s = grid.stride(axis);
            if multi[axis] > 0 {
                t.push((i, i - s, -inv_h2));
            }
            if multi[axis] + 1 < n {
                t.push((i, i + s, -inv_h2));
            }
        }
    }
    t
}

fn with_diagonal(grid: &Grid, diag: &[f64]) -> Result<CsrMatrix> {
    let mut t = laplacian_triplets(grid);
    t.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
    let m = CsrMatrix::from_triplets(grid.len(), &t)?;
    debug_assert!(m.is_symmetric());
    Ok(m)
}

/// Second-difference operator `-Delta_h` with zero outer boundary data.
pub fn assemble_neg_laplacian(grid: &Grid) -> DiscreteOperator {
    let matrix = CsrMatrix::from_triplets(grid.len(), &laplacian_triplets(grid))
        .expect("stencil indices lie inside the grid");
    DiscreteOperator {
        kind: OperatorKind::NegLaplacian,
        grid: grid.clone(),
        matrix,
        weight: vec![0.0; grid.len()],
        mask: None,
    }
}

/// `A_beta = -Delta_h + diag(1 + beta V)`.
pub fn assemble_a_beta(grid: &Grid, potential: &PotentialField, beta: f64) -> Result<DiscreteOperator> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidParams(format!("beta must be >= 0, got {beta}")));
    }
    check_len(grid.len(), potential.values().len())?;
    let weight = potential.v_beta(beta);
    Ok(DiscreteOperator {
        kind: OperatorKind::ABeta { beta },
        grid: grid.clone(),
        matrix: with_diagonal(grid, &weight)?,
        weight,
        mask: None,
    })
}

/// Principal submatrix of `-Delta_h + I` on the well nodes.
pub fn assemble_a_omega(grid: &Grid, mask: &OmegaMask) -> Result<DiscreteOperator> {
    check_len(grid.len(), mask.grid_len())?;
    if mask.is_empty() {
        return Err(Error::InvalidWell("empty well mask".into()));
    }
    let weight = vec![1.0; grid.len()];
    let full = with_diagonal(grid, &weight)?;
    Ok(DiscreteOperator {
        kind: OperatorKind::AOmega,
        grid: grid.clone(),
        matrix: full.principal_submatrix(mask.nodes())?,
        weight,
        mask: Some(Arc::new(mask.clone())),
    })
}

/// `<u1, u2>_{1,beta}` by quadrature.
pub fn inner_h1beta(
    u1: &[f64],
    u2: &[f64],
    grid: &Grid,
    potential: &PotentialField,
    beta: f64,
) -> Result<f64> {
    check_len(grid.len(), u1.len())?;
    check_len(grid.len(), u2.len())?;
    check_len(grid.len(), potential.values().len())?;
    Ok(form_quadrature(grid, &potential.v_beta(beta), u1, u2))
}

pub fn norm_h1beta(u: &[f64], grid: &Grid, potential: &PotentialField, beta: f64) -> Result<f64> {
    Ok(inner_h1beta(u, u, grid, potential, beta)?.max(0.0).sqrt())
}

/// Plain discrete `H^1` product.
pub fn inner_h1(u1: &[f64], u2: &[f64], grid: &Grid) -> Result<f64> {
    check_len(grid.len(), u1.len())?;
    check_len(grid.len(), u2.len())?;
    Ok(form_quadrature(grid, &vec![1.0; grid.len()], u1, u2))
}

pub fn norm_h1(u: &[f64], grid: &Grid) -> Result<f64> {
    Ok(inner_h1(u, u, grid)?.max(0.0).sqrt())
}

pub fn inner_l2(u1: &[f64], u2: &[f64], grid: &Grid) -> Result<f64> {
    check_len(grid.len(), u1.len())?;
    check_len(grid.len(), u2.len())?;
    Ok(grid.cell_volume() * dot(u1, u2))
}

pub fn norm_l2(u: &[f64], grid: &Grid) -> Result<f64> {
    Ok(inner_l2(u, u, grid)?.sqrt())
}

/// Damping `gamma` and decay shift `delta` with `2 delta <= gamma`, `gamma delta < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    gamma: f64,
    delta: f64,
}

impl EnergyParams {
    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidParams(format!("gamma must be >= 0, got {gamma}")));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidParams(format!("delta must be >= 0, got {delta}")));
        }
        if 2.0 * delta > gamma {
            return Err(Error::InvalidParams(format!(
                "need 2 delta <= gamma, got delta = {delta}, gamma = {gamma}"
            )));
        }
        if gamma * delta >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "need gamma delta < 1, got {}",
                gamma * delta
            )));
        }
        Ok(Self { gamma, delta })
    }

    /// Largest admissible shift, `min(gamma / 2, (1 - 1e-6) / gamma)`.
    pub fn with_default_delta(gamma: f64) -> Result<Self> {
        let delta = if gamma > 0.0 {
            (0.5 * gamma).min((1.0 - 1e-6) / gamma)
        } else {
            0.0
        };
        Self::new(gamma, delta)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Upper equivalence constant `(2 + delta^2)^{1/2}`.
    pub fn big_k_delta(&self) -> f64 {
        (2.0 + self.delta * self.delta).sqrt()
    }

    /// Lower equivalence constant `min(1 - gamma delta, 1/2)^{1/2}`.
    pub fn k_delta(&self) -> f64 {
        (1.0 - self.gamma * self.delta).min(0.5).sqrt()
    }

    /// Decay envelope constant; 1 when `delta = 0`.
    #[allow(non_snake_case)]
    pub fn M(&self) -> f64 {
        if self.delta == 0.0 {
            1.0
        } else {
            self.big_k_delta() / self.k_delta()
        }
    }
}

/// Displacement and velocity fields.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub space: SpaceTag,
}

impl WaveState {
    pub fn new(u: Vec<f64>, v: Vec<f64>, space: SpaceTag) -> Result<Self> {
        check_len(u.len(), v.len())?;
        Ok(Self { u, v, space })
    }

    pub fn zeros(len: usize, space: SpaceTag) -> Self {
        Self {
            u: vec![0.0; len],
            v: vec![0.0; len],
            space,
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `a self + b other`; spaces must agree.
    pub fn lincomb(&self, a: f64, other: &WaveState, b: f64) -> Result<WaveState> {
        check_space(self.space, other.space)?;
        check_len(self.len(), other.len())?;
        let f = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
        Ok(WaveState {
            u: f(&self.u, &other.u),
            v: f(&self.v, &other.v),
            space: self.space,
        })
    }

    pub fn scaled(&self, a: f64) -> WaveState {
        WaveState {
            u: self.u.iter().map(|x| a * x).collect(),
            v: self.v.iter().map(|x| a * x).collect(),
            space: self.space,
        }
    }

    /// Zero extension of a well state into the `beta` space.
    pub fn zero_extend(&self, mask: &OmegaMask, beta: f64) -> Result<WaveState> {
        if self.space != SpaceTag::Omega {
            return Err(Error::SpaceMismatch("only well states can be zero-extended".into()));
        }
        Ok(WaveState {
            u: mask.zero_extend(&self.u)?,
            v: mask.zero_extend(&self.v)?,
            space: SpaceTag::Beta(beta),
        })
    }

    /// Restriction of a full-grid state to the well nodes.
    pub fn restrict(&self, mask: &OmegaMask) -> Result<WaveState> {
        if self.space == SpaceTag::Omega {
            return Err(Error::SpaceMismatch("state already lives on the well".into()));
        }
        Ok(WaveState {
            u: mask.restrict(&self.u)?,
            v: mask.restrict(&self.v)?,
            space: SpaceTag::Omega,
        })
    }

    /// Same fields, relabelled as an element of another `beta` space.
    pub fn retagged(mut self, space: SpaceTag) -> Result<WaveState> {
        if (self.space == SpaceTag::Omega) != (space == SpaceTag::Omega) {
            return Err(Error::SpaceMismatch(
                "cannot relabel between well and full-grid states".into(),
            ));
        }
        self.space = space;
        Ok(self)
    }
}

pub(crate) fn check_space(a: SpaceTag, b: SpaceTag) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::SpaceMismatch(format!("{a:?} vs {b:?}")))
    }
}

fn check_state(op: &DiscreteOperator, s: &WaveState) -> Result<()> {
    let space = op
        .space()
        .ok_or_else(|| Error::SpaceMismatch("operator does not define a phase space".into()))?;
    check_space(space, s.space)?;
    check_len(op.len(), s.len())
}

/// `<U1, U2>_{X^1}`.
pub fn inner_x1(op: &DiscreteOperator, a: &WaveState, b: &WaveState) -> Result<f64> {
    check_state(op, a)?;
    check_state(op, b)?;
    Ok(op.form_inner(&a.u, &b.u)? + op.l2_inner(&a.v, &b.v)?)
}

/// `<U1, U2>_{X^1, delta}`.
pub fn inner_x1_delta(
    op: &DiscreteOperator,
    params: &EnergyParams,
    a: &WaveState,
    b: &WaveState,
) -> Result<f64> {
    check_state(op, a)?;
    check_state(op, b)?;
    let d = params.delta();
    let g = params.gamma();
    let form = op.form_inner(&a.u, &b.u)?;
    if d == 0.0 {
        return Ok(form + op.l2_inner(&a.v, &b.v)?);
    }
    let uu = op.l2_inner(&a.u, &b.u)?;
    let shifted = |s: &WaveState| -> Vec<f64> { s.v.iter().zip(&s.u).map(|(v, u)| v + d * u).collect() };
    Ok(form + (d * d - g * d) * uu + op.l2_inner(&shifted(a), &shifted(b))?)
}

pub fn norm_x1(op: &DiscreteOperator, s: &WaveState) -> Result<f64> {
    Ok(inner_x1(op, s, s)?.max(0.0).sqrt())
}

pub fn norm_x1_delta(op: &DiscreteOperator, params: &EnergyParams, s: &WaveState) -> Result<f64> {
    Ok(inner_x1_delta(op, params, s, s)?.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
    use std::f64::consts::PI;

    fn setup_1d(n: usize) -> (Grid, PotentialField, OmegaMask) {
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
    fn laplacian_stencil_values() {
        let g = build_grid(1, 0.5, 3).unwrap();
        let l = assemble_neg_laplacian(&g);
        assert_eq!(l.matrix().get(0, 0), 32.0);
        assert_eq!(l.matrix().get(0, 1), -16.0);
        assert_eq!(l.matrix().get(0, 2), 0.0);
        let y = l.apply(&[1.0; 3]).unwrap();
        assert_eq!(y, vec![16.0, 0.0, 16.0]);
        assert!(l.matrix().is_symmetric());
    }

    #[test]
    fn discrete_sine_is_an_eigenvector() {
        // grid on (0, pi) is the shifted box [-pi/2, pi/2]
        let n = 63;
        let g = build_grid(1, PI / 2.0, n).unwrap();
        let h = g.spacing();
        let l = assemble_neg_laplacian(&g);
        for k in 1..5 {
            let u: Vec<f64> = (0..n).map(|i| (k as f64 * (i as f64 + 1.0) * h).sin()).collect();
            let lu = l.apply(&u).unwrap();
            let lam = 4.0 / (h * h) * (k as f64 * h / 2.0).sin().powi(2);
            for (a, b) in lu.iter().zip(&u) {
                assert!((a - lam * b).abs() < 1e-12 * lam);
            }
        }
    }

    #[test]
    fn a_beta_diagonal_shift() {
        let (g, v, _) = setup_1d(63);
        let a0 = assemble_a_beta(&g, &v, 0.0).unwrap();
        let lap = assemble_neg_laplacian(&g);
        for i in 0..g.len() {
            assert_eq!(a0.matrix().get(i, i), lap.matrix().get(i, i) + 1.0);
        }
        let a1 = assemble_a_beta(&g, &v, 10.0).unwrap();
        let a2 = assemble_a_beta(&g, &v, 20.0).unwrap();
        for i in 0..g.len() {
            let d = a2.matrix().get(i, i) - a1.matrix().get(i, i);
            assert!((d - 10.0 * v.values()[i]).abs() < 1e-9);
        }
        assert!(assemble_a_beta(&g, &v, -1.0).is_err());
    }

    #[test]
    fn a_omega_is_a_principal_submatrix() {
        let (g, v, m) = setup_1d(63);
        let ao = assemble_a_omega(&g, &m).unwrap();
        let ab = assemble_a_beta(&g, &v, 1e3).unwrap();
        for (k, &i) in m.nodes().iter().enumerate() {
            for (l, &j) in m.nodes().iter().enumerate() {
                assert_eq!(ao.matrix().get(k, l), ab.matrix().get(i, j));
            }
        }
        let single = OmegaMask::from_flags((0..g.len()).map(|i| i == 10).collect());
        let a1 = assemble_a_omega(&g, &single).unwrap();
        assert_eq!(a1.len(), 1);
        let h = g.spacing();
        assert!((a1.matrix().get(0, 0) - (2.0 / (h * h) + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn form_matches_matrix() {
        let g = build_grid(2, 1.0, 9).unwrap();
        let well = WellSpec {
            omega: OmegaSpec::Ball {
                center: vec![0.0, 0.0],
                radius: 0.3,
            },
            width: 0.2,
            profile: Profile::Smoothstep,
        };
        let (v, _) = build_well_potential(&g, &well).unwrap();
        let a = assemble_a_beta(&g, &v, 7.0).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..g.len()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let q = a.weighted_bilinear(&u, &w).unwrap();
        let f = a.form_inner(&u, &w).unwrap();
        assert!((q - f).abs() <= 1e-12 * q.abs().max(1.0));
    }

    #[test]
    fn default_delta_and_constants() {
        let p = EnergyParams::with_default_delta(1.0).unwrap();
        assert_eq!(p.delta(), 0.5);
        assert_eq!(EnergyParams::with_default_delta(0.0).unwrap().M(), 1.0);
        let p = EnergyParams::with_default_delta(4.0).unwrap();
        assert!(p.delta() < 0.25 && p.delta() > 0.2499);
        assert!(EnergyParams::new(1.0, 0.6).is_err());
        assert!(EnergyParams::new(0.0, 0.1).is_err());
    }

    #[test]
    fn delta_product_reduces_at_zero_shift() {
        let (g, v, _) = setup_1d(31);
        let a = assemble_a_beta(&g, &v, 5.0).unwrap();
        let s = WaveState::new(
            g.sample(|x| x[0].cos()),
            g.sample(|x| x[0].sin()),
            SpaceTag::Beta(5.0),
        )
        .unwrap();
        let p = EnergyParams::new(0.0, 0.0).unwrap();
        assert_eq!(norm_x1(&a, &s).unwrap(), norm_x1_delta(&a, &p, &s).unwrap());
        let wrong = s.clone().retagged(SpaceTag::Beta(6.0)).unwrap();
        assert!(inner_x1(&a, &wrong, &s).is_err());
    }
}
