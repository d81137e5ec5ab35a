//! Computational box, uniform grid, well region and potential fields.
//!
//! The whole space is replaced by the box `[-L, L]^dim` with homogeneous
//! Dirichlet data on its boundary. Interior nodes sit at `-L + (i + 1) h`
//! along every axis, `h = 2L / (n + 1)`, and are numbered with axis 0
//! varying fastest.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Uniform tensor grid of interior nodes on `[-L, L]^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "box half width must be positive, got {half_width}"
            )));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 interior points per axis, got {n}"
            )));
        }
        Ok(Self {
            dim,
            half_width,
            n,
            h: 2.0 * half_width / (n as f64 + 1.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Total number of interior nodes, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^dim` of a single node.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Coordinate of the `i`-th interior point along any axis.
    pub fn axis_coordinate(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 1.0) * self.h
    }

    /// Linear-index stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    pub fn multi_index(&self, index: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rest = index;
        for slot in out.iter_mut().take(self.dim) {
            *slot = rest % self.n;
            rest /= self.n;
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .take(self.dim)
            .enumerate()
            .map(|(axis, &i)| i * self.stride(axis))
            .sum()
    }

    /// Coordinates of node `index`; unused trailing entries are zero.
    pub fn node(&self, index: usize) -> [f64; 3] {
        let multi = self.multi_index(index);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = self.axis_coordinate(multi[axis]);
        }
        x
    }

    /// Distance from node `index` to the nearest face of the outer box.
    pub fn boundary_distance(&self, index: usize) -> f64 {
        let x = self.node(index);
        x.iter()
            .take(self.dim)
            .map(|c| self.half_width - c.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Samples `f` at every node.
    pub fn sample(&self, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let x = self.node(i);
                f(&x[..self.dim])
            })
            .collect()
    }
}

pub fn build_grid(dim: usize, half_width: f64, n: usize) -> Result<Grid> {
    Grid::new(dim, half_width, n)
}

/// Shape of the well region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OmegaSpec {
    /// Axis-aligned box `prod (lower_a, upper_a)`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Open ball.
    Ball { center: Vec<f64>, radius: f64 },
}

impl OmegaSpec {
    /// The interval `(lower, upper)` in one dimension.
    pub fn interval(lower: f64, upper: f64) -> Self {
        OmegaSpec::Box {
            lower: vec![lower],
            upper: vec![upper],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OmegaSpec::Box { lower, .. } => lower.len(),
            OmegaSpec::Ball { center, .. } => center.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            OmegaSpec::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::InvalidWell(
                        "box corners have different dimensions".into(),
                    ));
                }
                if lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
                    return Err(Error::InvalidWell("box has an empty side".into()));
                }
            }
            OmegaSpec::Ball { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidWell(format!(
                        "ball radius must be positive, got {radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Euclidean distance from `x` to the closure of the region (zero inside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            OmegaSpec::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&c, (&lo, &hi))| {
                    let d = (lo - c).max(c - hi).max(0.0);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            OmegaSpec::Ball { center, radius } => {
                let r = x
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (r - radius).max(0.0)
            }
        }
    }

    /// Smallest gap between the region and the faces of `[-L, L]^dim`.
    pub fn clearance(&self, half_width: f64) -> f64 {
        match self {
            OmegaSpec::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&lo, &hi)| (lo + half_width).min(half_width - hi))
                .fold(f64::INFINITY, f64::min),
            OmegaSpec::Ball { center, radius } => center
                .iter()
                .map(|c| half_width - c.abs() - radius)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Smooth bump supported in the region, equal to 1 at its centre.
    pub fn bump(&self, x: &[f64]) -> f64 {
        match self {
            OmegaSpec::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&c, (&lo, &hi))| {
                    if c <= lo || c >= hi {
                        0.0
                    } else {
                        let s = (c - 0.5 * (lo + hi)) / (hi - lo);
                        (std::f64::consts::PI * s).cos().powi(2)
                    }
                })
                .product(),
            OmegaSpec::Ball { center, radius } => {
                let r = x
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if r >= *radius {
                    0.0
                } else {
                    (0.5 * std::f64::consts::PI * r / radius).cos().powi(2)
                }
            }
        }
    }
}

/// Transition profile mapping normalised distance `s = d / w` into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Ramp,
    Smoothstep,
}

impl Profile {
    pub fn eval(self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match self {
            Profile::Ramp => s,
            Profile::Smoothstep => s * s * (3.0 - 2.0 * s),
        }
    }
}

/// Well region, transition width and profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub omega: OmegaSpec,
    pub width: f64,
    pub profile: Profile,
}

/// Per-node membership of the closed well region.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaMask {
    inside: Vec<bool>,
    nodes: Vec<usize>,
    local: Vec<Option<usize>>,
}

impl OmegaMask {
    pub fn from_flags(inside: Vec<bool>) -> Self {
        let nodes: Vec<usize> = inside
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        let mut local = vec![None; inside.len()];
        for (k, &i) in nodes.iter().enumerate() {
            local[i] = Some(k);
        }
        Self {
            inside,
            nodes,
            local,
        }
    }

    /// Number of nodes of the full grid.
    pub fn grid_len(&self) -> usize {
        self.inside.len()
    }

    /// Number of nodes inside the well.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.inside[index]
    }

    pub fn flags(&self) -> &[bool] {
        &self.inside
    }

    /// Global indices of the well nodes, ascending.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Position of global node `index` in the well numbering.
    pub fn local_index(&self, index: usize) -> Option<usize> {
        self.local[index]
    }

    /// Extends a field on the well nodes by zero to the whole grid.
    pub fn zero_extend(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), u.len())?;
        let mut out = vec![0.0; self.grid_len()];
        for (&i, &x) in self.nodes.iter().zip(u) {
            out[i] = x;
        }
        Ok(out)
    }

    /// Restricts a full-grid field to the well nodes.
    pub fn restrict(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid_len(), u.len())?;
        Ok(self.nodes.iter().map(|&i| u[i]).collect())
    }
}

/// Nodal values of a well potential `V` with `0 <= V <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    values: Vec<f64>,
    distance: Vec<f64>,
    well: WellSpec,
}

impl PotentialField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn well(&self) -> &WellSpec {
        &self.well
    }

    /// Distance of every node to the closed well region.
    pub fn distances(&self) -> &[f64] {
        &self.distance
    }

    /// Nodal values of `V_beta = 1 + beta V`.
    pub fn v_beta(&self, beta: f64) -> Vec<f64> {
        self.values.iter().map(|v| 1.0 + beta * v).collect()
    }

    /// Checks the four pointwise conditions node by node and returns every
    /// violating node with a description.
    pub fn audit(&self, grid: &Grid) -> Vec<(usize, &'static str)> {
        let mut bad = Vec::new();
        for (i, (&v, &d)) in self.values.iter().zip(&self.distance).enumerate() {
            if !(0.0..=1.0).contains(&v) {
                bad.push((i, "value outside [0, 1]"));
            }
            if d == 0.0 && v != 0.0 {
                bad.push((i, "nonzero inside the well"));
            }
            if d > 0.0 && v <= 0.0 {
                bad.push((i, "not positive outside the well"));
            }
            if grid.boundary_distance(i) < self.well.width && v != 1.0 {
                bad.push((i, "not equal to 1 near the outer boundary"));
            }
        }
        bad
    }
}

/// Builds the potential `V` and the mask of nodes where it vanishes.
pub fn build_well_potential(grid: &Grid, well: &WellSpec) -> Result<(PotentialField, OmegaMask)> {
    well.omega.validate()?;
    if well.omega.dim() != grid.dim() {
        return Err(Error::InvalidWell(format!(
            "well has dimension {} but the grid has dimension {}",
            well.omega.dim(),
            grid.dim()
        )));
    }
    if !(well.width.is_finite() && well.width > 0.0) {
        return Err(Error::InvalidWell(format!(
            "transition width must be positive, got {}",
            well.width
        )));
    }
    // With clearance >= 2w every node within w of the box faces is at
    // distance >= w from the well, so V = 1 there.
    let needed = (well.width + 2.0 * grid.spacing()).max(2.0 * well.width);
    let clearance = well.omega.clearance(grid.half_width());
    if clearance < needed {
        return Err(Error::InvalidWell(format!(
            "well clearance {clearance} from the box boundary is below the required {needed}"
        )));
    }

    let distance = grid.sample(|x| well.omega.distance(x));
    let values: Vec<f64> = distance
        .iter()
        .map(|&d| well.profile.eval(d / well.width))
        .collect();
    let mask = OmegaMask::from_flags(distance.iter().map(|&d| d == 0.0).collect());
    if mask.is_empty() {
        return Err(Error::InvalidWell("no grid node lies inside the well".into()));
    }
    if mask.len() == grid.len() {
        return Err(Error::InvalidWell("every grid node lies inside the well".into()));
    }
    let field = PotentialField {
        values,
        distance,
        well: well.clone(),
    };
    if let Some((i, what)) = field.audit(grid).first() {
        return Err(Error::InvalidWell(format!("node {i}: potential {what}")));
    }
    Ok((field, mask))
}
