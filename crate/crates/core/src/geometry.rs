//! Finite-volume grids on intervals, rectangles, and radially symmetric balls.
//!
//! All grids are uniform and cell-centered. A grid is a list of cells with
//! centers and measures, plus a list of faces; every interior face is shared
//! by exactly two cells and carries the area and center distance needed for
//! two-point flux approximations. Boundary faces are kept separately and are
//! always zero-flux, which makes every operator built on these grids
//! conservative by construction: discrete fluxes telescope, so the discrete
//! integral of a flux divergence vanishes to rounding.
//!
//! The radial mode reduces an n-dimensional ball to one coordinate. Cell
//! measures are exact shell volumes `omega_n (r_{i+1/2}^n - r_{i-1/2}^n)` and
//! face areas are exact sphere areas `n omega_n r^{n-1}`, so the measures sum
//! to the ball volume exactly and cell averages of smooth radial functions
//! integrate with second-order accuracy. The first cell center sits at half a
//! spacing from the origin; nothing is ever evaluated at r = 0.

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};

/// Computational domain. Measures are analytic, not quadrature results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Rectangle { ax: f64, bx: f64, ay: f64, by: f64 },
    /// Ball of the given radius in `dim` space dimensions, reduced to the
    /// radial coordinate. `dim >= 2`.
    RadialBall { radius: f64, dim: u32 },
}

/// Volume of the unit ball in n dimensions, via the recurrence
/// `omega_n = 2 pi / n * omega_{n-2}` with `omega_0 = 1`, `omega_1 = 2`.
pub fn unit_ball_volume(n: u32) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * unit_ball_volume(n - 2),
    }
}

impl Domain {
    /// Analytic measure |Omega|.
    pub fn measure(&self) -> f64 {
        match *self {
            Domain::Interval { a, b } => b - a,
            Domain::Rectangle { ax, bx, ay, by } => (bx - ax) * (by - ay),
            Domain::RadialBall { radius, dim } => unit_ball_volume(dim) * radius.powi(dim as i32),
        }
    }

    /// Number of spatial axes the grid resolves (1 for intervals and balls).
    pub fn grid_axes(&self) -> usize {
        match self {
            Domain::Rectangle { .. } => 2,
            _ => 1,
        }
    }

    /// Effective space dimension of the underlying model domain.
    pub fn space_dim(&self) -> u32 {
        match *self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
            Domain::RadialBall { dim, .. } => dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KsError::InvalidDomain(msg));
        match *self {
            Domain::Interval { a, b } => {
                if !(b - a).is_finite() || b <= a {
                    return bad(format!("interval ({a}, {b}) is degenerate"));
                }
            }
            Domain::Rectangle { ax, bx, ay, by } => {
                if !(bx - ax).is_finite() || bx <= ax || !(by - ay).is_finite() || by <= ay {
                    return bad(format!("rectangle ({ax}, {bx}) x ({ay}, {by}) is degenerate"));
                }
            }
            Domain::RadialBall { radius, dim } => {
                if !radius.is_finite() || radius <= 0.0 {
                    return bad(format!("ball radius {radius} must be positive"));
                }
                if dim < 2 {
                    return bad(format!("radial reduction needs dim >= 2, got {dim}"));
                }
            }
        }
        Ok(())
    }
}

/// Orientation of a face normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Radial,
}

/// Interior face between two cells. `left`/`right` are cell indices; the
/// normal points from `left` to `right` along `axis`.
#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub left: usize,
    pub right: usize,
    pub area: f64,
    /// Distance between the two cell centers.
    pub dist: f64,
    pub midpoint: [f64; 2],
    pub axis: Axis,
}

/// Boundary face, flagged for the zero-flux condition. Kept for structural
/// checks; no operator ever moves mass through one.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryFace {
    pub cell: usize,
    pub area: f64,
    pub midpoint: [f64; 2],
    pub axis: Axis,
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub domain: Domain,
    pub resolution: Vec<usize>,
    pub cell_centers: Vec<[f64; 2]>,
    pub cell_volumes: Vec<f64>,
    pub faces: Vec<Face>,
    pub boundary_faces: Vec<BoundaryFace>,
    /// Maximum cell diameter.
    pub h: f64,
    id: u64,
}

impl Grid {
    pub fn cell_count(&self) -> usize {
        self.cell_volumes.len()
    }

    pub fn measure(&self) -> f64 {
        self.domain.measure()
    }

    /// Stable identifier derived from the domain and resolution. Two grids
    /// built from the same descriptor are interchangeable and share this id.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// True when the cells form a single chain (interval or radial grids),
    /// in which case the screened-Poisson system is tridiagonal.
    pub fn is_chain(&self) -> bool {
        !matches!(self.domain, Domain::Rectangle { .. })
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x100_0000_01b3;

fn fnv1a(bytes: &[u8], mut state: u64) -> u64 {
    for &b in bytes {
        state ^= b as u64;
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

/// FNV-1a hash of the grid descriptor; also used to stamp snapshot files.
pub fn descriptor_hash(domain: &Domain, resolution: &[usize]) -> u64 {
    let mut state = FNV_OFFSET;
    let tag: &[u8] = match domain {
        Domain::Interval { .. } => b"interval",
        Domain::Rectangle { .. } => b"rectangle",
        Domain::RadialBall { .. } => b"radial-ball",
    };
    state = fnv1a(tag, state);
    let params: Vec<f64> = match *domain {
        Domain::Interval { a, b } => vec![a, b],
        Domain::Rectangle { ax, bx, ay, by } => vec![ax, bx, ay, by],
        Domain::RadialBall { radius, dim } => vec![radius, dim as f64],
    };
    for p in params {
        state = fnv1a(&p.to_le_bytes(), state);
    }
    for &r in resolution {
        state = fnv1a(&(r as u64).to_le_bytes(), state);
    }
    state
}

/// Builds a uniform cell-centered grid.
///
/// `resolution` holds the cell count per resolved axis: one entry for
/// intervals and balls, two (nx, ny) for rectangles. Each axis needs at
/// least 4 cells.
pub fn build_grid(domain: &Domain, resolution: &[usize]) -> Result<Grid> {
    domain.validate()?;
    let axes = domain.grid_axes();
    if resolution.len() != axes {
        return Err(KsError::InvalidResolution(format!(
            "domain resolves {axes} axes but resolution has {} entries",
            resolution.len()
        )));
    }
    for &r in resolution {
        if r < 4 {
            return Err(KsError::InvalidResolution(format!(
                "need at least 4 cells per axis, got {r}"
            )));
        }
    }
    let id = descriptor_hash(domain, resolution);
    let grid = match *domain {
        Domain::Interval { a, b } => build_chain(
            *domain,
            resolution.to_vec(),
            id,
            a,
            b,
            Axis::X,
            |_| 1.0,
            |lo: f64, hi: f64| hi - lo,
        ),
        Domain::RadialBall { radius, dim } => {
            let omega = unit_ball_volume(dim);
            let sphere = move |r: f64| dim as f64 * omega * r.powi(dim as i32 - 1);
            let shell = move |lo: f64, hi: f64| omega * (hi.powi(dim as i32) - lo.powi(dim as i32));
            build_chain(*domain, resolution.to_vec(), id, 0.0, radius, Axis::Radial, sphere, shell)
        }
        Domain::Rectangle { ax, bx, ay, by } => {
            build_rectangle(*domain, resolution.to_vec(), id, ax, bx, ay, by)
        }
    };
    Ok(grid)
}

#[allow(clippy::too_many_arguments)]
fn build_chain(
    domain: Domain,
    resolution: Vec<usize>,
    id: u64,
    lo: f64,
    hi: f64,
    axis: Axis,
    face_area: impl Fn(f64) -> f64,
    cell_measure: impl Fn(f64, f64) -> f64,
) -> Grid {
    let n = resolution[0];
    let h = (hi - lo) / n as f64;
    let mut cell_centers = Vec::with_capacity(n);
    let mut cell_volumes = Vec::with_capacity(n);
    for i in 0..n {
        let xl = lo + i as f64 * h;
        cell_centers.push([xl + 0.5 * h, 0.0]);
        cell_volumes.push(cell_measure(xl, xl + h));
    }
    let mut faces = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let x = lo + (i + 1) as f64 * h;
        faces.push(Face {
            left: i,
            right: i + 1,
            area: face_area(x),
            dist: h,
            midpoint: [x, 0.0],
            axis,
        });
    }
    let boundary_faces = vec![
        BoundaryFace { cell: 0, area: face_area(lo), midpoint: [lo, 0.0], axis },
        BoundaryFace { cell: n - 1, area: face_area(hi), midpoint: [hi, 0.0], axis },
    ];
    Grid { domain, resolution, cell_centers, cell_volumes, faces, boundary_faces, h, id }
}

fn build_rectangle(
    domain: Domain,
    resolution: Vec<usize>,
    id: u64,
    ax: f64,
    bx: f64,
    ay: f64,
    by: f64,
) -> Grid {
    let (nx, ny) = (resolution[0], resolution[1]);
    let hx = (bx - ax) / nx as f64;
    let hy = (by - ay) / ny as f64;
    let idx = |ix: usize, iy: usize| iy * nx + ix;
    let mut cell_centers = Vec::with_capacity(nx * ny);
    let mut cell_volumes = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            cell_centers.push([ax + (ix as f64 + 0.5) * hx, ay + (iy as f64 + 0.5) * hy]);
            cell_volumes.push(hx * hy);
        }
    }
    let mut faces = Vec::with_capacity((nx - 1) * ny + nx * (ny - 1));
    for iy in 0..ny {
        let yc = ay + (iy as f64 + 0.5) * hy;
        for ix in 0..nx - 1 {
            faces.push(Face {
                left: idx(ix, iy),
                right: idx(ix + 1, iy),
                area: hy,
                dist: hx,
                midpoint: [ax + (ix + 1) as f64 * hx, yc],
                axis: Axis::X,
            });
        }
    }
    for iy in 0..ny - 1 {
        let yf = ay + (iy + 1) as f64 * hy;
        for ix in 0..nx {
            faces.push(Face {
                left: idx(ix, iy),
                right: idx(ix, iy + 1),
                area: hx,
                dist: hy,
                midpoint: [ax + (ix as f64 + 0.5) * hx, yf],
                axis: Axis::Y,
            });
        }
    }
    let mut boundary_faces = Vec::with_capacity(2 * nx + 2 * ny);
    for iy in 0..ny {
        let yc = ay + (iy as f64 + 0.5) * hy;
        boundary_faces.push(BoundaryFace { cell: idx(0, iy), area: hy, midpoint: [ax, yc], axis: Axis::X });
        boundary_faces.push(BoundaryFace { cell: idx(nx - 1, iy), area: hy, midpoint: [bx, yc], axis: Axis::X });
    }
    for ix in 0..nx {
        let xc = ax + (ix as f64 + 0.5) * hx;
        boundary_faces.push(BoundaryFace { cell: idx(ix, 0), area: hx, midpoint: [xc, ay], axis: Axis::Y });
        boundary_faces.push(BoundaryFace { cell: idx(ix, ny - 1), area: hx, midpoint: [xc, by], axis: Axis::Y });
    }
    Grid {
        domain,
        resolution,
        cell_centers,
        cell_volumes,
        faces,
        boundary_faces,
        h: (hx * hx + hy * hy).sqrt(),
        id,
    }
}

/// Cell-centered scalar field tied to the grid it was sampled on.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
    grid_id: u64,
}

impl Field {
    pub fn new(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Field {
        Field {
            values: grid.cell_centers.iter().map(|&x| f(x)).collect(),
            grid_id: grid.id(),
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> Field {
        Field { values: vec![c; grid.cell_count()], grid_id: grid.id() }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.cell_count() {
            return Err(KsError::GridMismatch { field: values.len() as u64, grid: grid.cell_count() as u64 });
        }
        Ok(Field { values, grid_id: grid.id() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid_id(&self) -> u64 {
        self.grid_id
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.grid_id != grid.id() {
            return Err(KsError::GridMismatch { field: self.grid_id, grid: grid.id() });
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { values: self.values.iter().map(|&x| f(x)).collect(), grid_id: self.grid_id }
    }
}

/// Compensated (Kahan) sum; keeps long reductions at O(eps) instead of
/// O(n eps), which the mass-conservation checks rely on.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Discrete integral: volume-weighted sum of cell values.
pub fn integrate(grid: &Grid, f: &Field) -> f64 {
    debug_assert!(f.check_grid(grid).is_ok());
    kahan_sum(f.values().iter().zip(&grid.cell_volumes).map(|(&v, &w)| v * w))
}

/// How a cell pair is averaged onto its shared face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaceMean {
    Arithmetic,
    Harmonic,
}

impl FaceMean {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            FaceMean::Arithmetic => 0.5 * (a + b),
            FaceMean::Harmonic => {
                let s = a + b;
                if s == 0.0 {
                    0.0
                } else {
                    2.0 * a * b / s
                }
            }
        }
    }
}

/// Discrete integral of |grad f|^2 / f^2, assembled face by face with
/// two-point gradients and the selected face mean in the denominator.
///
/// Errors if any cell value sits below `floor`; the caller owns the flooring
/// policy, this routine never clamps silently.
pub fn gradient_sq_over_sq_with(grid: &Grid, f: &Field, floor: f64, mean: FaceMean) -> Result<f64> {
    f.check_grid(grid)?;
    for (cell, &v) in f.values().iter().enumerate() {
        if v < floor {
            return Err(KsError::BelowFloor { cell, value: v, floor });
        }
    }
    let v = f.values();
    Ok(kahan_sum(grid.faces.iter().map(|face| {
        let diff = v[face.right] - v[face.left];
        let denom = mean.apply(v[face.left], v[face.right]).max(floor);
        face.area / face.dist * (diff / denom) * (diff / denom)
    })))
}

/// `gradient_sq_over_sq_with` using the arithmetic face mean.
pub fn gradient_sq_over_sq(grid: &Grid, f: &Field, floor: f64) -> Result<f64> {
    gradient_sq_over_sq_with(grid, f, floor, FaceMean::Arithmetic)
}

/// Conservative two-point Neumann Laplacian applied to a field.
///
/// Zero-flux on the boundary, so the discrete integral of the result is zero
/// to rounding for any field.
pub fn neumann_laplacian_apply(grid: &Grid, f: &Field) -> Result<Field> {
    f.check_grid(grid)?;
    let v = f.values();
    let mut acc = vec![0.0; grid.cell_count()];
    for face in &grid.faces {
        let flux = face.area * (v[face.right] - v[face.left]) / face.dist;
        acc[face.left] += flux;
        acc[face.right] -= flux;
    }
    for (a, &vol) in acc.iter_mut().zip(&grid.cell_volumes) {
        *a /= vol;
    }
    Field::from_values(grid, acc)
}
