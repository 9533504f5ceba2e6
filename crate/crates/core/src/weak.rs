//! Weak-form verification of sampled trajectories.
//!
//! Three statements are checked against a trajectory, each tested with a
//! bank of separable space-time test functions `phi(x, t) = psi(x) eta(t)`
//! whose value, gradient, and Laplacian are analytic:
//!
//! * the signal identity: for every `psi` with vanishing normal derivative,
//!   `int int v (lap psi - psi) + u psi = 0`;
//! * the supersolution inequality for `u^p`: against nonnegative test
//!   functions vanishing at the final time,
//!
//!   ```text
//!   -int int u^p phi_t - int u0^p phi(0)
//!     >= 4 (1-p)(1 - p chi)/p int int |grad u^(p/2)|^2 phi
//!      + int int u^p lap phi
//!      + 4 (1-p) chi int int |grad u^(p/2) - u^(p/2)/(2v) grad v|^2 phi
//!      - (1-p) chi int int u^p phi
//!      + (1-p) chi int int u^(p+1)/v phi
//!      - (1-2p) chi int int u^p / v grad v . grad phi;
//!   ```
//!
//! * the regularized testing inequality, which keeps the final-time term
//!   and replaces part of the `u^p` weight by `Phi_eps(u)`:
//!
//!   ```text
//!   -int int u^p phi_t + int u^p(T) phi(T) - int u^p(0) phi(0)
//!     >= 4 (1-p)(1 - p chi)/p int int |grad u^(p/2)|^2 phi
//!      + int int u^p lap phi
//!      + 4 (1-p) chi int int |drift|^2 phi
//!      + (1-p) chi int int Phi_eps(u) phi
//!      - 2 (1-p) chi int int u^p phi
//!      + (1-p) chi int int u^(p+1)/v phi
//!      + (1-p) chi int int Phi_eps(u)/v grad v . grad phi
//!      + p chi int int u^p/((1+eps u) v) grad v . grad phi
//!      - 2 (1-p) chi int int u^p / v grad v . grad phi.
//!   ```
//!
//! Spatial quadrature reuses the exact face accumulators of the ledger, so
//! the common dissipation terms agree with the ledger columns to rounding.
//! Time quadrature is left-endpoint Riemann over the sample times, except
//! for the `phi_t` pairing, which integrates the analytic profile exactly
//! against the piecewise-constant samples; on a homogeneous state both
//! sides then cancel to rounding instead of leaving an O(dt) tail.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::functionals::{face_drift_sq, face_grad_sq, face_slope_ratio_sq, phi_eps};
use crate::geometry::{kahan_sum, Axis, Domain, Grid};
use crate::snapshot::Trajectory;
use crate::stepper::Params;
use crate::tolerances::{POSITIVITY_FLOOR, WEAK_ID_COEFF, WEAK_INEQ_COEFF};

// ---------------------------------------------------------------------------
// test functions

/// Oscillating part of a spatial test function. Frequencies are chosen by
/// the bank builder so the normal derivative vanishes on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Oscillation {
    None,
    /// `cos(freq (x_axis - origin))`.
    AxisCos { axis: usize, freq: f64, origin: f64 },
    /// `cos(fx (x - ox)) cos(fy (y - oy))`.
    ProductCos { freq_x: f64, origin_x: f64, freq_y: f64, origin_y: f64 },
    /// `cos(freq r)` as a radial function in `dim` dimensions.
    RadialCos { freq: f64, dim: u32 },
}

/// Spatial factor `psi(x) = base + amp * osc(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialMode {
    pub base: f64,
    pub amp: f64,
    pub osc: Oscillation,
}

fn axis_index(axis: Axis) -> usize {
    match axis {
        Axis::X | Axis::Radial => 0,
        Axis::Y => 1,
    }
}

impl SpatialMode {
    pub fn value(&self, x: &[f64; 2]) -> f64 {
        let osc = match self.osc {
            Oscillation::None => 0.0,
            Oscillation::AxisCos { axis, freq, origin } => (freq * (x[axis] - origin)).cos(),
            Oscillation::ProductCos { freq_x, origin_x, freq_y, origin_y } => {
                (freq_x * (x[0] - origin_x)).cos() * (freq_y * (x[1] - origin_y)).cos()
            }
            Oscillation::RadialCos { freq, .. } => (freq * x[0]).cos(),
        };
        self.base + self.amp * osc
    }

    /// Directional derivative along a face normal.
    pub fn grad_along(&self, x: &[f64; 2], axis: Axis) -> f64 {
        let idx = axis_index(axis);
        let osc = match self.osc {
            Oscillation::None => 0.0,
            Oscillation::AxisCos { axis: a, freq, origin } => {
                if a == idx {
                    -freq * (freq * (x[a] - origin)).sin()
                } else {
                    0.0
                }
            }
            Oscillation::ProductCos { freq_x, origin_x, freq_y, origin_y } => {
                let cx = freq_x * (x[0] - origin_x);
                let cy = freq_y * (x[1] - origin_y);
                if idx == 0 {
                    -freq_x * cx.sin() * cy.cos()
                } else {
                    -freq_y * cx.cos() * cy.sin()
                }
            }
            Oscillation::RadialCos { freq, .. } => -freq * (freq * x[0]).sin(),
        };
        self.amp * osc
    }

    pub fn laplacian(&self, x: &[f64; 2]) -> f64 {
        let osc = match self.osc {
            Oscillation::None => 0.0,
            Oscillation::AxisCos { axis, freq, origin } => {
                -freq * freq * (freq * (x[axis] - origin)).cos()
            }
            Oscillation::ProductCos { freq_x, origin_x, freq_y, origin_y } => {
                -(freq_x * freq_x + freq_y * freq_y)
                    * (freq_x * (x[0] - origin_x)).cos()
                    * (freq_y * (x[1] - origin_y)).cos()
            }
            Oscillation::RadialCos { freq, dim } => {
                // psi'' + (dim-1)/r psi'; the r -> 0 limit is -dim freq^2.
                let r = x[0];
                let z = freq * r;
                if z.abs() < 1e-8 {
                    -(dim as f64) * freq * freq * z.cos()
                } else {
                    -freq * freq * z.cos() - (dim as f64 - 1.0) * freq * z.sin() / r
                }
            }
        };
        self.amp * osc
    }

    pub fn sup_value(&self) -> f64 {
        self.base.abs() + self.amp.abs()
    }

    pub fn sup_grad(&self) -> f64 {
        let freq = match self.osc {
            Oscillation::None => 0.0,
            Oscillation::AxisCos { freq, .. } => freq.abs(),
            Oscillation::ProductCos { freq_x, freq_y, .. } => freq_x.abs().max(freq_y.abs()),
            Oscillation::RadialCos { freq, .. } => freq.abs(),
        };
        self.amp.abs() * freq
    }

    pub fn sup_laplacian(&self) -> f64 {
        let f2 = match self.osc {
            Oscillation::None => 0.0,
            Oscillation::AxisCos { freq, .. } => freq * freq,
            Oscillation::ProductCos { freq_x, freq_y, .. } => freq_x * freq_x + freq_y * freq_y,
            // |sin z / z| <= 1 bounds the curvature term by dim * freq^2.
            Oscillation::RadialCos { freq, dim } => dim as f64 * freq * freq,
        };
        self.amp.abs() * f2
    }

    pub fn is_nonnegative(&self) -> bool {
        self.base >= self.amp.abs()
    }
}

/// Temporal factor `eta(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeProfile {
    One,
    /// `exp(-rate t)`.
    Decay { rate: f64 },
    /// 1 on `[0, start]`, quintic smoothstep down to 0 at `end`, 0 after.
    Cutoff { start: f64, end: f64 },
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::One => 1.0,
            TimeProfile::Decay { rate } => (-rate * t).exp(),
            TimeProfile::Cutoff { start, end } => {
                if t <= start {
                    1.0
                } else if t >= end {
                    0.0
                } else {
                    let s = (t - start) / (end - start);
                    1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
                }
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::One => 0.0,
            TimeProfile::Decay { rate } => -rate * (-rate * t).exp(),
            TimeProfile::Cutoff { start, end } => {
                if t <= start || t >= end {
                    0.0
                } else {
                    let w = end - start;
                    let s = (t - start) / w;
                    -30.0 * s * s * (s - 1.0) * (s - 1.0) / w
                }
            }
        }
    }

    pub fn sup_value(&self) -> f64 {
        1.0
    }

    pub fn sup_derivative(&self) -> f64 {
        match *self {
            TimeProfile::One => 0.0,
            TimeProfile::Decay { rate } => rate.abs(),
            // The quintic smoothstep peaks at 15/8 on the unit interval.
            TimeProfile::Cutoff { start, end } => 1.875 / (end - start),
        }
    }
}

/// One separable test function with a stable display name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub name: String,
    pub mode: SpatialMode,
    pub profile: TimeProfile,
}

/// Assembles the test bank for a domain and horizon.
///
/// `nonneg_only` keeps the spatial modes with `base >= |amp|` (for the
/// one-sided checks); `vanish_at_end` replaces the non-compact time
/// profiles by ramps that are exactly zero at `t_end`. The bank always
/// contains the constant mode, a first and a second boundary-compatible
/// harmonic per axis, and at least three distinct time profiles.
pub fn build_test_bank(
    domain: &Domain,
    t_end: f64,
    nonneg_only: bool,
    vanish_at_end: bool,
) -> Vec<TestFunction> {
    let mut modes: Vec<(String, SpatialMode)> = vec![(
        "const".into(),
        SpatialMode { base: 1.0, amp: 0.0, osc: Oscillation::None },
    )];
    // Both lifted phases matter: the chemotactic cross terms pair the drift
    // with the test-function gradient, and only one orientation exposes a
    // wrong-signed flux.
    let push_pair = |modes: &mut Vec<(String, SpatialMode)>, name: &str, osc: Oscillation| {
        modes.push((name.into(), SpatialMode { base: 0.0, amp: 1.0, osc }));
        modes.push((format!("lifted_{name}"), SpatialMode { base: 1.0, amp: 0.5, osc }));
        modes.push((format!("well_{name}"), SpatialMode { base: 1.0, amp: -0.5, osc }));
    };
    match *domain {
        Domain::Interval { a, b } => {
            let len = b - a;
            for k in [1u32, 2] {
                let osc = Oscillation::AxisCos {
                    axis: 0,
                    freq: k as f64 * std::f64::consts::PI / len,
                    origin: a,
                };
                push_pair(&mut modes, &format!("cos{k}x"), osc);
            }
        }
        Domain::Rectangle { ax, bx, ay, by } => {
            let fx = std::f64::consts::PI / (bx - ax);
            let fy = std::f64::consts::PI / (by - ay);
            push_pair(&mut modes, "cos1x", Oscillation::AxisCos { axis: 0, freq: fx, origin: ax });
            push_pair(&mut modes, "cos1y", Oscillation::AxisCos { axis: 1, freq: fy, origin: ay });
            push_pair(
                &mut modes,
                "cos1x_cos1y",
                Oscillation::ProductCos { freq_x: fx, origin_x: ax, freq_y: fy, origin_y: ay },
            );
        }
        Domain::RadialBall { radius, dim } => {
            for k in [1u32, 2] {
                let osc = Oscillation::RadialCos {
                    freq: k as f64 * std::f64::consts::PI / radius,
                    dim,
                };
                push_pair(&mut modes, &format!("cos{k}r"), osc);
            }
        }
    }
    if nonneg_only {
        modes.retain(|(_, m)| m.is_nonnegative());
    }

    let profiles: Vec<(String, TimeProfile)> = if vanish_at_end {
        vec![
            ("mid_ramp".into(), TimeProfile::Cutoff { start: 0.25 * t_end, end: 0.75 * t_end }),
            ("late_ramp".into(), TimeProfile::Cutoff { start: 0.5 * t_end, end: t_end }),
            ("full_ramp".into(), TimeProfile::Cutoff { start: 0.0, end: t_end }),
        ]
    } else {
        vec![
            ("one".into(), TimeProfile::One),
            ("decay".into(), TimeProfile::Decay { rate: 1.0 / t_end }),
            ("mid_ramp".into(), TimeProfile::Cutoff { start: 0.25 * t_end, end: 0.75 * t_end }),
        ]
    };

    let mut bank = Vec::with_capacity(modes.len() * profiles.len());
    for (mn, mode) in &modes {
        for (pn, profile) in &profiles {
            bank.push(TestFunction {
                name: format!("{mn}*{pn}"),
                mode: *mode,
                profile: *profile,
            });
        }
    }
    bank
}

// ---------------------------------------------------------------------------
// prepared trajectory data

struct SampleFields {
    u: Vec<f64>,
    v: Vec<f64>,
    /// `u^(p/2)`, matching the ledger's power evaluation bit for bit.
    w: Vec<f64>,
    /// `u^p`.
    up: Vec<f64>,
    /// `Phi_eps(u)` when requested.
    phi: Vec<f64>,
}

struct Prepared {
    times: Vec<f64>,
    /// Left-endpoint weights; the final entry is zero.
    dts: Vec<f64>,
    samples: Vec<SampleFields>,
}

impl Prepared {
    fn t_span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    fn mean_dt(&self) -> f64 {
        self.t_span() / (self.times.len() - 1) as f64
    }

    /// Trapezoid weights over the sample times. Second-order in the sample
    /// spacing, used where no ledger accumulator has to be reproduced.
    fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.times.len();
        let mut w = vec![0.0; n];
        for k in 0..n - 1 {
            w[k] += 0.5 * self.dts[k];
            w[k + 1] += 0.5 * self.dts[k];
        }
        w
    }
}

fn prepare(grid: &Grid, traj: &Trajectory, p: f64, eps: f64, with_phi: bool) -> Result<Prepared> {
    if traj.grid_id() != grid.id() {
        return Err(KsError::GridMismatch { field: traj.grid_id(), grid: grid.id() });
    }
    if traj.len() < 2 {
        return Err(KsError::InsufficientData(format!(
            "weak-form checks need at least 2 samples, trajectory holds {}",
            traj.len()
        )));
    }
    let times = traj.times();
    let mut dts = vec![0.0; times.len()];
    for k in 0..times.len() - 1 {
        dts[k] = times[k + 1] - times[k];
    }
    let mut samples = Vec::with_capacity(traj.len());
    let mut min_v = f64::INFINITY;
    for rec in traj.records() {
        let n = rec.u.len();
        let mut w = vec![0.0; n];
        let mut up = vec![0.0; n];
        let mut phi = Vec::new();
        for i in 0..n {
            let ui = rec.u[i].max(0.0);
            w[i] = ui.powf(0.5 * p);
            up[i] = w[i] * w[i];
        }
        if with_phi {
            phi = Vec::with_capacity(n);
            for i in 0..n {
                phi.push(phi_eps(rec.u[i].max(0.0), p, eps)?);
            }
        }
        for &vi in &rec.v {
            min_v = min_v.min(vi);
        }
        samples.push(SampleFields { u: rec.u.clone(), v: rec.v.clone(), w, up, phi });
    }
    if min_v <= POSITIVITY_FLOOR {
        return Err(KsError::BelowFloor { cell: 0, value: min_v, floor: POSITIVITY_FLOOR });
    }
    Ok(Prepared { times, dts, samples })
}

/// `sum_i vol_i g_i psi(x_i)` with the mode evaluated at cell centers.
fn cell_weighted(grid: &Grid, g: &[f64], mode: &SpatialMode) -> f64 {
    kahan_sum(
        (0..grid.cell_count())
            .map(|i| grid.cell_volumes[i] * g[i] * mode.value(&grid.cell_centers[i])),
    )
}

/// Same with the analytic Laplacian of the mode as the weight.
fn cell_weighted_lap(grid: &Grid, g: &[f64], mode: &SpatialMode) -> f64 {
    kahan_sum(
        (0..grid.cell_count())
            .map(|i| grid.cell_volumes[i] * g[i] * mode.laplacian(&grid.cell_centers[i])),
    )
}

/// Face quadrature of `int g/v grad v . grad psi`: arithmetic face means of
/// the cell quantity `g` and of `v`, slab volume `A_f d_f` per face, and the
/// analytic gradient of the mode at the face midpoint.
fn face_quotient_cross(grid: &Grid, g: &[f64], v: &[f64], mode: &SpatialMode) -> f64 {
    kahan_sum(grid.faces.iter().map(|face| {
        let gf = 0.5 * (g[face.left] + g[face.right]);
        let vf = 0.5 * (v[face.left] + v[face.right]);
        let dv = (v[face.right] - v[face.left]) / face.dist;
        face.area * face.dist * gf / vf * dv * mode.grad_along(&face.midpoint, face.axis)
    }))
}

// ---------------------------------------------------------------------------
// reports

/// Result of testing one identity against one test function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualRow {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Result of testing one one-sided estimate: `margin = lhs - rhs` must stay
/// above `-tol`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityRow {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub rows: Vec<ResidualRow>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupersolutionCheck {
    pub rows: Vec<InequalityRow>,
    pub passed: bool,
}

/// Dissipation integrals accumulated with unit weight during the
/// regularized testing check; these mirror the ledger columns and the two
/// in-memory extras, and are compared against them elsewhere.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SharedTerms {
    pub grad_sq: f64,
    pub drift_sq: f64,
    pub entropy_flux: f64,
    pub slope_ratio: f64,
    pub power_time: f64,
    pub phi_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsTestingCheck {
    pub rows: Vec<InequalityRow>,
    pub shared: SharedTerms,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassCheck {
    pub initial_mass: f64,
    pub max_mass: f64,
    pub rel_excess: f64,
    pub tol: f64,
    pub passed: bool,
}

// ---------------------------------------------------------------------------
// checks

/// Tests the signal identity `int int v (lap psi - psi) + u psi = 0` for
/// every bank entry. The gradient pairing is moved onto the test function
/// (its normal derivative vanishes), so the residual measures how well the
/// discrete signal solves the continuum equation: O(h^2) plus the time
/// quadrature.
pub fn check_weak_v_identity(
    grid: &Grid,
    traj: &Trajectory,
    bank: &[TestFunction],
    coeff: f64,
) -> Result<IdentityCheck> {
    let prep = prepare(grid, traj, 0.5, 0.0, false)?;
    let measure = grid.measure();
    let mut rows = Vec::with_capacity(bank.len());
    for tf in bank {
        let mut residual = 0.0;
        let mut gross = 0.0;
        for (k, fields) in prep.samples.iter().enumerate() {
            if prep.dts[k] == 0.0 {
                continue;
            }
            let pv = tf.profile.value(prep.times[k]);
            let terms = [
                cell_weighted_lap(grid, &fields.v, &tf.mode),
                -cell_weighted(grid, &fields.v, &tf.mode),
                cell_weighted(grid, &fields.u, &tf.mode),
            ];
            residual += prep.dts[k] * pv * terms.iter().sum::<f64>();
            gross += prep.dts[k] * pv.abs() * terms.iter().map(|t| t.abs()).sum::<f64>();
        }
        // Each slice cancels to O(h^2) of its own gross size; the tolerance
        // tracks that size so it stays meaningful across data scales.
        let tol = coeff * (grid.h + prep.mean_dt()).powi(2) * gross.max(measure);
        rows.push(ResidualRow {
            name: tf.name.clone(),
            residual,
            tol,
            passed: residual.abs() <= tol,
        });
    }
    let passed = rows.iter().all(|r| r.passed);
    Ok(IdentityCheck { rows, passed })
}

struct TermParams {
    chi: f64,
    p: f64,
    coeff_grad: f64,
    coeff_drift: f64,
}

impl TermParams {
    fn new(params: &Params) -> TermParams {
        let p = params.p;
        let chi = params.chi;
        TermParams {
            chi,
            p,
            coeff_grad: 4.0 * (1.0 - p) * (1.0 - p * chi) / p,
            coeff_drift: 4.0 * (1.0 - p) * chi,
        }
    }
}

/// One-sided tolerance, proportional to the gross size of the assembled
/// terms: the discretization error of each integral scales with its own
/// magnitude times (h + dt), and the drift cap adds an O(eps) model error.
fn ineq_tol(coeff: f64, grid: &Grid, prep: &Prepared, params: &Params, gross: f64) -> f64 {
    coeff * (grid.h + prep.mean_dt() + params.eps) * gross.max(grid.measure())
}

/// Exact integral of `eta'(t)` against piecewise-constant samples: the
/// weight of sample `k` is `eta(t_(k+1)) - eta(t_k)`. Telescopes exactly,
/// so a homogeneous state produces a zero residual to rounding.
fn profile_increments(profile: &TimeProfile, times: &[f64]) -> Vec<f64> {
    let mut inc = vec![0.0; times.len()];
    for k in 0..times.len() - 1 {
        inc[k] = profile.value(times[k + 1]) - profile.value(times[k]);
    }
    inc
}

/// Tests the supersolution inequality for `u^p` against every bank entry.
/// Bank entries must be nonnegative in space and exactly zero at the final
/// sample time; anything else is a caller error.
///
/// The dissipation integrals use trapezoid weights: this check carries no
/// ledger cross-check obligation, and the left-endpoint bias would otherwise
/// dominate the margin and mask a wrong-signed drift.
pub fn check_supersolution_ineq(
    grid: &Grid,
    traj: &Trajectory,
    params: &Params,
    bank: &[TestFunction],
    coeff: f64,
) -> Result<SupersolutionCheck> {
    let prep = prepare(grid, traj, params.p, params.eps, false)?;
    let t_last = prep.times[prep.times.len() - 1];
    let trap = prep.trapezoid_weights();
    let tp = TermParams::new(params);
    let mut rows = Vec::with_capacity(bank.len());
    for tf in bank {
        if !tf.mode.is_nonnegative() {
            return Err(KsError::InvalidParameter(format!(
                "test function {} is signed; the one-sided estimate needs phi >= 0",
                tf.name
            )));
        }
        if tf.profile.value(t_last) != 0.0 {
            return Err(KsError::InvalidParameter(format!(
                "test function {} does not vanish at the final time",
                tf.name
            )));
        }
        let inc = profile_increments(&tf.profile, &prep.times);

        let mut b_t = 0.0;
        let mut rhs = 0.0;
        let mut gross = 0.0;
        for (k, fields) in prep.samples.iter().enumerate() {
            let b_k = cell_weighted(grid, &fields.up, &tf.mode);
            b_t += inc[k] * b_k;
            gross += inc[k].abs() * b_k.abs();
            let lam = trap[k];
            if lam == 0.0 {
                continue;
            }
            let pv = tf.profile.value(prep.times[k]);
            if pv == 0.0 {
                continue;
            }
            let face_weight = |f: usize| {
                let face = &grid.faces[f];
                tf.mode.value(&face.midpoint)
            };
            let quot: Vec<f64> = (0..grid.cell_count())
                .map(|i| fields.up[i] * fields.u[i] / fields.v[i])
                .collect();
            let terms = [
                tp.coeff_grad * face_grad_sq(grid, &fields.w, face_weight),
                cell_weighted_lap(grid, &fields.up, &tf.mode),
                tp.coeff_drift * face_drift_sq(grid, &fields.w, &fields.v, face_weight),
                -(1.0 - tp.p) * tp.chi * cell_weighted(grid, &fields.up, &tf.mode),
                (1.0 - tp.p) * tp.chi * cell_weighted(grid, &quot, &tf.mode),
                -(1.0 - 2.0 * tp.p)
                    * tp.chi
                    * face_quotient_cross(grid, &fields.up, &fields.v, &tf.mode),
            ];
            rhs += lam * pv * terms.iter().sum::<f64>();
            gross += lam * pv.abs() * terms.iter().map(|t| t.abs()).sum::<f64>();
        }
        let b_0 = tf.profile.value(prep.times[0])
            * cell_weighted(grid, &prep.samples[0].up, &tf.mode);
        gross += b_0.abs();
        let lhs = -b_t - b_0;
        let margin = lhs - rhs;
        let tol = ineq_tol(coeff, grid, &prep, params, gross);
        rows.push(InequalityRow {
            name: tf.name.clone(),
            lhs,
            rhs,
            margin,
            tol,
            passed: margin >= -tol,
        });
    }
    let passed = rows.iter().all(|r| r.passed);
    Ok(SupersolutionCheck { rows, passed })
}

/// Tests the regularized testing inequality against every (nonnegative)
/// bank entry, and accumulates the unit-weight dissipation terms for the
/// cross-check against the ledger.
pub fn check_eps_testing_ineq(
    grid: &Grid,
    traj: &Trajectory,
    params: &Params,
    bank: &[TestFunction],
    coeff: f64,
) -> Result<EpsTestingCheck> {
    let prep = prepare(grid, traj, params.p, params.eps, true)?;
    let tp = TermParams::new(params);
    let last = prep.samples.len() - 1;

    let mut shared = SharedTerms {
        grad_sq: 0.0,
        drift_sq: 0.0,
        entropy_flux: 0.0,
        slope_ratio: 0.0,
        power_time: 0.0,
        phi_time: 0.0,
    };
    for (k, fields) in prep.samples.iter().enumerate() {
        let lam = prep.dts[k];
        if lam == 0.0 {
            continue;
        }
        shared.grad_sq += lam * face_grad_sq(grid, &fields.w, |_| 1.0);
        shared.drift_sq += lam * face_drift_sq(grid, &fields.w, &fields.v, |_| 1.0);
        shared.entropy_flux += lam
            * kahan_sum((0..grid.cell_count()).map(|i| {
                grid.cell_volumes[i] * fields.up[i] * fields.u[i] / fields.v[i]
            }));
        shared.slope_ratio += lam * face_slope_ratio_sq(grid, &fields.up, &fields.v, |_| 1.0);
        shared.power_time += lam
            * kahan_sum((0..grid.cell_count()).map(|i| grid.cell_volumes[i] * fields.up[i]));
        shared.phi_time += lam
            * kahan_sum((0..grid.cell_count()).map(|i| grid.cell_volumes[i] * fields.phi[i]));
    }

    let mut rows = Vec::with_capacity(bank.len());
    for tf in bank {
        if !tf.mode.is_nonnegative() {
            return Err(KsError::InvalidParameter(format!(
                "test function {} is signed; the one-sided estimate needs phi >= 0",
                tf.name
            )));
        }
        let inc = profile_increments(&tf.profile, &prep.times);
        let mut b_t = 0.0;
        let mut rhs = 0.0;
        let mut gross = 0.0;
        for (k, fields) in prep.samples.iter().enumerate() {
            let b_k = cell_weighted(grid, &fields.up, &tf.mode);
            b_t += inc[k] * b_k;
            gross += inc[k].abs() * b_k.abs();
            let lam = prep.dts[k];
            if lam == 0.0 {
                continue;
            }
            let pv = tf.profile.value(prep.times[k]);
            let face_weight = |f: usize| {
                let face = &grid.faces[f];
                tf.mode.value(&face.midpoint)
            };
            let quot: Vec<f64> = (0..grid.cell_count())
                .map(|i| fields.up[i] * fields.u[i] / fields.v[i])
                .collect();
            let capped: Vec<f64> = (0..grid.cell_count())
                .map(|i| fields.up[i] / (1.0 + params.eps * fields.u[i].max(0.0)))
                .collect();
            let terms = [
                tp.coeff_grad * face_grad_sq(grid, &fields.w, face_weight),
                cell_weighted_lap(grid, &fields.up, &tf.mode),
                tp.coeff_drift * face_drift_sq(grid, &fields.w, &fields.v, face_weight),
                (1.0 - tp.p) * tp.chi * cell_weighted(grid, &fields.phi, &tf.mode),
                -2.0 * (1.0 - tp.p) * tp.chi * cell_weighted(grid, &fields.up, &tf.mode),
                (1.0 - tp.p) * tp.chi * cell_weighted(grid, &quot, &tf.mode),
                (1.0 - tp.p)
                    * tp.chi
                    * face_quotient_cross(grid, &fields.phi, &fields.v, &tf.mode),
                tp.p * tp.chi * face_quotient_cross(grid, &capped, &fields.v, &tf.mode),
                -2.0
                    * (1.0 - tp.p)
                    * tp.chi
                    * face_quotient_cross(grid, &fields.up, &fields.v, &tf.mode),
            ];
            rhs += lam * pv * terms.iter().sum::<f64>();
            gross += lam * pv.abs() * terms.iter().map(|t| t.abs()).sum::<f64>();
        }
        let b_last =
            tf.profile.value(prep.times[last]) * cell_weighted(grid, &prep.samples[last].up, &tf.mode);
        let b_first =
            tf.profile.value(prep.times[0]) * cell_weighted(grid, &prep.samples[0].up, &tf.mode);
        gross += b_last.abs() + b_first.abs();
        let lhs = -b_t + b_last - b_first;
        let margin = lhs - rhs;
        let tol = ineq_tol(coeff, grid, &prep, params, gross);
        rows.push(InequalityRow {
            name: tf.name.clone(),
            lhs,
            rhs,
            margin,
            tol,
            passed: margin >= -tol,
        });
    }
    let passed = rows.iter().all(|r| r.passed);
    Ok(EpsTestingCheck { rows, shared, passed })
}

/// Total mass must never exceed its initial value beyond `rel_tol`.
pub fn check_mass_ineq(grid: &Grid, traj: &Trajectory, rel_tol: f64) -> Result<MassCheck> {
    if traj.grid_id() != grid.id() {
        return Err(KsError::GridMismatch { field: traj.grid_id(), grid: grid.id() });
    }
    if traj.is_empty() {
        return Err(KsError::InsufficientData("mass check needs at least one sample".into()));
    }
    let masses: Vec<f64> = traj
        .records()
        .iter()
        .map(|rec| kahan_sum(rec.u.iter().zip(&grid.cell_volumes).map(|(&u, &vol)| vol * u)))
        .collect();
    let initial = masses[0];
    if !(initial > 0.0) {
        return Err(KsError::InsufficientData(format!(
            "initial mass must be positive, got {initial}"
        )));
    }
    let max_mass = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel_excess = (max_mass - initial) / initial;
    Ok(MassCheck {
        initial_mass: initial,
        max_mass,
        rel_excess,
        tol: rel_tol,
        passed: rel_excess <= rel_tol,
    })
}

// ---------------------------------------------------------------------------
// combined report

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub identity: IdentityCheck,
    pub supersolution: SupersolutionCheck,
    pub eps_testing: EpsTestingCheck,
    pub mass: MassCheck,
    pub passed: bool,
}

/// Runs every weak-form check with the default banks and coefficients.
pub fn full_report(grid: &Grid, traj: &Trajectory, params: &Params) -> Result<ResidualReport> {
    let t_end = traj
        .times()
        .last()
        .copied()
        .ok_or_else(|| KsError::InsufficientData("empty trajectory".into()))?;
    let id_bank = build_test_bank(&grid.domain, t_end, false, false);
    let super_bank = build_test_bank(&grid.domain, t_end, true, true);
    let eps_bank = build_test_bank(&grid.domain, t_end, true, false);
    let identity = check_weak_v_identity(grid, traj, &id_bank, WEAK_ID_COEFF)?;
    let supersolution = check_supersolution_ineq(grid, traj, params, &super_bank, WEAK_INEQ_COEFF)?;
    let eps_testing = check_eps_testing_ineq(grid, traj, params, &eps_bank, WEAK_INEQ_COEFF)?;
    // Samples are far sparser than steps, so the per-step drift bound is
    // loose here; one part in 1e9 flags real leaks without chasing noise.
    let mass = check_mass_ineq(grid, traj, 1e-9)?;
    let passed = identity.passed && supersolution.passed && eps_testing.passed && mass.passed;
    Ok(ResidualReport { identity, supersolution, eps_testing, mass, passed })
}

impl ResidualReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

fn status(p: bool) -> &'static str {
    if p {
        "ok"
    } else {
        "FAIL"
    }
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "signal identity")?;
        for r in &self.identity.rows {
            writeln!(
                f,
                "  {:<24} residual {:>13.4e}  tol {:>10.3e}  {}",
                r.name,
                r.residual,
                r.tol,
                status(r.passed)
            )?;
        }
        writeln!(f, "supersolution estimate")?;
        for r in &self.supersolution.rows {
            writeln!(
                f,
                "  {:<24} margin {:>13.4e}  tol {:>10.3e}  {}",
                r.name,
                r.margin,
                r.tol,
                status(r.passed)
            )?;
        }
        writeln!(f, "regularized testing estimate")?;
        for r in &self.eps_testing.rows {
            writeln!(
                f,
                "  {:<24} margin {:>13.4e}  tol {:>10.3e}  {}",
                r.name,
                r.margin,
                r.tol,
                status(r.passed)
            )?;
        }
        writeln!(
            f,
            "mass: initial {:.6e}, max {:.6e}, excess {:.2e}  {}",
            self.mass.initial_mass,
            self.mass.max_mass,
            self.mass.rel_excess,
            status(self.mass.passed)
        )?;
        writeln!(f, "overall: {}", status(self.passed))
    }
}
