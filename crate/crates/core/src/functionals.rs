//! Scalar functionals and the per-run ledger.
//!
//! The estimate machinery tracks powers `u^p` with `p in (0, 1)`. The
//! regularization replaces `u^p` by
//!
//! ```text
//!   Phi_eps(s) = p * int_0^s sigma^(p-1) / (1 + eps sigma) d sigma,
//! ```
//!
//! which satisfies `0 <= Phi_eps(s) <= s^p` and recovers `s^p` as eps -> 0.
//! The comparison ODE `y' = -a y^2 + b` dominates the low-order entropy
//! `int u^p`; every solution obeys `y(t) <= sqrt(b/a) coth(sqrt(ab) t)` and
//! the bound is attained by the extremal solution.
//!
//! The ledger samples instantaneous functionals and accumulates the
//! time-integrated dissipation terms with left-endpoint weights, so the row
//! at time `t` always carries the integral over `[0, t]`. The face-loop
//! accumulators live here and are shared verbatim with the weak-form
//! checkers; agreement between the two consumers is a test target, not a
//! coincidence.

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::geometry::{gradient_sq_over_sq, integrate, kahan_sum, Field, Grid};
use crate::stepper::{Params, StateSnapshot};
use crate::tolerances::{PHI_QUAD_REL_TOL, POSITIVITY_FLOOR};

// ---------------------------------------------------------------------------
// quadrature

/// Adaptive Simpson on `[a, b]` with a relative tolerance against the
/// coarse whole-interval estimate. Plain recursion with shared endpoint
/// evaluations; the depth cap only guards against pathological integrands.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = rel_tol * (whole.abs() + 1e-300);
    simpson_split(f, a, fa, b, fb, m, fm, whole, tol, 64)
}

#[allow(clippy::too_many_arguments)]
fn simpson_split<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        return left + right + err / 15.0;
    }
    simpson_split(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + simpson_split(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

// ---------------------------------------------------------------------------
// regularized power integral

/// `Phi_eps(s)` evaluated through the substitution `sigma = tau^(1/p)`,
///
/// ```text
///   Phi_eps(s) = int_0^(s^p) d tau / (1 + eps tau^(1/p)),
/// ```
///
/// which removes the `sigma^(p-1)` endpoint singularity of the defining
/// integrand. `eps = 0` returns `s^p` exactly.
pub fn phi_eps(s: f64, p: f64, eps: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(KsError::InvalidParameter(format!("exponent p must lie in (0, 1), got {p}")));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(KsError::InvalidParameter(format!("argument must be finite and >= 0, got {s}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(KsError::InvalidParameter(format!("eps must be finite and >= 0, got {eps}")));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    let sp = s.powf(p);
    if eps == 0.0 {
        return Ok(sp);
    }
    let inv_p = 1.0 / p;
    let value = adaptive_simpson(&|tau: f64| 1.0 / (1.0 + eps * tau.powf(inv_p)), 0.0, sp, PHI_QUAD_REL_TOL);
    // The integrand lies in (0, 1], so the value must too (times s^p).
    Ok(value.clamp(0.0, sp))
}

// ---------------------------------------------------------------------------
// exponent windows

/// Second tracked exponent: midpoint of the window
/// `(1, min(p + 1, n (p + 1) / (2n - 2)))`. An empty window (small `p` in
/// higher dimensions) is an error; callers then skip the `u^r` column.
pub fn select_r(p: f64, n_eff: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(KsError::InvalidParameter(format!("exponent p must lie in (0, 1), got {p}")));
    }
    if n_eff < 2 {
        return Err(KsError::InvalidParameter(format!(
            "effective dimension must be >= 2, got {n_eff}"
        )));
    }
    let n = n_eff as f64;
    let upper = (p + 1.0).min(n * (p + 1.0) / (2.0 * n - 2.0));
    if upper <= 1.0 {
        return Err(KsError::InvalidParameter(format!(
            "window (1, {upper:.6}) for the second exponent is empty at p = {p}, n = {n_eff}"
        )));
    }
    Ok(0.5 * (1.0 + upper))
}

// ---------------------------------------------------------------------------
// comparison ODE

/// Universal upper bound for `y' <= -a y^2 + b` on `t > 0`:
/// `sqrt(b/a) * coth(sqrt(ab) t)`. Independent of the initial datum.
pub fn coth_bound(a: f64, b: f64, t: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && t > 0.0) {
        return Err(KsError::InvalidParameter(format!(
            "coth bound needs a, b, t > 0, got a = {a}, b = {b}, t = {t}"
        )));
    }
    Ok((b / a).sqrt() / (a * b).sqrt().mul_add(t, 0.0).tanh())
}

/// Closed-form solution of `y' = -a y^2 + b`, used as the oracle for the
/// numerical integrator. Branches on whether the datum sits above or below
/// the equilibrium `sqrt(b/a)`.
#[cfg(test)]
fn riccati_exact(a: f64, b: f64, y0: f64, t0: f64, t: f64) -> f64 {
    let ys = (b / a).sqrt();
    let k = (a * b).sqrt();
    let dt = t - t0;
    if y0 == ys {
        ys
    } else if y0 > ys {
        // arcoth(x) = atanh(1/x)
        ys / ((k * dt + (ys / y0).atanh()).tanh())
    } else {
        ys * (k * dt + (y0 / ys).atanh()).tanh()
    }
}

/// One `(t, y)` sample of the comparison trajectory next to the universal
/// bound at the same time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeSample {
    pub t: f64,
    pub y: f64,
    pub bound: f64,
}

/// Integrates `y' = -a y^2 + b` from `(t0, y0)` with an embedded
/// Cash-Karp 4/5 pair and records the solution at `samples` uniformly
/// spaced times (endpoints included). Steps are clamped to land on the
/// sample times exactly, so no interpolation is involved.
pub fn integrate_riccati(
    a: f64,
    b: f64,
    y0: f64,
    t0: f64,
    t_end: f64,
    samples: usize,
) -> Result<Vec<(f64, f64)>> {
    if !(a > 0.0 && b > 0.0) {
        return Err(KsError::InvalidParameter(format!("need a, b > 0, got a = {a}, b = {b}")));
    }
    if !(t_end > t0) {
        return Err(KsError::InvalidParameter(format!(
            "need t_end > t0, got [{t0}, {t_end}]"
        )));
    }
    if !(y0 >= 0.0 && y0.is_finite()) {
        return Err(KsError::InvalidParameter(format!("datum must be finite and >= 0, got {y0}")));
    }
    if samples < 2 {
        return Err(KsError::InvalidParameter(format!("need at least 2 samples, got {samples}")));
    }
    let f = |y: f64| b - a * y * y;
    let rel = 1e-11;
    let abs = 1e-13;
    let span = t_end - t0;
    let times: Vec<f64> = (0..samples)
        .map(|k| {
            if k == samples - 1 {
                t_end
            } else {
                t0 + span * k as f64 / (samples - 1) as f64
            }
        })
        .collect();

    let mut out = Vec::with_capacity(samples);
    let mut t = t0;
    let mut y = y0;
    out.push((t, y));
    let mut next = 1usize;
    // Initial step respects the stiffness scale 2 a y of the quadratic sink.
    let mut h = (span / 100.0).min(0.1 / (1.0 + 2.0 * a * y.max((b / a).sqrt())));
    let mut evals = 0u64;
    while next < samples {
        let target = times[next];
        let mut step = h.min(target - t);
        loop {
            evals += 1;
            if evals > 20_000_000 {
                return Err(KsError::SolveFailed(
                    "comparison ODE integrator exceeded its step budget".into(),
                ));
            }
            let k1 = f(y);
            let k2 = f(y + step * (0.2 * k1));
            let k3 = f(y + step * (0.075 * k1 + 0.225 * k2));
            let k4 = f(y + step * (0.3 * k1 - 0.9 * k2 + 1.2 * k3));
            let k5 = f(y + step * (-11.0 / 54.0 * k1 + 2.5 * k2 - 70.0 / 27.0 * k3 + 35.0 / 27.0 * k4));
            let k6 = f(y
                + step
                    * (1631.0 / 55296.0 * k1
                        + 175.0 / 512.0 * k2
                        + 575.0 / 13824.0 * k3
                        + 44275.0 / 110592.0 * k4
                        + 253.0 / 4096.0 * k5));
            let y5 = y + step
                * (37.0 / 378.0 * k1 + 250.0 / 621.0 * k3 + 125.0 / 594.0 * k4 + 512.0 / 1771.0 * k6);
            let y4 = y + step
                * (2825.0 / 27648.0 * k1
                    + 18575.0 / 48384.0 * k3
                    + 13525.0 / 55296.0 * k4
                    + 277.0 / 14336.0 * k5
                    + 0.25 * k6);
            let err = (y5 - y4).abs();
            let tol = abs + rel * y.abs().max(y5.abs());
            if err <= tol || step <= 1e-15 * span {
                t += step;
                y = y5;
                let grow = if err > 0.0 { 0.9 * (tol / err).powf(0.2) } else { 5.0 };
                h = (step * grow.clamp(0.2, 5.0)).min(span);
                break;
            }
            step *= (0.9 * (tol / err).powf(0.25)).clamp(0.1, 0.9);
        }
        if t >= target - 1e-15 * span {
            t = target;
            out.push((t, y));
            next += 1;
        }
    }
    Ok(out)
}

/// Integrates the comparison ODE and checks the trajectory against the
/// universal bound at every sample time, with multiplicative `slack`.
///
/// The bound is only universal for trajectories that sit at or below the
/// extremal one at the starting time; a datum above `bound(t0)` stays above
/// the bound forever and is rejected up front.
pub fn ode_comparison_check(
    a: f64,
    b: f64,
    y0: f64,
    t0: f64,
    t_end: f64,
    samples: usize,
    slack: f64,
) -> Result<OdeComparison> {
    if !(t0 > 0.0) {
        return Err(KsError::InvalidParameter(format!(
            "the universal bound diverges at t = 0, start at t0 > 0 (got {t0})"
        )));
    }
    let gate = coth_bound(a, b, t0)?;
    if y0 > gate * (1.0 + 1e-12) {
        return Err(KsError::InvalidParameter(format!(
            "datum {y0:.6e} exceeds the extremal value {gate:.6e} at t0 = {t0:.3e}; \
             such trajectories dominate the bound for all later times"
        )));
    }
    let path = integrate_riccati(a, b, y0, t0, t_end, samples)?;
    let mut rows = Vec::with_capacity(path.len());
    let mut max_excess = f64::NEG_INFINITY;
    for (t, y) in path {
        let bound = coth_bound(a, b, t)?;
        max_excess = max_excess.max(y / bound - 1.0);
        rows.push(OdeSample { t, y, bound });
    }
    let passed = max_excess <= slack;
    Ok(OdeComparison { samples: rows, max_excess, passed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeComparison {
    pub samples: Vec<OdeSample>,
    /// Largest `y/bound - 1` over the samples; negative when strictly below.
    pub max_excess: f64,
    pub passed: bool,
}

// ---------------------------------------------------------------------------
// face accumulators shared with the weak-form checkers

/// `sum_f A_f / d_f * (w_r - w_l)^2 * weight(f)`, the face quadrature of
/// `int |grad w|^2 phi` when `weight` evaluates `phi` at the face.
pub(crate) fn face_grad_sq<W: Fn(usize) -> f64>(grid: &Grid, w: &[f64], weight: W) -> f64 {
    kahan_sum(grid.faces.iter().enumerate().map(|(k, face)| {
        let d = w[face.right] - w[face.left];
        face.area / face.dist * d * d * weight(k)
    }))
}

/// Face quadrature of the drift-corrected gradient square
/// `int |grad w - w/(2v) grad v|^2 phi`, with arithmetic face means for both
/// `w` and `v`.
pub(crate) fn face_drift_sq<W: Fn(usize) -> f64>(
    grid: &Grid,
    w: &[f64],
    v: &[f64],
    weight: W,
) -> f64 {
    kahan_sum(grid.faces.iter().enumerate().map(|(k, face)| {
        let dw = w[face.right] - w[face.left];
        let dv = v[face.right] - v[face.left];
        let wf = 0.5 * (w[face.left] + w[face.right]);
        let vf = 0.5 * (v[face.left] + v[face.right]);
        let d = dw - wf / (2.0 * vf) * dv;
        face.area / face.dist * d * d * weight(k)
    }))
}

/// Face quadrature of `int g |grad v|^2 / v^2 phi` for a cell quantity `g`
/// (arithmetic face means for `g` and `v`). Each interior face carries the
/// slab volume `A_f d_f`.
pub(crate) fn face_slope_ratio_sq<W: Fn(usize) -> f64>(
    grid: &Grid,
    g: &[f64],
    v: &[f64],
    weight: W,
) -> f64 {
    kahan_sum(grid.faces.iter().enumerate().map(|(k, face)| {
        let dv = (v[face.right] - v[face.left]) / face.dist;
        let gf = 0.5 * (g[face.left] + g[face.right]);
        let vf = 0.5 * (v[face.left] + v[face.right]);
        face.area * face.dist * gf * dv * dv / (vf * vf) * weight(k)
    }))
}

// ---------------------------------------------------------------------------
// ledger

/// One ledger row. Columns `a1..a5` carry time integrals over `[0, t]`;
/// everything else is instantaneous at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub min_v: f64,
    pub max_u: f64,
    /// `int |grad v|^2 / v^2` at time `t`; bounded by `|Omega|` through the
    /// signal equation.
    pub grad_log_v_sq: f64,
    /// `int u^p` at time `t`.
    pub entropy_low: f64,
    /// `int_0^t int |grad u^(p/2)|^2`.
    pub a1: f64,
    /// `int_0^t int |grad u^(p/2) - u^(p/2)/(2v) grad v|^2`.
    pub a2: f64,
    /// `int_0^t int u^(p+1) / v`.
    pub a3: f64,
    /// `int_0^t int u^p |grad v|^2 / v^2`.
    pub a4: f64,
    /// `int_0^t int u^r`, zero when no admissible `r` exists.
    pub a5: f64,
}

const CSV_HEADER: &str = "t,mass_u,mass_v,min_v,max_u,grad_log_v_sq,entropy_low,A1,A2,A3,A4,A5";

/// Accumulating record of the run functionals at the sample cadence.
///
/// `record` appends the row first and then adds `dt_next` times the current
/// integrand to the running integrals, so the stored integrals are
/// left-endpoint Riemann sums over the sample times and the last row enters
/// with weight zero.
#[derive(Debug, Clone)]
pub struct FunctionalLedger {
    grid_id: u64,
    p: f64,
    r: Option<f64>,
    eps: f64,
    track_extras: bool,
    rows: Vec<LedgerRow>,
    acc: [f64; 5],
    acc_phi: f64,
    acc_up: f64,
    zero_density_cells: u64,
}

impl FunctionalLedger {
    pub fn new(grid: &Grid, params: &Params, r: Option<f64>, track_extras: bool) -> FunctionalLedger {
        FunctionalLedger {
            grid_id: grid.id(),
            p: params.p,
            r,
            eps: params.eps,
            track_extras,
            rows: Vec::new(),
            acc: [0.0; 5],
            acc_phi: 0.0,
            acc_up: 0.0,
            zero_density_cells: 0,
        }
    }

    pub fn tracked_r(&self) -> Option<f64> {
        self.r
    }

    /// Appends the row for `state` and extends the running integrals by
    /// `dt_next`, the distance to the next sample time (zero on the final
    /// sample).
    pub fn record(&mut self, grid: &Grid, state: &StateSnapshot, dt_next: f64) -> Result<()> {
        if grid.id() != self.grid_id {
            return Err(KsError::GridMismatch { field: grid.id(), grid: self.grid_id });
        }
        state.u.check_grid(grid)?;
        state.v.check_grid(grid)?;
        if !(dt_next >= 0.0) {
            return Err(KsError::InvalidParameter(format!(
                "sample spacing must be >= 0, got {dt_next}"
            )));
        }
        if let Some(last) = self.rows.last() {
            if state.t <= last.t {
                return Err(KsError::InvariantViolation(format!(
                    "ledger rows must advance in time, got {} after {}",
                    state.t, last.t
                )));
            }
        }
        let min_v = state.v.min();
        if min_v <= POSITIVITY_FLOOR {
            return Err(KsError::BelowFloor { cell: 0, value: min_v, floor: POSITIVITY_FLOOR });
        }

        let u = state.u.values();
        let v = state.v.values();
        let n = grid.cell_count();
        let mut w = vec![0.0; n];
        let mut up = vec![0.0; n];
        for i in 0..n {
            if u[i] <= 0.0 {
                self.zero_density_cells += 1;
            }
            w[i] = u[i].max(0.0).powf(0.5 * self.p);
            up[i] = w[i] * w[i];
        }

        let row = LedgerRow {
            t: state.t,
            mass_u: integrate(grid, &state.u),
            mass_v: integrate(grid, &state.v),
            min_v,
            max_u: state.u.max(),
            grad_log_v_sq: gradient_sq_over_sq(grid, &state.v, POSITIVITY_FLOOR)?,
            entropy_low: kahan_sum((0..n).map(|i| grid.cell_volumes[i] * up[i])),
            a1: self.acc[0],
            a2: self.acc[1],
            a3: self.acc[2],
            a4: self.acc[3],
            a5: self.acc[4],
        };
        self.rows.push(row);

        if dt_next > 0.0 {
            self.acc[0] += dt_next * face_grad_sq(grid, &w, |_| 1.0);
            self.acc[1] += dt_next * face_drift_sq(grid, &w, v, |_| 1.0);
            self.acc[2] += dt_next
                * kahan_sum((0..n).map(|i| grid.cell_volumes[i] * up[i] * u[i] / v[i]));
            self.acc[3] += dt_next * face_slope_ratio_sq(grid, &up, v, |_| 1.0);
            if let Some(r) = self.r {
                self.acc[4] += dt_next
                    * kahan_sum((0..n).map(|i| grid.cell_volumes[i] * u[i].max(0.0).powf(r)));
            }
            if self.track_extras {
                let mut phi_int = 0.0;
                for i in 0..n {
                    phi_int += grid.cell_volumes[i] * phi_eps(u[i].max(0.0), self.p, self.eps)?;
                }
                self.acc_phi += dt_next * phi_int;
                self.acc_up += dt_next * row.entropy_low;
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    /// Running `(int int Phi_eps(u), int int u^p)` when extras are tracked.
    pub fn extras(&self) -> Option<(f64, f64)> {
        self.track_extras.then_some((self.acc_phi, self.acc_up))
    }

    pub fn zero_density_cells(&self) -> u64 {
        self.zero_density_cells
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("write to Vec cannot fail");
        String::from_utf8(out).expect("ledger CSV is ASCII")
    }

    pub fn write_csv<W: std::io::Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "{CSV_HEADER}")?;
        for row in &self.rows {
            writeln!(
                sink,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                row.t,
                row.mass_u,
                row.mass_v,
                row.min_v,
                row.max_u,
                row.grad_log_v_sq,
                row.entropy_low,
                row.a1,
                row.a2,
                row.a3,
                row.a4,
                row.a5
            )?;
        }
        Ok(())
    }

    /// Parses a CSV produced by `write_csv`. Schema drift is an error.
    pub fn parse_csv(text: &str) -> Result<Vec<LedgerRow>> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            other => {
                return Err(KsError::SnapshotFormat(format!(
                    "unexpected ledger header: {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    KsError::SnapshotFormat(format!("ledger line {}: {e}", ln + 2))
                })?;
            if cols.len() != 12 {
                return Err(KsError::SnapshotFormat(format!(
                    "ledger line {} has {} columns, expected 12",
                    ln + 2,
                    cols.len()
                )));
            }
            rows.push(LedgerRow {
                t: cols[0],
                mass_u: cols[1],
                mass_v: cols[2],
                min_v: cols[3],
                max_u: cols[4],
                grad_log_v_sq: cols[5],
                entropy_low: cols[6],
                a1: cols[7],
                a2: cols[8],
                a3: cols[9],
                a4: cols[10],
                a5: cols[11],
            });
        }
        Ok(rows)
    }
}

/// Instantaneous `int u^p` for a bare field, shared by the sweep
/// equi-integrability statistic.
pub fn power_mass(grid: &Grid, u: &Field, q: f64) -> Result<f64> {
    u.check_grid(grid)?;
    if !(q > 0.0) {
        return Err(KsError::InvalidParameter(format!("power must be positive, got {q}")));
    }
    Ok(kahan_sum(
        u.values()
            .iter()
            .zip(&grid.cell_volumes)
            .map(|(&ui, &vol)| vol * ui.max(0.0).powf(q)),
    ))
}
