//! Time stepping for the regularized cell-density equation
//!
//! ```text
//!   u_t = div( grad u - chi * u / ((1 + eps u) v) * grad v ).
//! ```
//!
//! One step is IMEX: the chemotactic transport is advanced explicitly with
//! first-order upwinding, diffusion implicitly through a screened-Poisson
//! solve. The final update is written purely in flux form; explicit advective
//! fluxes at the old state plus diffusive fluxes evaluated on the implicit
//! solution, accumulated with one value per face. Fluxes telescope, so
//! discrete mass is conserved to rounding regardless of solver tolerance.
//!
//! Positivity comes in two pieces. The implicit diffusion matrix is an
//! M-matrix, so its inverse is nonnegative. The explicit transport stays
//! nonnegative under a step-size restriction: the mass leaving cell `i`
//! within one step is at most `dt * u_i * sum_out A_f |w_f| / (1 + eps u_i)`,
//! so capping `dt` by `vol_i` over that outflow rate (damped by the advected
//! capacity `u/(1+eps u)`, which saturates at `1/eps`) keeps every cell
//! nonnegative. Residual-level undershoots are clamped with mass repair;
//! anything larger aborts.

use serde::{Deserialize, Serialize};

use crate::elliptic::{assemble_helmholtz, solve_v, EllipticOperator};
use crate::error::{KsError, Result};
use crate::geometry::{kahan_sum, FaceMean, Field, Grid};
use crate::tolerances::{STEP_SOLVE_TOL, UNDERSHOOT_CLAMP};

/// Model and stepping parameters for one run.
///
/// `p in (0, 1)` is the exponent whose powers `u^p` the estimate machinery
/// tracks; admissibility requires `chi * p < 1`. `chi = 0` is allowed and
/// degenerates to pure diffusion, which the verification suite leans on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub chi: f64,
    pub eps: f64,
    pub p: f64,
    pub n_eff: u32,
    pub t_end: f64,
    pub dt_max: f64,
    pub cfl_safety: f64,
}

impl Params {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        chi: f64,
        eps: f64,
        p: f64,
        n_eff: u32,
        t_end: f64,
        dt_max: f64,
        cfl_safety: f64,
    ) -> Result<Params> {
        let params = Params { chi, eps, p, n_eff, t_end, dt_max, cfl_safety };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KsError::InvalidParameter(msg));
        if !self.chi.is_finite() || self.chi < 0.0 {
            return bad(format!("chi must be finite and nonnegative, got {}", self.chi));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p must lie in (0, 1), got {}", self.p));
        }
        if self.chi * self.p >= 1.0 {
            return bad(format!(
                "need chi < 1/p for the estimate machinery, got chi = {}, p = {}",
                self.chi, self.p
            ));
        }
        if self.n_eff < 2 {
            return bad(format!("effective dimension must be >= 2, got {}", self.n_eff));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.t_end));
        }
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return bad(format!("dt_max must be positive, got {}", self.dt_max));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return bad(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety));
        }
        Ok(())
    }

    /// Largest chi admitted in the global-existence regime: `n/(n-2)` for
    /// `n >= 3`, unbounded in two dimensions.
    pub fn subcritical_limit(n_eff: u32) -> f64 {
        if n_eff <= 2 {
            f64::INFINITY
        } else {
            n_eff as f64 / (n_eff as f64 - 2.0)
        }
    }

    pub fn is_subcritical(&self) -> bool {
        self.chi < Params::subcritical_limit(self.n_eff)
    }
}

/// Picks the tracking exponent for a given sensitivity.
///
/// For `n_eff >= 3` the reciprocal `1/p` is placed at the midpoint of the
/// admissible window `(chi, n/(n-2))`; the window is empty at or beyond the
/// critical sensitivity and that is a hard error. In two dimensions the
/// window is unbounded and gets truncated to `(chi, 2 chi)`, whose midpoint
/// gives `p = 2/(3 chi)`, capped below one for small chi.
pub fn select_p(chi: f64, n_eff: u32) -> Result<f64> {
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(KsError::InvalidParameter(format!(
            "automatic exponent selection needs chi > 0, got {chi}"
        )));
    }
    if n_eff < 2 {
        return Err(KsError::InvalidParameter(format!(
            "effective dimension must be >= 2, got {n_eff}"
        )));
    }
    if n_eff >= 3 {
        let limit = Params::subcritical_limit(n_eff);
        if chi >= limit {
            return Err(KsError::SupercriticalChi(format!(
                "chi = {chi} is at or above the critical value n/(n-2) = {limit} for n = {n_eff}; \
                 no admissible exponent exists"
            )));
        }
        Ok(2.0 / (chi + limit))
    } else {
        Ok((2.0 / (3.0 * chi)).min(0.9))
    }
}

/// State at one time level: nonnegative density and positive signal.
#[derive(Debug, Clone)]
pub struct StateSnapshot {
    pub t: f64,
    pub step_index: u64,
    pub u: Field,
    pub v: Field,
}

/// Per-step knobs that are not model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub v_face: FaceMean,
    pub elliptic_tol: f64,
    /// Negative-control fixture: reverses the advective flux while every
    /// checker still assumes the forward sign. Only verification suites set
    /// this.
    pub flip_advection: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            v_face: FaceMean::Arithmetic,
            elliptic_tol: crate::tolerances::ELLIPTIC_TOL_DEFAULT,
            flip_advection: false,
        }
    }
}

pub struct StepResult {
    pub state: StateSnapshot,
    pub dt: f64,
    pub clamped_cells: usize,
    pub signal_iterations: usize,
}

struct AdvTransport {
    /// Total advective flux per interior face, oriented left -> right.
    flux: Vec<f64>,
    /// Largest positivity-preserving step; infinite without transport.
    dt_limit: f64,
}

fn advective_transport(
    grid: &Grid,
    u: &[f64],
    v: &[f64],
    chi: f64,
    eps: f64,
    mode: FaceMean,
    flip: bool,
) -> AdvTransport {
    let n = grid.cell_count();
    let mut flux = vec![0.0; grid.faces.len()];
    if chi == 0.0 {
        return AdvTransport { flux, dt_limit: f64::INFINITY };
    }
    let mut outflow = vec![0.0; n];
    for (k, face) in grid.faces.iter().enumerate() {
        let v_f = mode.apply(v[face.left], v[face.right]);
        let mut w = chi * (v[face.right] - v[face.left]) / (face.dist * v_f);
        if flip {
            w = -w;
        }
        let up = if w > 0.0 { face.left } else { face.right };
        flux[k] = face.area * w * u[up] / (1.0 + eps * u[up]);
        outflow[up] += face.area * w.abs() / (1.0 + eps * u[up]);
    }
    let mut dt_limit = f64::INFINITY;
    for i in 0..n {
        if outflow[i] > 0.0 {
            dt_limit = dt_limit.min(grid.cell_volumes[i] / outflow[i]);
        }
    }
    AdvTransport { flux, dt_limit }
}

/// Full face fluxes of the density equation at a frozen state: two-point
/// diffusive flux plus upwinded chemotactic transport. Oriented left ->
/// right per interior face; boundary fluxes are identically zero and not
/// represented.
pub fn chemotactic_flux(
    grid: &Grid,
    u: &Field,
    v: &Field,
    chi: f64,
    eps: f64,
    mode: FaceMean,
) -> Result<Vec<f64>> {
    u.check_grid(grid)?;
    v.check_grid(grid)?;
    if v.min() <= 0.0 {
        return Err(KsError::InvalidParameter(format!(
            "signal must be strictly positive for the logarithmic drift, min v = {:.3e}",
            v.min()
        )));
    }
    let adv = advective_transport(grid, u.values(), v.values(), chi, eps, mode, false);
    let uv = u.values();
    let mut flux = adv.flux;
    for (k, face) in grid.faces.iter().enumerate() {
        flux[k] -= face.area * (uv[face.right] - uv[face.left]) / face.dist;
    }
    Ok(flux)
}

/// Clamps residual-level undershoots to zero and repairs the added mass by
/// scaling the positive cells down proportionally. Undershoots at or below
/// the hard threshold abort.
pub(crate) fn enforce_positivity(values: &mut [f64]) -> Result<usize> {
    let mut deficit = 0.0;
    let mut clamped = 0usize;
    for (i, x) in values.iter_mut().enumerate() {
        if *x < 0.0 {
            if *x <= -UNDERSHOOT_CLAMP {
                return Err(KsError::PositivityViolation(format!(
                    "cell {i} undershot to {x:.3e}, below the clamp window"
                )));
            }
            deficit += -*x;
            *x = 0.0;
            clamped += 1;
        }
    }
    if clamped > 0 && deficit > 0.0 {
        let positive: f64 = kahan_sum(values.iter().copied().filter(|&v| v > 0.0));
        if positive > 0.0 {
            let scale = 1.0 - deficit / positive;
            for x in values.iter_mut() {
                if *x > 0.0 {
                    *x *= scale;
                }
            }
        }
    }
    Ok(clamped)
}

/// Advances one IMEX step, capped by `dt_cap` so callers can land exactly on
/// output times. `signal_op` is the assembled `alpha = 1` operator for the
/// post-step signal solve.
pub fn advance(
    grid: &Grid,
    signal_op: &EllipticOperator,
    state: &StateSnapshot,
    params: &Params,
    ctrl: &StepControl,
    dt_cap: f64,
) -> Result<StepResult> {
    state.u.check_grid(grid)?;
    state.v.check_grid(grid)?;
    if !(dt_cap > 0.0) {
        return Err(KsError::InvalidParameter(format!("step cap {dt_cap} must be positive")));
    }
    if params.chi != 0.0 && state.v.min() <= 0.0 {
        return Err(KsError::InvalidParameter(format!(
            "signal lost positivity before the step: min v = {:.3e}",
            state.v.min()
        )));
    }
    let n = grid.cell_count();
    let u = state.u.values();
    let adv = advective_transport(
        grid,
        u,
        state.v.values(),
        params.chi,
        params.eps,
        ctrl.v_face,
        ctrl.flip_advection,
    );
    let dt = dt_cap.min(params.dt_max).min(params.cfl_safety * adv.dt_limit);

    let mut div = vec![0.0; n];
    for (face, &f) in grid.faces.iter().zip(&adv.flux) {
        div[face.left] += f;
        div[face.right] -= f;
    }
    let mut u_star = vec![0.0; n];
    for i in 0..n {
        u_star[i] = u[i] - dt * div[i] / grid.cell_volumes[i];
    }
    let u_star = Field::from_values(grid, u_star)?;

    let op_dt = assemble_helmholtz(grid, dt);
    let (w, _) = op_dt.solve(grid, &u_star, STEP_SOLVE_TOL)?;

    let wv = w.values();
    let mut div_d = vec![0.0; n];
    for face in &grid.faces {
        let f = -face.area * (wv[face.right] - wv[face.left]) / face.dist;
        div_d[face.left] += f;
        div_d[face.right] -= f;
    }
    let mut u_new = u_star.into_values();
    for i in 0..n {
        u_new[i] -= dt * div_d[i] / grid.cell_volumes[i];
    }
    let clamped_cells = enforce_positivity(&mut u_new)?;
    let u_new = Field::from_values(grid, u_new)?;
    let v_new = solve_v(signal_op, grid, &u_new, ctrl.elliptic_tol)?;
    Ok(StepResult {
        state: StateSnapshot {
            t: state.t + dt,
            step_index: state.step_index + 1,
            u: u_new,
            v: v_new,
        },
        dt,
        clamped_cells,
        signal_iterations: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlowupStatus {
    Stable,
    Growing,
    Ceiling,
}

/// Classifies a window of `(t, max u)` samples. `Ceiling` wins over the
/// log-slope test; with fewer than two samples there is nothing to measure
/// and the answer is `Stable`.
pub fn detect_blowup(window: &[(f64, f64)], ceiling: f64, slope_threshold: f64) -> BlowupStatus {
    if window.iter().any(|&(_, m)| m >= ceiling) {
        return BlowupStatus::Ceiling;
    }
    if window.len() < 2 {
        return BlowupStatus::Stable;
    }
    let (t0, m0) = window[0];
    let (t1, m1) = window[window.len() - 1];
    if t1 <= t0 || m0 <= 0.0 || m1 <= 0.0 {
        return BlowupStatus::Stable;
    }
    let slope = (m1.ln() - m0.ln()) / (t1 - t0);
    if slope > slope_threshold {
        BlowupStatus::Growing
    } else {
        BlowupStatus::Stable
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::assemble;
    use crate::geometry::{build_grid, integrate, Domain};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn interval(n: usize) -> Grid {
        build_grid(&Domain::Interval { a: 0.0, b: PI }, &[n]).unwrap()
    }

    fn params(chi: f64, eps: f64) -> Params {
        Params::new(chi, eps, 0.5, 2, 1.0, 1e-2, 0.9).unwrap()
    }

    #[test]
    fn parameter_gates() {
        assert!(Params::new(0.8, 0.1, 0.5, 2, 1.0, 1e-2, 0.9).is_ok());
        assert!(Params::new(-1.0, 0.1, 0.5, 2, 1.0, 1e-2, 0.9).is_err());
        assert!(Params::new(0.8, 0.0, 0.5, 2, 1.0, 1e-2, 0.9).is_err());
        assert!(Params::new(0.8, 1.0, 0.5, 2, 1.0, 1e-2, 0.9).is_err());
        assert!(Params::new(3.0, 0.1, 0.5, 2, 1.0, 1e-2, 0.9).is_err(), "chi p >= 1");
        assert!(Params::new(0.8, 0.1, 0.5, 1, 1.0, 1e-2, 0.9).is_err());
        assert!(Params::new(0.8, 0.1, 0.5, 2, 1.0, 1e-2, 1.5).is_err());
        let p = Params::new(7.0, 0.1, 0.1, 3, 1.0, 1e-2, 0.9).unwrap();
        assert!(!p.is_subcritical());
        let p = Params::new(2.0, 0.1, 0.4, 3, 1.0, 1e-2, 0.9).unwrap();
        assert!(p.is_subcritical());
    }

    #[test]
    fn exponent_selection() {
        // 1/p at the midpoint of (chi, n/(n-2)): chi = 2, n = 3 gives
        // 1/p = 2.5, p = 0.4.
        assert_relative_eq!(select_p(2.0, 3).unwrap(), 0.4, max_relative = 1e-14);
        // Two dimensions truncate to (chi, 2 chi): p = 2/(3 chi).
        assert_relative_eq!(select_p(5.0, 2).unwrap(), 2.0 / 15.0, max_relative = 1e-14);
        // Small chi caps below one.
        assert_relative_eq!(select_p(0.1, 2).unwrap(), 0.9, max_relative = 1e-14);
        // At or past the critical value the window is empty.
        assert!(matches!(select_p(3.0, 3), Err(KsError::SupercriticalChi(_))));
        assert!(matches!(select_p(4.0, 3), Err(KsError::SupercriticalChi(_))));
        assert!(select_p(0.0, 2).is_err());
        // chi p < 1 holds on the selected exponent.
        for (chi, n) in [(0.5, 3), (1.4, 3), (2.9, 3), (0.3, 2), (8.0, 2), (1.2, 4)] {
            let p = select_p(chi, n).unwrap();
            assert!(p > 0.0 && p < 1.0 && chi * p < 1.0, "chi {chi} n {n} p {p}");
        }
    }

    #[test]
    fn flux_vanishes_for_constant_state() {
        let grid = interval(32);
        let u = Field::constant(&grid, 2.0);
        let v = Field::constant(&grid, 2.0);
        let flux = chemotactic_flux(&grid, &u, &v, 0.8, 0.1, FaceMean::Arithmetic).unwrap();
        assert!(flux.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn flux_reduces_to_diffusion_without_chi() {
        let grid = interval(32);
        let u = Field::new(&grid, |x| 1.0 + 0.5 * x[0].cos());
        let v = Field::new(&grid, |x| 1.0 + 0.1 * x[0].sin());
        let flux = chemotactic_flux(&grid, &u, &v, 0.0, 0.1, FaceMean::Arithmetic).unwrap();
        let uv = u.values();
        for (k, face) in grid.faces.iter().enumerate() {
            let diff = -face.area * (uv[face.right] - uv[face.left]) / face.dist;
            assert_relative_eq!(flux[k], diff, max_relative = 1e-14, epsilon = 1e-15);
        }
    }

    #[test]
    fn advective_part_capped_by_inverse_eps() {
        // Constant u kills the diffusive part, leaving the pure drift flux
        // A w u/(1+eps u), whose magnitude stays below A |w| / eps.
        let grid = interval(32);
        let c = 1.5;
        let u = Field::constant(&grid, c);
        let v = Field::new(&grid, |x| 2.0 + 0.5 * x[0].sin());
        let eps = 1e9;
        let flux = chemotactic_flux(&grid, &u, &v, 0.8, eps, FaceMean::Arithmetic).unwrap();
        for (k, face) in grid.faces.iter().enumerate() {
            let vf = 0.5 * (v.values()[face.left] + v.values()[face.right]);
            let grad_v = (v.values()[face.right] - v.values()[face.left]) / face.dist;
            let w = 0.8 * grad_v / vf;
            assert!(flux[k].abs() <= face.area * w.abs() / eps * (1.0 + 1e-12));
            assert_relative_eq!(
                flux[k],
                face.area * w * c / (1.0 + eps * c),
                max_relative = 1e-13,
                epsilon = 1e-300
            );
        }
    }

    #[test]
    fn flux_requires_positive_signal() {
        let grid = interval(16);
        let u = Field::constant(&grid, 1.0);
        let v = Field::new(&grid, |x| x[0].cos());
        assert!(chemotactic_flux(&grid, &u, &v, 0.8, 0.1, FaceMean::Arithmetic).is_err());
    }

    #[test]
    fn homogeneous_state_is_stationary() {
        let grid = interval(32);
        let op = assemble(&grid);
        let pr = params(0.8, 0.1);
        let ctrl = StepControl::default();
        let u0 = Field::constant(&grid, 1.5);
        let v0 = solve_v(&op, &grid, &u0, ctrl.elliptic_tol).unwrap();
        let mut state = StateSnapshot { t: 0.0, step_index: 0, u: u0, v: v0 };
        for _ in 0..100 {
            state = advance(&grid, &op, &state, &pr, &ctrl, 1e-2).unwrap().state;
        }
        for &x in state.u.values() {
            assert_relative_eq!(x, 1.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn pure_diffusion_decays_the_cosine_mode() {
        // chi = 0 turns the scheme into implicit-Euler heat flow; against
        // u = 1 + 0.5 e^{-t} cos x the error is O(h^2 + dt).
        let grid = interval(64);
        let op = assemble(&grid);
        let pr = Params::new(0.0, 0.1, 0.5, 2, 0.25, 1e-3, 0.9).unwrap();
        let ctrl = StepControl::default();
        let u0 = Field::new(&grid, |x| 1.0 + 0.5 * x[0].cos());
        let v0 = solve_v(&op, &grid, &u0, ctrl.elliptic_tol).unwrap();
        let mut state = StateSnapshot { t: 0.0, step_index: 0, u: u0, v: v0 };
        while state.t < pr.t_end - 1e-12 {
            state = advance(&grid, &op, &state, &pr, &ctrl, pr.t_end - state.t).unwrap().state;
        }
        let decay = (-pr.t_end).exp();
        let mut num = 0.0;
        let mut den = 0.0;
        for (&ui, (&x, &vol)) in state
            .u
            .values()
            .iter()
            .zip(grid.cell_centers.iter().map(|c| &c[0]).zip(&grid.cell_volumes))
        {
            let exact = 1.0 + 0.5 * decay * x.cos();
            num += vol * (ui - exact) * (ui - exact);
            den += vol * exact * exact;
        }
        let rel_l2 = (num / den).sqrt();
        let budget = grid.h * grid.h + 1e-3;
        assert!(rel_l2 <= budget, "relative L2 error {rel_l2:.3e} vs budget {budget:.3e}");
    }

    #[test]
    fn mass_is_conserved_to_rounding() {
        let grid = interval(64);
        let op = assemble(&grid);
        let pr = params(0.8, 0.05);
        let ctrl = StepControl::default();
        let u0 = Field::new(&grid, |x| 0.3 + 2.0 * (-(x[0] - 1.5).powi(2) / 0.16).exp());
        let mass0 = integrate(&grid, &u0);
        let v0 = solve_v(&op, &grid, &u0, ctrl.elliptic_tol).unwrap();
        let mut state = StateSnapshot { t: 0.0, step_index: 0, u: u0, v: v0 };
        for k in 1..=1000u64 {
            state = advance(&grid, &op, &state, &pr, &ctrl, f64::INFINITY.min(1e-2)).unwrap().state;
            let drift = (integrate(&grid, &state.u) - mass0).abs() / mass0;
            assert!(
                drift <= 1e-12 * (1.0 + k as f64 * 1e-4),
                "step {k}: relative drift {drift:.3e}"
            );
        }
        assert!(state.u.min() >= 0.0);
    }

    #[test]
    fn transport_respects_positivity_near_vacuum() {
        let grid = interval(48);
        let op = assemble(&grid);
        let pr = params(0.9, 0.02);
        let ctrl = StepControl::default();
        let u0 = Field::new(&grid, |x| 1e-6 + 3.0 * (-(x[0] - 1.2).powi(2) / 0.04).exp());
        let v0 = solve_v(&op, &grid, &u0, ctrl.elliptic_tol).unwrap();
        let mut state = StateSnapshot { t: 0.0, step_index: 0, u: u0, v: v0 };
        for _ in 0..500 {
            state = advance(&grid, &op, &state, &pr, &ctrl, 5e-3).unwrap().state;
            assert!(state.u.min() >= 0.0);
            assert!(state.v.min() > 0.0);
        }
    }

    #[test]
    fn undershoot_policy() {
        let mut ok = vec![1.0, -5e-14, 2.0];
        let before: f64 = ok.iter().sum();
        let clamped = enforce_positivity(&mut ok).unwrap();
        assert_eq!(clamped, 1);
        assert!(ok.iter().all(|&v| v >= 0.0));
        assert_relative_eq!(ok.iter().sum::<f64>(), before, max_relative = 1e-13);

        let mut bad = vec![1.0, -2e-13, 2.0];
        assert!(matches!(
            enforce_positivity(&mut bad),
            Err(KsError::PositivityViolation(_))
        ));
    }

    #[test]
    fn blowup_classification() {
        let flat: Vec<(f64, f64)> = (0..20).map(|k| (k as f64 * 0.1, 1.5)).collect();
        assert_eq!(detect_blowup(&flat, 1e6, 1.0), BlowupStatus::Stable);
        let growing: Vec<(f64, f64)> = (0..20).map(|k| {
            let t = k as f64 * 0.1;
            (t, (5.0 * t).exp())
        }).collect();
        assert_eq!(detect_blowup(&growing, 1e6, 1.0), BlowupStatus::Growing);
        let ceiling = vec![(0.0, 1.0), (0.1, 2e6)];
        assert_eq!(detect_blowup(&ceiling, 1e6, 1.0), BlowupStatus::Ceiling);
        assert_eq!(detect_blowup(&[(0.0, 1.0)], 1e6, 1.0), BlowupStatus::Stable);
    }

    #[test]
    fn cfl_cap_shrinks_steps_when_drift_strengthens() {
        let grid = interval(48);
        let op = assemble(&grid);
        let ctrl = StepControl::default();
        let u0 = Field::new(&grid, |x| 0.1 + 8.0 * (-(x[0] - 1.5).powi(2) / 0.01).exp());
        let v0 = solve_v(&op, &grid, &u0, ctrl.elliptic_tol).unwrap();
        let state = StateSnapshot { t: 0.0, step_index: 0, u: u0, v: v0 };
        let weak = Params::new(0.2, 0.1, 0.5, 2, 1.0, 1.0, 0.9).unwrap();
        let strong = Params::new(1.8, 0.1, 0.5, 2, 1.0, 1.0, 0.9).unwrap();
        let dt_weak = advance(&grid, &op, &state, &weak, &ctrl, 1.0).unwrap().dt;
        let dt_strong = advance(&grid, &op, &state, &strong, &ctrl, 1.0).unwrap().dt;
        assert!(dt_strong < dt_weak);
    }
}
