//! Screened Poisson solves for the signal equation `0 = lap v - v + u`.
//!
//! The discrete operator is `I - alpha * lap_h` with the conservative
//! two-point Laplacian from [`crate::geometry`]; `alpha = 1` recovers the
//! signal equation and `alpha = dt` is reused by the implicit diffusion step.
//! In volume-weighted form the matrix is symmetric positive definite and an
//! M-matrix: positive diagonal, nonpositive off-diagonals, weak diagonal
//! dominance with strict dominance in every row through the identity part.
//! Two consequences are load-bearing for the whole crate and are asserted in
//! tests rather than re-derived at runtime:
//!
//! * maximum principle: nonnegative right-hand sides give nonnegative
//!   solutions, and a positive total mass forces a strictly positive minimum;
//! * mass transfer: summing the volume-weighted equations telescopes the
//!   fluxes, so the discrete integral of the solution equals the discrete
//!   integral of the data up to solver tolerance.
//!
//! Chain grids (intervals, radial balls) produce tridiagonal systems and are
//! solved directly; rectangles fall back to Jacobi-preconditioned conjugate
//! gradients on the volume-weighted form.

use crate::error::{KsError, Result};
use crate::geometry::{integrate, kahan_sum, Field, Grid};

/// Assembled `I - alpha * lap_h` on a fixed grid.
///
/// Stores the volume-weighted symmetric form: `diag[i] = vol_i + alpha *
/// sum_f A_f / d_f` plus one coefficient `alpha * A_f / d_f` per interior
/// face. Constants are fixed points of the unweighted operator for
/// `alpha`-independent reasons: face differences of a constant vanish.
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    grid_id: u64,
    alpha: f64,
    /// Volume-weighted diagonal.
    diag: Vec<f64>,
    /// `alpha * area / dist` per interior face, aligned with `grid.faces`.
    face_coeff: Vec<f64>,
    chain: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Assembles the signal operator `I - lap_h`.
pub fn assemble(grid: &Grid) -> EllipticOperator {
    assemble_helmholtz(grid, 1.0)
}

/// Assembles `I - alpha * lap_h` for `alpha > 0`.
pub fn assemble_helmholtz(grid: &Grid, alpha: f64) -> EllipticOperator {
    assert!(alpha > 0.0 && alpha.is_finite(), "alpha must be positive");
    let mut diag = grid.cell_volumes.clone();
    let mut face_coeff = Vec::with_capacity(grid.faces.len());
    for face in &grid.faces {
        let c = alpha * face.area / face.dist;
        face_coeff.push(c);
        diag[face.left] += c;
        diag[face.right] += c;
    }
    EllipticOperator { grid_id: grid.id(), alpha, diag, face_coeff, chain: grid.is_chain() }
}

impl EllipticOperator {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.grid_id != grid.id() {
            return Err(KsError::GridMismatch { field: self.grid_id, grid: grid.id() });
        }
        Ok(())
    }

    /// Applies the unweighted operator: `x - alpha * lap_h x`.
    pub fn apply(&self, grid: &Grid, x: &Field) -> Result<Field> {
        self.check_grid(grid)?;
        x.check_grid(grid)?;
        let w = self.apply_weighted(grid, x.values());
        let vals = w
            .into_iter()
            .zip(&grid.cell_volumes)
            .map(|(y, &vol)| y / vol)
            .collect();
        Field::from_values(grid, vals)
    }

    /// Volume-weighted matvec; the SPD form CG iterates on.
    fn apply_weighted(&self, grid: &Grid, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x
            .iter()
            .zip(&grid.cell_volumes)
            .map(|(&xi, &vol)| vol * xi)
            .collect();
        for (face, &c) in grid.faces.iter().zip(&self.face_coeff) {
            let flux = c * (x[face.right] - x[face.left]);
            out[face.left] -= flux;
            out[face.right] += flux;
        }
        out
    }

    /// Solves `(I - alpha lap_h) x = rhs` to the requested relative residual,
    /// measured in the volume-weighted L2 norm against `||rhs||`.
    pub fn solve(&self, grid: &Grid, rhs: &Field, tol: f64) -> Result<(Field, SolveStats)> {
        self.solve_with_limit(grid, rhs, tol, 40 * grid.cell_count() + 200)
    }

    pub(crate) fn solve_with_limit(
        &self,
        grid: &Grid,
        rhs: &Field,
        tol: f64,
        max_iter: usize,
    ) -> Result<(Field, SolveStats)> {
        self.check_grid(grid)?;
        rhs.check_grid(grid)?;
        let (x, iterations) = if self.chain {
            (self.solve_tridiagonal(grid, rhs.values()), 0)
        } else {
            self.solve_pcg(grid, rhs.values(), tol, max_iter)?
        };
        let rel = self.rel_residual(grid, &x, rhs.values());
        let stats = SolveStats { iterations, rel_residual: rel };
        if !rel.is_finite() || rel > tol {
            return Err(KsError::SolveFailed(format!(
                "relative residual {rel:.3e} above tolerance {tol:.1e} after {} iterations",
                stats.iterations
            )));
        }
        Ok((Field::from_values(grid, x)?, stats))
    }

    fn rel_residual(&self, grid: &Grid, x: &[f64], rhs: &[f64]) -> f64 {
        let ax = self.apply_weighted(grid, x);
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&axi, &bi), &vol) in ax.iter().zip(rhs).zip(&grid.cell_volumes) {
            let r = axi / vol - bi;
            num += vol * r * r;
            den += vol * bi * bi;
        }
        if den == 0.0 {
            return if num == 0.0 { 0.0 } else { f64::INFINITY };
        }
        (num / den).sqrt()
    }

    /// Thomas elimination on the volume-weighted tridiagonal system. The
    /// matrix is an irreducibly diagonally dominant M-matrix, so elimination
    /// without pivoting is stable.
    fn solve_tridiagonal(&self, grid: &Grid, rhs: &[f64]) -> Vec<f64> {
        let n = grid.cell_count();
        debug_assert_eq!(self.face_coeff.len(), n - 1);
        let b: Vec<f64> = rhs
            .iter()
            .zip(&grid.cell_volumes)
            .map(|(&r, &vol)| vol * r)
            .collect();
        // Off-diagonal between i and i+1 is -face_coeff[i].
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        let mut denom = self.diag[0];
        cp[0] = -self.face_coeff[0] / denom;
        dp[0] = b[0] / denom;
        for i in 1..n {
            let off = -self.face_coeff[i - 1];
            denom = self.diag[i] - off * cp[i - 1];
            cp[i] = if i < n - 1 { -self.face_coeff[i] / denom } else { 0.0 };
            dp[i] = (b[i] - off * dp[i - 1]) / denom;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        x
    }

    fn solve_pcg(
        &self,
        grid: &Grid,
        rhs: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<(Vec<f64>, usize)> {
        let n = grid.cell_count();
        let b: Vec<f64> = rhs
            .iter()
            .zip(&grid.cell_volumes)
            .map(|(&r, &vol)| vol * r)
            .collect();
        let bnorm = kahan_sum(b.iter().map(|&v| v * v)).sqrt();
        if bnorm == 0.0 {
            return Ok((vec![0.0; n], 0));
        }
        // Ask CG for a bit more than the caller's tolerance; the final check
        // upstairs is on the unweighted residual.
        let target = 0.05 * tol * bnorm;
        let mut x = vec![0.0; n];
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(&ri, &d)| ri / d).collect();
        let mut p = z.clone();
        let mut rz = kahan_sum(r.iter().zip(&z).map(|(&a, &b)| a * b));
        for it in 0..max_iter {
            let rnorm = kahan_sum(r.iter().map(|&v| v * v)).sqrt();
            if rnorm <= target {
                return Ok((x, it));
            }
            let ap = self.apply_weighted(grid, &p);
            let pap = kahan_sum(p.iter().zip(&ap).map(|(&a, &b)| a * b));
            if pap <= 0.0 {
                return Err(KsError::SolveFailed(format!(
                    "conjugate gradients lost positive definiteness (p'Ap = {pap:.3e})"
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] / self.diag[i];
            }
            let rz_new = kahan_sum(r.iter().zip(&z).map(|(&a, &b)| a * b));
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rel = kahan_sum(r.iter().map(|&v| v * v)).sqrt() / bnorm;
        Err(KsError::SolveFailed(format!(
            "conjugate gradients did not reach {tol:.1e} within {max_iter} iterations \
             (weighted residual {rel:.3e})"
        )))
    }
}

/// Solves the signal equation `(I - lap_h) v = u` for nonnegative data.
///
/// Checks `tol` against the accepted range, refuses negative data, and
/// verifies the residual after the solve; non-convergence is a hard error
/// carrying the residual, never a silent degradation.
pub fn solve_v(op: &EllipticOperator, grid: &Grid, u: &Field, tol: f64) -> Result<Field> {
    if !(tol > 1e-14 && tol < 1e-6) {
        return Err(KsError::InvalidParameter(format!(
            "elliptic tolerance {tol:.3e} outside (1e-14, 1e-6)"
        )));
    }
    if (op.alpha() - 1.0).abs() > 1e-15 {
        return Err(KsError::InvalidParameter(format!(
            "signal solve needs the alpha = 1 operator, got alpha = {}",
            op.alpha()
        )));
    }
    u.check_grid(grid)?;
    if let Some((cell, &value)) = u.values().iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(KsError::InvalidParameter(format!(
            "signal data must be nonnegative, cell {cell} holds {value:.3e}"
        )));
    }
    let (v, _stats) = op.solve(grid, u, tol)?;
    Ok(v)
}

/// Minimum cell value of the signal. Returned as-is even when nonpositive;
/// callers decide whether that violates their invariants.
pub fn min_v(v: &Field) -> f64 {
    v.min()
}

/// Discrete mass transfer defect `|int v - int u|`.
pub fn mass_transfer_defect(grid: &Grid, u: &Field, v: &Field) -> f64 {
    (integrate(grid, v) - integrate(grid, u)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, gradient_sq_over_sq, Domain, Field};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn interval(n: usize) -> Grid {
        build_grid(&Domain::Interval { a: 0.0, b: PI }, &[n]).unwrap()
    }

    #[test]
    fn constants_are_fixed_points() {
        for grid in [
            interval(16),
            build_grid(&Domain::RadialBall { radius: 1.0, dim: 3 }, &[16]).unwrap(),
            build_grid(&Domain::Rectangle { ax: 0.0, bx: 1.0, ay: 0.0, by: 2.0 }, &[8, 6]).unwrap(),
        ] {
            let op = assemble(&grid);
            let c = Field::constant(&grid, 3.25);
            let out = op.apply(&grid, &c).unwrap();
            for &v in out.values() {
                assert_relative_eq!(v, 3.25, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn interval_stencil_matches_hand_assembly() {
        // Rows of the unweighted operator on a uniform interval grid:
        // 1 + 2/h^2 on the interior diagonal, -1/h^2 off-diagonal, and
        // 1 + 1/h^2 in the zero-flux boundary rows.
        let n = 8;
        let grid = interval(n);
        let h = grid.h;
        let op = assemble(&grid);
        let mut rows = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = op.apply(&grid, &Field::from_values(&grid, e).unwrap()).unwrap();
            for i in 0..n {
                rows[i][j] = col.values()[i];
            }
        }
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j {
                    let neighbors = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
                    1.0 + neighbors / (h * h)
                } else if i.abs_diff(j) == 1 {
                    -1.0 / (h * h)
                } else {
                    0.0
                };
                assert_relative_eq!(rows[i][j], expect, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn manufactured_solution_second_order() {
        // (I - lap)(2 + cos x) = 2 + 2 cos x on (0, pi) with zero flux.
        let mut errs = Vec::new();
        for n in [16, 32, 64, 128] {
            let grid = interval(n);
            let op = assemble(&grid);
            let u = Field::new(&grid, |x| 2.0 + 2.0 * x[0].cos());
            let v = solve_v(&op, &grid, &u, 1e-12).unwrap();
            let err = v
                .values()
                .iter()
                .zip(grid.cell_centers.iter())
                .map(|(&vi, &x)| (vi - (2.0 + x[0].cos())).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        for pair in errs.windows(2) {
            assert!(pair[0] / pair[1] > 3.5, "errors {errs:?}");
        }
    }

    #[test]
    fn manufactured_solution_2d() {
        let dom = Domain::Rectangle { ax: 0.0, bx: PI, ay: 0.0, by: PI };
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let grid = build_grid(&dom, &[n, n]).unwrap();
            let op = assemble(&grid);
            // (I - lap)(3 + cos x cos y) = 3 + 3 cos x cos y, nonnegative data.
            let u = Field::new(&grid, |x| 3.0 + 3.0 * x[0].cos() * x[1].cos());
            let v = solve_v(&op, &grid, &u, 1e-11).unwrap();
            let err = v
                .values()
                .iter()
                .zip(grid.cell_centers.iter())
                .map(|(&vi, &x)| (vi - (3.0 + x[0].cos() * x[1].cos())).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        for pair in errs.windows(2) {
            assert!(pair[0] / pair[1] > 3.5, "errors {errs:?}");
        }
    }

    #[test]
    fn tolerance_range_is_enforced() {
        let grid = interval(8);
        let op = assemble(&grid);
        let u = Field::constant(&grid, 1.0);
        assert!(solve_v(&op, &grid, &u, 1e-15).is_err());
        assert!(solve_v(&op, &grid, &u, 1e-5).is_err());
        assert!(solve_v(&op, &grid, &u, 1e-10).is_ok());
    }

    #[test]
    fn negative_data_is_rejected() {
        let grid = interval(8);
        let op = assemble(&grid);
        let u = Field::new(&grid, |x| x[0].cos());
        assert!(solve_v(&op, &grid, &u, 1e-10).is_err());
    }

    #[test]
    fn cg_iteration_cap_is_a_hard_error() {
        let grid = build_grid(&Domain::Rectangle { ax: 0.0, bx: 1.0, ay: 0.0, by: 1.0 }, &[12, 12]).unwrap();
        let op = assemble(&grid);
        let u = Field::new(&grid, |x| 1.0 + (3.0 * x[0]).sin().powi(2) + x[1]);
        let err = op.solve_with_limit(&grid, &u, 1e-12, 2).unwrap_err();
        match err {
            KsError::SolveFailed(msg) => assert!(msg.contains("residual"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn signal_l_q_stays_bounded_under_concentration() {
        // Family of spikes with fixed mass on a 3d ball; int v^q for q = 2
        // (below the critical exponent 3) must stay bounded as the spike
        // narrows, mirroring the compactness the limit passage leans on.
        let grid = build_grid(&Domain::RadialBall { radius: 1.0, dim: 3 }, &[128]).unwrap();
        let op = assemble(&grid);
        let q = 2.0;
        let mut values = Vec::new();
        for sigma in [0.2, 0.1, 0.05, 0.025] {
            let raw = Field::new(&grid, |x| (-(x[0] / sigma).powi(2)).exp());
            let mass = integrate(&grid, &raw);
            let u = raw.map(|v| v / mass);
            assert_relative_eq!(integrate(&grid, &u), 1.0, max_relative = 1e-12);
            let v = solve_v(&op, &grid, &u, 1e-11).unwrap();
            values.push(integrate(&grid, &v.map(|w| w.powf(q))));
        }
        let max = values.iter().copied().fold(0.0f64, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(
            max / min < 5.0 && max < 1.0,
            "int v^2 across concentration family: {values:?}"
        );
    }

    #[test]
    fn signal_gradient_quotient_below_measure() {
        // Summing the discrete equations against 1/v bounds the face sum
        // of |grad v|^2 / v^2 by |Omega| exactly; the arithmetic face mean
        // only shrinks it. Checked here on data spanning two decades.
        for n in [32, 64] {
            let grid = interval(n);
            let op = assemble(&grid);
            let u = Field::new(&grid, |x| 0.05 + 5.0 * (-(x[0] - 1.2).powi(2) / 0.02).exp());
            let v = solve_v(&op, &grid, &u, 1e-12).unwrap();
            let quot = gradient_sq_over_sq(&grid, &v, 1e-300).unwrap();
            assert!(
                quot <= grid.measure() * (1.0 + 1e-10),
                "quotient {quot} vs measure {}",
                grid.measure()
            );
        }
    }

    proptest! {
        #[test]
        fn maximum_principle_and_mass_transfer(
            raw in proptest::collection::vec(0.0f64..50.0, 24),
            radial in proptest::bool::ANY,
        ) {
            let grid = if radial {
                build_grid(&Domain::RadialBall { radius: 1.5, dim: 3 }, &[24]).unwrap()
            } else {
                interval(24)
            };
            let u = Field::from_values(&grid, raw).unwrap();
            let op = assemble(&grid);
            let tol = 1e-10;
            let v = solve_v(&op, &grid, &u, tol).unwrap();
            prop_assert!(min_v(&v) >= 0.0);
            if integrate(&grid, &u) > 0.0 {
                prop_assert!(min_v(&v) > 0.0);
            }
            let sup = u.values().iter().fold(0.0f64, |m, &x| m.max(x));
            let defect = mass_transfer_defect(&grid, &u, &v);
            prop_assert!(defect <= 10.0 * tol * grid.measure() * (1.0 + sup));
        }
    }
}
