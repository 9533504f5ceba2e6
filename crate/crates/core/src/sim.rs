//! Full-run driver: initial data to sampled trajectory plus ledger.
//!
//! A run marches the IMEX stepper from `t = 0` to the horizon and records
//! state at uniformly spaced sample times. Step sizes are capped so the
//! march lands on each sample time exactly; sweeps over the regularization
//! then share identical time grids and can be compared without
//! interpolation. Everything is deterministic: same setup, same bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::elliptic::{assemble, solve_v};
use crate::error::{KsError, Result};
use crate::functionals::{select_r, FunctionalLedger};
use crate::geometry::{build_grid, gradient_sq_over_sq, integrate, Domain, Grid};
use crate::profile::InitialProfile;
use crate::snapshot::Trajectory;
use crate::stepper::{advance, Params, StateSnapshot, StepControl};
use crate::tolerances::{
    GRAD_LOG_V_ALLOWANCE, MASS_DRIFT_GROWTH, MASS_DRIFT_PER_STEP, POSITIVITY_FLOOR,
};

/// How the `u^r` ledger column picks its exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondExponent {
    /// Midpoint of the admissible window; column disabled if the window is
    /// empty.
    Auto,
    Off,
    Fixed { value: f64 },
}

/// What to do when a runtime monitor trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationPolicy {
    /// Abort the run with an error.
    Strict,
    /// Count the breach and keep going.
    Tolerant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub domain: Domain,
    pub resolution: Vec<usize>,
    pub profile: InitialProfile,
    pub params: Params,
    pub ctrl: StepControl,
    /// Number of uniformly spaced samples, endpoints included.
    pub samples: usize,
    pub second_exponent: SecondExponent,
    /// Track the regularized-power and plain-power time integrals too.
    pub track_extras: bool,
    pub policy: ViolationPolicy,
    /// Density ceiling; reaching it ends the run early.
    pub ceiling: f64,
    pub max_steps: u64,
    /// Runs outside the global-existence regime refuse to start unless
    /// this is set.
    pub allow_supercritical: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunOutcome {
    Completed,
    CeilingStop { t: f64 },
}

/// Counters from the in-run invariant monitors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub mass_breaches: u64,
    pub worst_mass_drift: f64,
    pub grad_log_breaches: u64,
    pub clamped_cells: u64,
}

#[derive(Debug)]
pub struct SimResult {
    pub grid: Grid,
    pub outcome: RunOutcome,
    pub ledger: FunctionalLedger,
    pub trajectory: Trajectory,
    pub final_state: StateSnapshot,
    pub steps: u64,
    pub peak_max_u: f64,
    pub monitor: MonitorReport,
    pub r_used: Option<f64>,
}

fn sample_times(t_end: f64, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|k| {
            if k == samples - 1 {
                t_end
            } else {
                t_end * k as f64 / (samples - 1) as f64
            }
        })
        .collect()
}

pub fn run_simulation(setup: &SimSetup) -> Result<SimResult> {
    setup.params.validate()?;
    if setup.samples < 2 {
        return Err(KsError::InvalidParameter(format!(
            "need at least 2 samples, got {}",
            setup.samples
        )));
    }
    if !(setup.ceiling > 0.0) {
        return Err(KsError::InvalidParameter(format!(
            "ceiling must be positive, got {}",
            setup.ceiling
        )));
    }
    if setup.max_steps == 0 {
        return Err(KsError::InvalidParameter("step budget must be positive".into()));
    }
    if !setup.params.is_subcritical() && !setup.allow_supercritical {
        let limit = Params::subcritical_limit(setup.params.n_eff);
        return Err(KsError::SupercriticalChi(format!(
            "chi = {} is not below n/(n-2) = {limit} for n = {}; the global-existence \
             theory does not cover this run (set allow_supercritical to explore it)",
            setup.params.chi, setup.params.n_eff
        )));
    }

    let grid = build_grid(&setup.domain, &setup.resolution)?;
    let op = assemble(&grid);
    let u0 = setup.profile.sample(&grid)?;
    let v0 = solve_v(&op, &grid, &u0, setup.ctrl.elliptic_tol)?;
    let mut state = StateSnapshot { t: 0.0, step_index: 0, u: u0, v: v0 };

    let r_used = match setup.second_exponent {
        SecondExponent::Auto => select_r(setup.params.p, setup.params.n_eff).ok(),
        SecondExponent::Off => None,
        SecondExponent::Fixed { value } => {
            if !(value > 1.0) {
                return Err(KsError::InvalidParameter(format!(
                    "second exponent must exceed 1, got {value}"
                )));
            }
            Some(value)
        }
    };

    let mut ledger = FunctionalLedger::new(&grid, &setup.params, r_used, setup.track_extras);
    let mut trajectory = Trajectory::new(&grid);
    let times = sample_times(setup.params.t_end, setup.samples);
    let measure = grid.measure();
    let grad_log_cap = measure * (1.0 + GRAD_LOG_V_ALLOWANCE);
    let mass0 = integrate(&grid, &state.u);
    let mut monitor = MonitorReport::default();
    let mut peak_max_u = state.u.max();
    let mut steps = 0u64;
    let mut outcome = RunOutcome::Completed;

    let sample_checks = |state: &StateSnapshot, monitor: &mut MonitorReport| -> Result<()> {
        if state.v.min() <= POSITIVITY_FLOOR {
            return Err(KsError::BelowFloor {
                cell: 0,
                value: state.v.min(),
                floor: POSITIVITY_FLOOR,
            });
        }
        let quot = gradient_sq_over_sq(&grid, &state.v, POSITIVITY_FLOOR)?;
        if quot > grad_log_cap {
            monitor.grad_log_breaches += 1;
            if setup.policy == ViolationPolicy::Strict {
                return Err(KsError::InvariantViolation(format!(
                    "int |grad v|^2/v^2 = {quot:.6e} exceeds its structural cap {grad_log_cap:.6e} at t = {}",
                    state.t
                )));
            }
        }
        Ok(())
    };

    sample_checks(&state, &mut monitor)?;
    ledger.record(&grid, &state, times[1] - times[0])?;
    trajectory.push(&state)?;

    'sampling: for k in 1..setup.samples {
        let target = times[k];
        while target - state.t > 1e-12 * setup.params.t_end {
            let res = advance(&grid, &op, &state, &setup.params, &setup.ctrl, target - state.t)?;
            steps += 1;
            if steps > setup.max_steps {
                return Err(KsError::SolveFailed(format!(
                    "step budget of {} exhausted at t = {:.6e}",
                    setup.max_steps, res.state.t
                )));
            }
            monitor.clamped_cells += res.clamped_cells as u64;
            state = res.state;
            peak_max_u = peak_max_u.max(state.u.max());

            let drift = (integrate(&grid, &state.u) - mass0).abs() / mass0;
            monitor.worst_mass_drift = monitor.worst_mass_drift.max(drift);
            let allowed = MASS_DRIFT_PER_STEP * (1.0 + steps as f64 * MASS_DRIFT_GROWTH);
            if drift > allowed {
                monitor.mass_breaches += 1;
                if setup.policy == ViolationPolicy::Strict {
                    return Err(KsError::InvariantViolation(format!(
                        "relative mass drift {drift:.3e} exceeds {allowed:.3e} after {steps} steps"
                    )));
                }
            }

            if state.u.max() >= setup.ceiling {
                outcome = RunOutcome::CeilingStop { t: state.t };
                sample_checks(&state, &mut monitor)?;
                ledger.record(&grid, &state, 0.0)?;
                trajectory.push(&state)?;
                break 'sampling;
            }
        }
        if matches!(outcome, RunOutcome::CeilingStop { .. }) {
            break;
        }
        // The march lands one rounding error away from the sample time;
        // snap so every run shares the exact same grid of times.
        state.t = target;
        sample_checks(&state, &mut monitor)?;
        let dt_next = if k + 1 < setup.samples { times[k + 1] - target } else { 0.0 };
        ledger.record(&grid, &state, dt_next)?;
        trajectory.push(&state)?;
    }

    Ok(SimResult {
        grid,
        outcome,
        ledger,
        trajectory,
        final_state: state,
        steps,
        peak_max_u,
        monitor,
        r_used,
    })
}

/// Deterministic sidecar written next to the ledger and snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub setup: SimSetup,
    pub outcome: RunOutcome,
    pub steps: u64,
    pub grid_id: u64,
    pub cells: usize,
    pub r_used: Option<f64>,
    pub mass_initial: f64,
    pub mass_final: f64,
    pub peak_max_u: f64,
    pub monitor: MonitorReport,
    pub zero_density_cells: u64,
    pub version: String,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| {
        KsError::InvalidParameter(format!("artifact path {} has no parent", path.display()))
    })?;
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact"),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `ledger.csv`, `snaps.bin`, and `meta.json` into `dir`. Writes go
/// through a temporary file and a rename, so a crash never leaves a
/// half-written artifact under the final name.
pub fn write_run_artifacts(dir: &Path, setup: &SimSetup, result: &SimResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("ledger.csv"), result.ledger.to_csv_string().as_bytes())?;

    let mut snaps = Vec::new();
    result.trajectory.write_to(&mut snaps)?;
    write_atomic(&dir.join("snaps.bin"), &snaps)?;

    let rows = result.ledger.rows();
    let meta = RunMeta {
        setup: setup.clone(),
        outcome: result.outcome,
        steps: result.steps,
        grid_id: result.grid.id(),
        cells: result.grid.cell_count(),
        r_used: result.r_used,
        mass_initial: rows.first().map(|r| r.mass_u).unwrap_or(0.0),
        mass_final: rows.last().map(|r| r.mass_u).unwrap_or(0.0),
        peak_max_u: result.peak_max_u,
        monitor: result.monitor,
        zero_density_cells: result.ledger.zero_density_cells(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let json = serde_json::to_vec_pretty(&meta)
        .map_err(|e| KsError::SnapshotFormat(format!("meta serialization: {e}")))?;
    write_atomic(&dir.join("meta.json"), &json)?;
    Ok(())
}

pub fn read_run_meta(dir: &Path) -> Result<RunMeta> {
    let bytes = fs::read(dir.join("meta.json"))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| KsError::SnapshotFormat(format!("meta parse: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FaceMean;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn small_setup() -> SimSetup {
        SimSetup {
            domain: Domain::Interval { a: 0.0, b: PI },
            resolution: vec![32],
            profile: InitialProfile::GaussianBump {
                base: 0.3,
                amp: 2.0,
                width: 0.4,
                center: None,
            },
            params: Params::new(0.8, 0.25, 0.5, 2, 0.2, 5e-3, 0.9).unwrap(),
            ctrl: StepControl::default(),
            samples: 6,
            second_exponent: SecondExponent::Auto,
            track_extras: true,
            policy: ViolationPolicy::Strict,
            ceiling: 1e6,
            max_steps: 100_000,
            allow_supercritical: false,
        }
    }

    #[test]
    fn run_completes_on_the_sample_grid() {
        let setup = small_setup();
        let result = run_simulation(&setup).unwrap();
        assert_eq!(result.outcome, RunOutcome::Completed);
        assert_eq!(result.trajectory.len(), 6);
        let expected = sample_times(0.2, 6);
        assert_eq!(result.trajectory.times(), expected, "sample times must be exact");
        assert_eq!(result.ledger.rows().len(), 6);
        assert!(result.steps >= 5);
        assert_eq!(result.monitor.mass_breaches, 0);
        assert_eq!(result.monitor.grad_log_breaches, 0);
        assert_relative_eq!(
            result.ledger.rows()[0].mass_u,
            result.ledger.rows()[5].mass_u,
            max_relative = 1e-11
        );
        // The auto exponent for p = 1/2, n = 2 is the window midpoint 1.25.
        assert_eq!(result.r_used, Some(1.25));
    }

    #[test]
    fn reruns_are_bit_identical() {
        let setup = small_setup();
        let a = run_simulation(&setup).unwrap();
        let b = run_simulation(&setup).unwrap();
        assert_eq!(a.ledger.to_csv_string(), b.ledger.to_csv_string());
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        a.trajectory.write_to(&mut bytes_a).unwrap();
        b.trajectory.write_to(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn artifacts_round_trip() {
        let setup = small_setup();
        let result = run_simulation(&setup).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run_artifacts(dir.path(), &setup, &result).unwrap();

        let csv = fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
        let rows = FunctionalLedger::parse_csv(&csv).unwrap();
        assert_eq!(rows.as_slice(), result.ledger.rows());

        let traj = Trajectory::load(&dir.path().join("snaps.bin")).unwrap();
        assert_eq!(traj, result.trajectory);

        let meta = read_run_meta(dir.path()).unwrap();
        assert_eq!(meta.setup, setup);
        assert_eq!(meta.steps, result.steps);
        assert_eq!(meta.outcome, RunOutcome::Completed);
        assert!(meta.mass_initial > 0.0);
    }

    #[test]
    fn ceiling_ends_the_run_early() {
        // A ceiling below the initial peak must trip on the very first
        // step; the run records the stopping state and ends.
        let mut setup = small_setup();
        setup.ceiling = 2.0;
        let result = run_simulation(&setup).unwrap();
        match result.outcome {
            RunOutcome::CeilingStop { t } => assert!(t > 0.0 && t < 0.2),
            other => panic!("expected a ceiling stop, got {other:?}"),
        }
        assert!(result.peak_max_u >= 2.0);
        assert_eq!(result.trajectory.len(), 2);
        assert_eq!(result.ledger.rows().len(), 2);
    }

    #[test]
    fn supercritical_runs_need_explicit_consent() {
        let mut setup = small_setup();
        setup.params = Params::new(7.0, 0.25, 0.1, 3, 0.05, 5e-3, 0.9).unwrap();
        setup.second_exponent = SecondExponent::Off;
        let err = run_simulation(&setup).unwrap_err();
        assert!(matches!(err, KsError::SupercriticalChi(_)));
        assert!(err.to_string().contains("n/(n-2)"));
        setup.allow_supercritical = true;
        assert!(run_simulation(&setup).is_ok());
    }

    #[test]
    fn flipped_advection_still_conserves_mass() {
        // The negative-control stepper must stay a valid conservative
        // scheme; only the physics checkers are supposed to notice it.
        let mut setup = small_setup();
        setup.ctrl = StepControl { flip_advection: true, ..StepControl::default() };
        let result = run_simulation(&setup).unwrap();
        assert_eq!(result.outcome, RunOutcome::Completed);
        assert_eq!(result.monitor.mass_breaches, 0);
    }

    #[test]
    fn bad_setups_are_rejected_up_front() {
        let mut setup = small_setup();
        setup.samples = 1;
        assert!(run_simulation(&setup).is_err());
        let mut setup = small_setup();
        setup.ceiling = -1.0;
        assert!(run_simulation(&setup).is_err());
        let mut setup = small_setup();
        setup.second_exponent = SecondExponent::Fixed { value: 0.9 };
        assert!(run_simulation(&setup).is_err());
        let mut setup = small_setup();
        setup.ctrl = StepControl { v_face: FaceMean::Harmonic, ..StepControl::default() };
        assert!(run_simulation(&setup).is_ok(), "face mean choice is not a validity gate");
    }
}
