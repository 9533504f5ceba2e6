//! `ks-sim`: one binary for runs, sweeps, stored-run checks, and the
//! comparison-dynamics table.
//!
//! Exit codes: 0 success, 2 configuration error, 3 invariant or estimate
//! violation, 4 density ceiling reached outside exploratory mode.

mod config;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use ks_core::error::KsError;
use ks_core::functionals::{coth_bound, ode_comparison_check};
use ks_core::geometry::build_grid;
use ks_core::sim::{read_run_meta, run_simulation, write_run_artifacts, RunOutcome};
use ks_core::snapshot::Trajectory;
use ks_core::sweep::{run_sweep, write_sweep_artifacts, SweepPlan};
use ks_core::tolerances::ODE_COMPARISON_SLACK;
use ks_core::weak::{
    build_test_bank, check_eps_testing_ineq, check_mass_ineq, check_supersolution_ineq,
    check_weak_v_identity, ResidualReport,
};

use config::{Mode, Overrides, Resolved};

#[derive(Parser, Debug)]
#[command(
    name = "ks-sim",
    version,
    about = "Finite-volume chemotaxis runs with built-in a-priori-estimate checking"
)]
struct Cli {
    /// Run configuration (TOML), or a meta.json from an earlier run to
    /// replay it exactly.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the mode given in the config file.
    #[arg(long, value_enum)]
    mode: Option<Mode>,

    /// Sweep worker threads (0 = runtime default).
    #[arg(long)]
    workers: Option<usize>,

    /// Run outside the global-existence regime; implies a tolerant
    /// violation policy unless the config pins one.
    #[arg(long)]
    allow_supercritical: bool,

    /// Artifact directory; defaults to $KS_SIM_OUT_DIR, then ./out.
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Stored run directory for check mode.
    #[arg(long)]
    run_dir: Option<PathBuf>,

    /// Override the linear-solver tolerance.
    #[arg(long)]
    elliptic_tol: Option<f64>,

    /// Override the one-sided estimate calibration constant.
    #[arg(long)]
    weak_ineq_coeff: Option<f64>,

    /// Override the signal-identity calibration constant.
    #[arg(long)]
    weak_id_coeff: Option<f64>,
}

enum Failure {
    Config(String),
    Invariant(String),
    Ceiling(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violation: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Ceiling(m)) => {
            eprintln!("blow-up ceiling: {m}");
            ExitCode::from(4)
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        mode: cli.mode,
        workers: cli.workers,
        allow_supercritical: cli.allow_supercritical,
        elliptic_tol: cli.elliptic_tol,
        weak_ineq_coeff: cli.weak_ineq_coeff,
        weak_id_coeff: cli.weak_id_coeff,
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| std::env::var_os("KS_SIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Runtime errors keep exit code 3; a supercritical rejection is a config
/// problem even when it surfaces late.
fn run_failure(e: KsError) -> Failure {
    match e {
        KsError::SupercriticalChi(m) => Failure::Config(m),
        other => Failure::Invariant(other.to_string()),
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let resolved = match &cli.config {
        Some(path) => {
            let loaded = config::load(path).map_err(Failure::Config)?;
            config::resolve(loaded, &overrides(cli)).map_err(Failure::Config)?
        }
        None => {
            let mode = cli
                .mode
                .unwrap_or(if cli.run_dir.is_some() { Mode::Check } else { Mode::Simulate });
            if mode != Mode::Check {
                return Err(Failure::Config(
                    "pass --config (only check mode runs from --run-dir alone)".into(),
                ));
            }
            Resolved::bare_check(&overrides(cli))
        }
    };
    match resolved.mode {
        Mode::Simulate => simulate(cli, &resolved),
        Mode::Sweep => sweep(cli, &resolved),
        Mode::Check => check(cli, &resolved),
        Mode::CompareOde => compare_ode(cli, &resolved),
    }
}

fn simulate(cli: &Cli, r: &Resolved) -> Result<(), Failure> {
    let setup = r.sim.as_ref().expect("resolve fills the setup for simulate mode");
    let result = run_simulation(setup).map_err(run_failure)?;
    let dir = out_dir(cli);
    write_run_artifacts(&dir, setup, &result).map_err(run_failure)?;
    let rows = result.ledger.rows();
    println!(
        "run: {} steps, {} samples, peak max u {:.6e}, mass {:.12e} -> {:.12e}",
        result.steps,
        rows.len(),
        result.peak_max_u,
        rows.first().map(|x| x.mass_u).unwrap_or(0.0),
        rows.last().map(|x| x.mass_u).unwrap_or(0.0),
    );
    println!(
        "monitors: worst mass drift {:.3e}, log-slope breaches {}, clamped cells {}",
        result.monitor.worst_mass_drift,
        result.monitor.grad_log_breaches,
        result.monitor.clamped_cells
    );
    println!("artifacts: {}", dir.display());
    if let RunOutcome::CeilingStop { t } = result.outcome {
        if setup.allow_supercritical {
            println!("ceiling {:.3e} reached at t = {t:.6e}; recorded in meta.json", setup.ceiling);
        } else {
            return Err(Failure::Ceiling(format!(
                "density ceiling {:.3e} reached at t = {t:.6e}",
                setup.ceiling
            )));
        }
    }
    Ok(())
}

fn sweep(cli: &Cli, r: &Resolved) -> Result<(), Failure> {
    let base = r.sim.as_ref().expect("resolve fills the setup for sweep mode").clone();
    let allow = base.allow_supercritical;
    let ceiling = base.ceiling;
    let plan = SweepPlan {
        base,
        eps_values: r.eps_list.clone(),
        workers: r.workers,
        tail_threshold: r.tail_threshold,
    };
    let output = run_sweep(&plan).map_err(|e| match e {
        KsError::InvalidParameter(m) => Failure::Config(m),
        other => Failure::Invariant(other.to_string()),
    })?;
    let dir = out_dir(cli);
    write_sweep_artifacts(&dir, &plan, &output).map_err(run_failure)?;
    print!("{}", output.report);
    println!("artifacts: {}", dir.display());
    if let Some(bad) = output.report.summaries.iter().find_map(|s| s.error.as_ref()) {
        return Err(Failure::Invariant(format!("a sweep run failed: {bad}")));
    }
    let hit_ceiling = output
        .report
        .summaries
        .iter()
        .any(|s| matches!(s.outcome, Some(RunOutcome::CeilingStop { .. })));
    if hit_ceiling && !allow {
        return Err(Failure::Ceiling(format!("a sweep run reached the density ceiling {ceiling:.3e}")));
    }
    Ok(())
}

/// `full_report` with the calibration constants swapped for the resolved
/// ones, so overrides can tighten or loosen a re-check.
fn compose_report(
    grid: &ks_core::geometry::Grid,
    traj: &Trajectory,
    params: &ks_core::stepper::Params,
    r: &Resolved,
) -> Result<ResidualReport, KsError> {
    let t_end = traj.times().last().copied().unwrap_or(params.t_end);
    let id_bank = build_test_bank(&grid.domain, t_end, false, false);
    let super_bank = build_test_bank(&grid.domain, t_end, true, true);
    let eps_bank = build_test_bank(&grid.domain, t_end, true, false);
    let identity = check_weak_v_identity(grid, traj, &id_bank, r.weak_id_coeff)?;
    let supersolution =
        check_supersolution_ineq(grid, traj, params, &super_bank, r.weak_ineq_coeff)?;
    let eps_testing = check_eps_testing_ineq(grid, traj, params, &eps_bank, r.weak_ineq_coeff)?;
    let mass = check_mass_ineq(grid, traj, 1e-9)?;
    let passed = identity.passed && supersolution.passed && eps_testing.passed && mass.passed;
    Ok(ResidualReport { identity, supersolution, eps_testing, mass, passed })
}

fn check(cli: &Cli, r: &Resolved) -> Result<(), Failure> {
    let run_dir = cli
        .run_dir
        .as_ref()
        .ok_or_else(|| Failure::Config("check mode needs --run-dir".into()))?;
    let meta = read_run_meta(run_dir)
        .map_err(|e| Failure::Config(format!("{}: {e}", run_dir.display())))?;
    let grid = build_grid(&meta.setup.domain, &meta.setup.resolution)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let traj = Trajectory::load(&run_dir.join("snaps.bin"))
        .map_err(|e| Failure::Config(format!("{}: {e}", run_dir.display())))?;
    let report = compose_report(&grid, &traj, &meta.setup.params, r)
        .map_err(|e| Failure::Invariant(e.to_string()))?;
    write_atomic(&run_dir.join("residual_report.json"), report.to_json().as_bytes())
        .map_err(|e| Failure::Invariant(e.to_string()))?;
    print!("{report}");
    if !report.passed {
        return Err(Failure::Invariant(
            "stored run fails its residual checks; see residual_report.json".into(),
        ));
    }
    Ok(())
}

fn compare_ode(cli: &Cli, r: &Resolved) -> Result<(), Failure> {
    let ode = r.ode.as_ref().expect("resolve fills this for compare-ode mode");
    let y0 = match ode.y0 {
        Some(y0) => y0,
        None => {
            0.9 * coth_bound(ode.a, ode.b, ode.t0).map_err(|e| Failure::Config(e.to_string()))?
        }
    };
    let comp = ode_comparison_check(
        ode.a,
        ode.b,
        y0,
        ode.t0,
        ode.t_end,
        ode.samples,
        ODE_COMPARISON_SLACK,
    )
    .map_err(|e| Failure::Config(e.to_string()))?;

    println!("y' = -{} y^2 + {}, y({:.3e}) = {y0:.6e}", ode.a, ode.b, ode.t0);
    println!("{:>12}  {:>14}  {:>14}  {:>10}", "t", "y", "bound", "y/bound-1");
    let stride = (comp.samples.len().saturating_sub(1) / 20).max(1);
    for (k, s) in comp.samples.iter().enumerate() {
        if k % stride == 0 || k + 1 == comp.samples.len() {
            println!(
                "{:>12.6e}  {:>14.8e}  {:>14.8e}  {:>10.2e}",
                s.t,
                s.y,
                s.bound,
                s.y / s.bound - 1.0
            );
        }
    }
    let verdict = if comp.passed { "holds" } else { "VIOLATED" };
    println!("universal bound {verdict}: largest relative excess {:.3e}", comp.max_excess);

    let dir = out_dir(cli);
    fs::create_dir_all(&dir).map_err(|e| Failure::Invariant(e.to_string()))?;
    let json = serde_json::to_vec_pretty(&comp).expect("report serialization cannot fail");
    write_atomic(&dir.join("ode_report.json"), &json)
        .map_err(|e| Failure::Invariant(e.to_string()))?;
    if !comp.passed {
        return Err(Failure::Invariant(format!(
            "comparison trajectory exceeds the bound by {:.3e} relative",
            comp.max_excess
        )));
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact"),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
