//! Sweeps over the regularization strength.
//!
//! All runs in a sweep share the domain, resolution, initial data, and the
//! exact sample-time grid; only `eps` varies. Consecutive runs are then
//! compared in the space-time `L^1` distance without interpolation, and a
//! tail-mass statistic probes equi-integrability of the family. Runs are
//! independent, so they execute in parallel; a failed run poisons only its
//! own entry and the pair distances touching it.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::geometry::{kahan_sum, Grid};
use crate::sim::{run_simulation, write_run_artifacts, RunOutcome, SimResult, SimSetup};
use crate::snapshot::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub base: SimSetup,
    /// Regularization strengths; processed in descending order.
    pub eps_values: Vec<f64>,
    /// Worker threads; zero lets the runtime decide.
    pub workers: usize,
    /// Density threshold for the tail-mass statistic.
    pub tail_threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsRunSummary {
    pub eps: f64,
    pub outcome: Option<RunOutcome>,
    pub steps: u64,
    pub peak_max_u: f64,
    /// Final `int u^p` from the ledger.
    pub final_low_entropy: f64,
    /// Largest tail mass `int (u - threshold)_+` over the samples.
    pub tail_mass: f64,
    /// `sum_k int |(u(t_{k+1})+1)^(p/2) - (u(t_k)+1)^(p/2)|`; see
    /// [`time_regularity_stat`].
    pub time_variation: f64,
    pub error: Option<String>,
}

/// Space-time `L^1` distance between two adjacent runs of the sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairDistance {
    pub eps_hi: f64,
    pub eps_lo: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub summaries: Vec<EpsRunSummary>,
    pub distances: Vec<PairDistance>,
    pub tail_threshold: f64,
}

pub struct SweepOutput {
    pub report: SweepReport,
    /// Same order as `report.summaries`; `None` marks a poisoned run.
    pub results: Vec<Option<SimResult>>,
}

/// Directory label for one run of a sweep.
pub fn eps_label(eps: f64) -> String {
    format!("eps_{eps:.6e}")
}

/// `int_0^T int |u_a - u_b|` over the shared sample grid, left-endpoint in
/// time. The trajectories must agree on grid and sample times.
pub fn l1_spacetime_distance(grid: &Grid, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.grid_id() != grid.id() || b.grid_id() != grid.id() {
        return Err(KsError::GridMismatch { field: a.grid_id(), grid: grid.id() });
    }
    if a.len() != b.len() {
        return Err(KsError::TrajectoryMismatch(format!(
            "sample counts differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(KsError::InsufficientData(
            "distance needs at least 2 samples per trajectory".into(),
        ));
    }
    let ta = a.times();
    let tb = b.times();
    let span = ta[ta.len() - 1] - ta[0];
    for (x, y) in ta.iter().zip(&tb) {
        if (x - y).abs() > 1e-12 * span.max(1.0) {
            return Err(KsError::TrajectoryMismatch(format!(
                "sample times differ: {x} vs {y}"
            )));
        }
    }
    let mut total = 0.0;
    for k in 0..ta.len() - 1 {
        let lam = ta[k + 1] - ta[k];
        let ra = &a.records()[k];
        let rb = &b.records()[k];
        let slice = kahan_sum(
            ra.u
                .iter()
                .zip(&rb.u)
                .zip(&grid.cell_volumes)
                .map(|((&x, &y), &vol)| vol * (x - y).abs()),
        );
        total += lam * slice;
    }
    Ok(total)
}

/// Largest tail mass `int (u - threshold)_+ dx` over the samples.
pub fn equi_integrability_stat(grid: &Grid, traj: &Trajectory, threshold: f64) -> Result<f64> {
    if traj.grid_id() != grid.id() {
        return Err(KsError::GridMismatch { field: traj.grid_id(), grid: grid.id() });
    }
    if !(threshold >= 0.0) {
        return Err(KsError::InvalidParameter(format!(
            "tail threshold must be >= 0, got {threshold}"
        )));
    }
    let mut worst = 0.0_f64;
    for rec in traj.records() {
        let tail = kahan_sum(
            rec.u
                .iter()
                .zip(&grid.cell_volumes)
                .map(|(&u, &vol)| vol * (u - threshold).max(0.0)),
        );
        worst = worst.max(tail);
    }
    Ok(worst)
}

/// `sum_k int |(u(t_{k+1})+1)^(p/2) - (u(t_k)+1)^(p/2)| dx` over the sample
/// times. The shift by one keeps the power Lipschitz near vacuum. A family
/// converging in space-time `L^1` cannot oscillate in time without this sum
/// blowing up as the cadence refines, so it is recorded per run alongside
/// the tail mass.
pub fn time_regularity_stat(grid: &Grid, traj: &Trajectory, p: f64) -> Result<f64> {
    if traj.grid_id() != grid.id() {
        return Err(KsError::GridMismatch { field: traj.grid_id(), grid: grid.id() });
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(KsError::InvalidParameter(format!("power must be positive, got {p}")));
    }
    let half = 0.5 * p;
    let recs = traj.records();
    let mut total = 0.0;
    for pair in recs.windows(2) {
        total += kahan_sum(
            pair[0]
                .u
                .iter()
                .zip(&pair[1].u)
                .zip(&grid.cell_volumes)
                .map(|((&a, &b), &vol)| vol * ((b + 1.0).powf(half) - (a + 1.0).powf(half)).abs()),
        );
    }
    Ok(total)
}

/// True when the last `window` distances grow strictly, each by more than
/// the fractional `growth` over its predecessor. That pattern means the
/// family is drifting apart as the regularization weakens, the opposite of
/// a converging scheme.
pub fn monotone_divergence(distances: &[f64], window: usize, growth: f64) -> bool {
    if window < 2 || distances.len() < window {
        return false;
    }
    let tail = &distances[distances.len() - window..];
    tail.windows(2).all(|w| w[1] > w[0] * (1.0 + growth))
}

pub fn run_sweep(plan: &SweepPlan) -> Result<SweepOutput> {
    if plan.eps_values.is_empty() {
        return Err(KsError::InvalidParameter("sweep needs at least one eps value".into()));
    }
    for &e in &plan.eps_values {
        if !e.is_finite() {
            return Err(KsError::InvalidParameter(format!("eps must be finite, got {e}")));
        }
    }
    let mut eps = plan.eps_values.clone();
    eps.sort_by(|a, b| b.partial_cmp(a).expect("finite eps"));
    if eps.windows(2).any(|w| w[0] == w[1]) {
        return Err(KsError::InvalidParameter("duplicate eps values in the sweep".into()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| KsError::InvalidParameter(format!("worker pool: {e}")))?;
    let raw: Vec<std::result::Result<SimResult, KsError>> = pool.install(|| {
        eps.par_iter()
            .map(|&e| {
                let mut setup = plan.base.clone();
                setup.params.eps = e;
                run_simulation(&setup)
            })
            .collect()
    });

    let mut summaries = Vec::with_capacity(eps.len());
    let mut results: Vec<Option<SimResult>> = Vec::with_capacity(eps.len());
    for (&e, outcome) in eps.iter().zip(raw) {
        match outcome {
            Ok(r) => {
                let tail = equi_integrability_stat(&r.grid, &r.trajectory, plan.tail_threshold)?;
                let variation =
                    time_regularity_stat(&r.grid, &r.trajectory, plan.base.params.p)?;
                summaries.push(EpsRunSummary {
                    eps: e,
                    outcome: Some(r.outcome),
                    steps: r.steps,
                    peak_max_u: r.peak_max_u,
                    final_low_entropy: r.ledger.rows().last().map(|row| row.entropy_low).unwrap_or(0.0),
                    tail_mass: tail,
                    time_variation: variation,
                    error: None,
                });
                results.push(Some(r));
            }
            Err(err) => {
                summaries.push(EpsRunSummary {
                    eps: e,
                    outcome: None,
                    steps: 0,
                    peak_max_u: f64::NAN,
                    final_low_entropy: f64::NAN,
                    tail_mass: f64::NAN,
                    time_variation: f64::NAN,
                    error: Some(err.to_string()),
                });
                results.push(None);
            }
        }
    }

    let mut distances = Vec::new();
    for j in 0..results.len().saturating_sub(1) {
        if let (Some(hi), Some(lo)) = (&results[j], &results[j + 1]) {
            if hi.outcome == RunOutcome::Completed && lo.outcome == RunOutcome::Completed {
                let l1 = l1_spacetime_distance(&hi.grid, &hi.trajectory, &lo.trajectory)?;
                distances.push(PairDistance { eps_hi: eps[j], eps_lo: eps[j + 1], l1 });
            }
        }
    }

    Ok(SweepOutput {
        report: SweepReport { summaries, distances, tail_threshold: plan.tail_threshold },
        results,
    })
}

/// Writes per-run artifacts under `dir/runs/eps_*/` and the sweep report as
/// `dir/sweep.json`.
pub fn write_sweep_artifacts(dir: &Path, plan: &SweepPlan, output: &SweepOutput) -> Result<()> {
    for (summary, result) in output.report.summaries.iter().zip(&output.results) {
        if let Some(r) = result {
            let mut setup = plan.base.clone();
            setup.params.eps = summary.eps;
            write_run_artifacts(&dir.join("runs").join(eps_label(summary.eps)), &setup, r)?;
        }
    }
    let json = serde_json::to_vec_pretty(&output.report)
        .map_err(|e| KsError::SnapshotFormat(format!("sweep serialization: {e}")))?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.json"), json)?;
    Ok(())
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>12}  {:>10}  {:>12}  {:>12}  {:>12}  outcome",
            "eps", "steps", "peak max u", "tail mass", "time var"
        )?;
        for s in &self.summaries {
            let outcome = match (&s.outcome, &s.error) {
                (_, Some(e)) => format!("failed: {e}"),
                (Some(RunOutcome::Completed), _) => "completed".into(),
                (Some(RunOutcome::CeilingStop { t }), _) => format!("ceiling at t = {t:.4e}"),
                (None, None) => "unknown".into(),
            };
            writeln!(
                f,
                "{:>12.4e}  {:>10}  {:>12.4e}  {:>12.4e}  {:>12.4e}  {outcome}",
                s.eps, s.steps, s.peak_max_u, s.tail_mass, s.time_variation
            )?;
        }
        for d in &self.distances {
            writeln!(
                f,
                "L1 distance eps {:.4e} -> {:.4e}: {:.6e}",
                d.eps_hi, d.eps_lo, d.l1
            )?;
        }
        Ok(())
    }
}
