//! Run configuration: the TOML schema and its resolution into core types.
//!
//! Every section rejects unknown keys, so a typo fails the parse instead of
//! silently running with a default. `--config` also accepts a `meta.json`
//! written by an earlier run; the embedded setup is replayed as-is, which
//! reproduces the original artifacts bit for bit.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use ks_core::geometry::{build_grid, Domain, FaceMean};
use ks_core::profile::InitialProfile;
use ks_core::sim::{RunMeta, SecondExponent, SimSetup, ViolationPolicy};
use ks_core::stepper::{select_p, Params, StepControl};
use ks_core::tolerances::{ELLIPTIC_TOL_DEFAULT, WEAK_ID_COEFF, WEAK_INEQ_COEFF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One run; writes ledger.csv, snaps.bin, meta.json.
    Simulate,
    /// One run per entry of eps_list; adds sweep.json and per-run dirs.
    Sweep,
    /// Re-check a stored run directory against the weak-form estimates.
    Check,
    /// Integrate y' = -a y^2 + b and test it against the universal bound.
    CompareOde,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub domain: Option<Domain>,
    pub resolution: Option<Vec<usize>>,
    /// Initial cell density; must be nonnegative with positive total mass.
    pub initial: Option<InitialProfile>,
    pub params: Option<ParamsSection>,
    pub output: Option<OutputSection>,
    pub tolerances: Option<ToleranceSection>,
    pub sweep: Option<SweepSection>,
    pub ode: Option<OdeSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub chi: f64,
    /// Single run strength; `eps_list` is the sweep alternative.
    pub eps: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    /// Picked from chi and n_eff when absent.
    pub p: Option<f64>,
    pub n_eff: u32,
    pub t_end: f64,
    pub dt_max: f64,
    pub cfl_safety: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Uniformly spaced samples, endpoints included (default 101).
    pub samples: Option<usize>,
    pub track_extras: Option<bool>,
    pub second_exponent: Option<SecondExponent>,
    pub ceiling: Option<f64>,
    pub max_steps: Option<u64>,
    /// Default: strict, or tolerant when --allow-supercritical is set.
    pub policy: Option<ViolationPolicy>,
    pub v_face: Option<FaceMean>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    pub elliptic_tol: Option<f64>,
    pub weak_ineq_coeff: Option<f64>,
    pub weak_id_coeff: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Worker threads; zero lets the runtime decide.
    pub workers: Option<usize>,
    pub tail_threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSection {
    pub a: f64,
    pub b: f64,
    /// Defaults to nine tenths of the universal bound at t0.
    pub y0: Option<f64>,
    pub t0: Option<f64>,
    pub t_end: Option<f64>,
    pub samples: Option<usize>,
}

/// Command-line knobs that override the file.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub workers: Option<usize>,
    pub allow_supercritical: bool,
    pub elliptic_tol: Option<f64>,
    pub weak_ineq_coeff: Option<f64>,
    pub weak_id_coeff: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct OdeSpec {
    pub a: f64,
    pub b: f64,
    pub y0: Option<f64>,
    pub t0: f64,
    pub t_end: f64,
    pub samples: usize,
}

/// Everything a mode needs, with defaults filled in and gates checked.
#[derive(Debug)]
pub struct Resolved {
    pub mode: Mode,
    pub sim: Option<SimSetup>,
    pub eps_list: Vec<f64>,
    pub workers: usize,
    pub tail_threshold: f64,
    pub weak_ineq_coeff: f64,
    pub weak_id_coeff: f64,
    pub ode: Option<OdeSpec>,
}

impl Resolved {
    /// Check mode without a config file: stored parameters plus flag
    /// overrides are all it needs.
    pub fn bare_check(ov: &Overrides) -> Resolved {
        Resolved {
            mode: Mode::Check,
            sim: None,
            eps_list: Vec::new(),
            workers: 0,
            tail_threshold: 2.0,
            weak_ineq_coeff: ov.weak_ineq_coeff.unwrap_or(WEAK_INEQ_COEFF),
            weak_id_coeff: ov.weak_id_coeff.unwrap_or(WEAK_ID_COEFF),
            ode: None,
        }
    }
}

pub enum Loaded {
    Config(Box<RunConfig>),
    Replay(Box<SimSetup>),
}

pub fn load(path: &Path) -> Result<Loaded, String> {
    let bytes =
        fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let meta: RunMeta = serde_json::from_slice(&bytes)
            .map_err(|e| format!("{} is not a run meta file: {e}", path.display()))?;
        return Ok(Loaded::Replay(Box::new(meta.setup)));
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| format!("{} is not UTF-8: {e}", path.display()))?;
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(Loaded::Config(Box::new(cfg)))
}

fn gate_supercritical(params: &Params, allow: bool) -> Result<(), String> {
    if params.is_subcritical() || allow {
        return Ok(());
    }
    Err(format!(
        "chi = {} is not below n/(n-2) = {} for n = {}; the run leaves the \
         global-existence regime (pass --allow-supercritical to explore it)",
        params.chi,
        Params::subcritical_limit(params.n_eff),
        params.n_eff
    ))
}

pub fn resolve(loaded: Loaded, ov: &Overrides) -> Result<Resolved, String> {
    match loaded {
        Loaded::Replay(setup) => resolve_replay(*setup, ov),
        Loaded::Config(cfg) => resolve_config(*cfg, ov),
    }
}

fn resolve_replay(mut setup: SimSetup, ov: &Overrides) -> Result<Resolved, String> {
    let mode = ov.mode.unwrap_or(Mode::Simulate);
    if mode != Mode::Simulate {
        return Err("a meta.json replay only supports simulate mode".into());
    }
    setup.allow_supercritical |= ov.allow_supercritical;
    if let Some(tol) = ov.elliptic_tol {
        setup.ctrl.elliptic_tol = tol;
    }
    setup.params.validate().map_err(|e| e.to_string())?;
    gate_supercritical(&setup.params, setup.allow_supercritical)?;
    Ok(Resolved {
        mode,
        sim: Some(setup),
        eps_list: Vec::new(),
        workers: ov.workers.unwrap_or(0),
        tail_threshold: 2.0,
        weak_ineq_coeff: ov.weak_ineq_coeff.unwrap_or(WEAK_INEQ_COEFF),
        weak_id_coeff: ov.weak_id_coeff.unwrap_or(WEAK_ID_COEFF),
        ode: None,
    })
}

fn resolve_config(cfg: RunConfig, ov: &Overrides) -> Result<Resolved, String> {
    let mode = ov.mode.or(cfg.mode).unwrap_or(Mode::Simulate);
    let tol = cfg.tolerances.unwrap_or_default();
    let weak_ineq_coeff = ov.weak_ineq_coeff.or(tol.weak_ineq_coeff).unwrap_or(WEAK_INEQ_COEFF);
    let weak_id_coeff = ov.weak_id_coeff.or(tol.weak_id_coeff).unwrap_or(WEAK_ID_COEFF);
    let sweep = cfg.sweep.unwrap_or_default();
    let workers = ov.workers.or(sweep.workers).unwrap_or(0);
    let tail_threshold = sweep.tail_threshold.unwrap_or(2.0);
    if !(tail_threshold > 0.0 && tail_threshold.is_finite()) {
        return Err(format!("tail_threshold must be positive, got {tail_threshold}"));
    }

    if mode == Mode::CompareOde {
        let section = cfg.ode.ok_or("compare-ode mode needs an [ode] section")?;
        let ode = OdeSpec {
            a: section.a,
            b: section.b,
            y0: section.y0,
            t0: section.t0.unwrap_or(1e-6),
            t_end: section.t_end.unwrap_or(2.0),
            samples: section.samples.unwrap_or(200),
        };
        if !(ode.a > 0.0 && ode.a.is_finite() && ode.b > 0.0 && ode.b.is_finite()) {
            return Err(format!("ode coefficients must be positive, got a = {}, b = {}", ode.a, ode.b));
        }
        if !(ode.t0 > 0.0 && ode.t_end > ode.t0) {
            return Err(format!(
                "ode window needs 0 < t0 < t_end, got t0 = {}, t_end = {}",
                ode.t0, ode.t_end
            ));
        }
        if ode.samples < 2 {
            return Err(format!("ode table needs at least 2 samples, got {}", ode.samples));
        }
        return Ok(Resolved {
            mode,
            sim: None,
            eps_list: Vec::new(),
            workers,
            tail_threshold,
            weak_ineq_coeff,
            weak_id_coeff,
            ode: Some(ode),
        });
    }

    let domain = cfg.domain.ok_or("missing [domain] section")?;
    let resolution = cfg.resolution.ok_or("missing top-level resolution")?;
    let initial = cfg.initial.ok_or("missing [initial] profile section")?;
    let ps = cfg.params.ok_or("missing [params] section")?;

    let p = match ps.p {
        Some(p) => p,
        None => select_p(ps.chi, ps.n_eff)
            .map_err(|e| format!("automatic exponent selection failed: {e}"))?,
    };
    if ps.eps.is_some() && ps.eps_list.is_some() {
        return Err("set either eps or eps_list, not both".into());
    }
    let (eps, eps_list) = match mode {
        Mode::Sweep => {
            let list = ps
                .eps_list
                .clone()
                .or_else(|| ps.eps.map(|e| vec![e]))
                .ok_or("sweep mode needs eps_list")?;
            if list.is_empty() {
                return Err("eps_list must not be empty".into());
            }
            for &e in &list {
                if !(e > 0.0 && e < 1.0) {
                    return Err(format!("every sweep eps must lie in (0, 1), got {e}"));
                }
            }
            (list[0], list)
        }
        _ => {
            let e = ps
                .eps
                .ok_or("set eps (a single value; eps_list is for sweep mode)")?;
            (e, Vec::new())
        }
    };

    let params = Params::new(
        ps.chi,
        eps,
        p,
        ps.n_eff,
        ps.t_end,
        ps.dt_max,
        ps.cfl_safety.unwrap_or(0.9),
    )
    .map_err(|e| e.to_string())?;
    gate_supercritical(&params, ov.allow_supercritical)?;

    let out = cfg.output.unwrap_or_default();
    let samples = out.samples.unwrap_or(101);
    if samples < 2 {
        return Err(format!("need at least 2 output samples, got {samples}"));
    }
    let ceiling = out.ceiling.unwrap_or(1e6);
    if !(ceiling > 0.0) {
        return Err(format!("ceiling must be positive, got {ceiling}"));
    }
    let max_steps = out.max_steps.unwrap_or(2_000_000);
    if max_steps == 0 {
        return Err("max_steps must be positive".into());
    }
    // Fail-fast by default; an exploratory run counts breaches instead.
    let policy = out.policy.unwrap_or(if ov.allow_supercritical {
        ViolationPolicy::Tolerant
    } else {
        ViolationPolicy::Strict
    });
    let ctrl = StepControl {
        v_face: out.v_face.unwrap_or(FaceMean::Arithmetic),
        elliptic_tol: ov.elliptic_tol.or(tol.elliptic_tol).unwrap_or(ELLIPTIC_TOL_DEFAULT),
        flip_advection: false,
    };
    let setup = SimSetup {
        domain,
        resolution,
        profile: initial,
        params,
        ctrl,
        samples,
        second_exponent: out.second_exponent.unwrap_or(SecondExponent::Auto),
        track_extras: out.track_extras.unwrap_or(false),
        policy,
        ceiling,
        max_steps,
        allow_supercritical: ov.allow_supercritical,
    };

    // Admissibility of the data on the grid the run will actually use.
    let grid = build_grid(&setup.domain, &setup.resolution).map_err(|e| e.to_string())?;
    setup.profile.sample(&grid).map_err(|e| format!("initial data: {e}"))?;

    Ok(Resolved {
        mode,
        sim: Some(setup),
        eps_list,
        workers,
        tail_threshold,
        weak_ineq_coeff,
        weak_id_coeff,
        ode: None,
    })
}
