//! Scenario configuration, the table experiments and the perturbation
//! ensemble, with their CSV/JSON outputs.
//!
//! Output contract (read by the plotting scripts):
//!
//! * `trajectory.csv`: `t,x,y,theta,phi,xdot,ydot,thetadot,phidot,energy,h_front,h_back`.
//!   Both the arrival and departure rows are written at an impact time.
//! * `events.csv`: `i,tau,side,mode,alpha,lambda1,lambda2,e_pre,e_post,grazing`.
//!   Grazing contacts are listed with `grazing=true`; the multiplier columns
//!   are empty for the unconstrained specular mode.
//! * `summary.json`: `termination`, `impact_count`, `grazing_count`,
//!   `end_time`, `energy_drift_rel`, `config_echo`.
//! * `snapshot_t{T}.csv`: `member,x,y,theta,phi,xdot,ydot,thetadot,phidot,status`.
//!
//! Floats are written with 17 significant digits so they parse back exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineOptions, ExecutionTrace, ImpactMode, PennySystem, Termination};
use crate::parallel::{map_indexed, Execution};
use crate::penny::{contact_value, PennyParams, PennyState, Side, TableParams};

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESETS: [&str; 5] = ["elastic-circle", "plastic-circle", "elastic-ellipse", "plastic-ellipse", "ensemble"];

pub const TRAJECTORY_HEADER: [&str; 12] =
    ["t", "x", "y", "theta", "phi", "xdot", "ydot", "thetadot", "phidot", "energy", "h_front", "h_back"];
pub const EVENTS_HEADER: [&str; 10] =
    ["i", "tau", "side", "mode", "alpha", "lambda1", "lambda2", "e_pre", "e_post", "grazing"];
pub const SNAPSHOT_HEADER: [&str; 10] =
    ["member", "x", "y", "theta", "phi", "xdot", "ydot", "thetadot", "phidot", "status"];

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    /// The run stopped on an engine failure; whatever was computed is on disk.
    #[error("engine error: {0}")]
    Engine(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type ExperimentResult<T> = std::result::Result<T, ExperimentError>;

fn config_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

/// Rolling initial condition: position, angles and the two rates `Ω`, `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    pub x0: f64,
    pub y0: f64,
    pub theta0: f64,
    pub phi0: f64,
    pub thetadot0: f64,
    pub phidot0: f64,
}

impl InitialConditions {
    pub fn state(&self, params: &PennyParams) -> PennyState {
        PennyState::rolling(self.x0, self.y0, self.theta0, self.phi0, self.thetadot0, self.phidot0, params.radius)
    }
}

fn default_snapshot_times() -> Vec<f64> {
    vec![0.0, 5.0, 10.0, 20.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub count: usize,
    /// Half-width of the uniform perturbation applied to `Ω` and `ω`.
    pub perturb_bound: f64,
    pub rng_seed: u64,
    #[serde(default = "default_snapshot_times")]
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub params: PennyParams,
    pub table: TableParams,
    pub initial: InitialConditions,
    #[serde(default)]
    pub engine: EngineOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    pub output_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> ExperimentResult<Self> {
        let config: Self = toml::from_str(text).map_err(config_err)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> ExperimentResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> ExperimentResult<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn save(&self, path: &Path) -> ExperimentResult<()> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn initial_state(&self) -> PennyState {
        self.initial.state(&self.params)
    }

    /// Everything that can be checked without running the engine.
    pub fn validate(&self) -> ExperimentResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.params.validate().map_err(config_err)?;
        self.table.validate(&self.params).map_err(config_err)?;
        self.engine.validate().map_err(config_err)?;
        let ic = &self.initial;
        if ![ic.x0, ic.y0, ic.theta0, ic.phi0, ic.thetadot0, ic.phidot0].iter().all(|v| v.is_finite()) {
            return Err(config_err("initial conditions must be finite"));
        }
        let state = self.initial_state();
        for side in Side::BOTH {
            let h = contact_value(&state, &self.table, &self.params, side);
            if h.is_nan() || h >= 0.0 {
                return Err(config_err(format!(
                    "initial {} contact is not inside the table (H = {h:e})",
                    side.as_str()
                )));
            }
        }
        if let Some(ens) = &self.ensemble {
            if ens.count == 0 {
                return Err(config_err("ensemble.count must be at least 1"));
            }
            if !(ens.perturb_bound.is_finite() && ens.perturb_bound >= 0.0) {
                return Err(config_err("ensemble.perturb_bound must be finite and non-negative"));
            }
            if ens.snapshot_times.is_empty() {
                return Err(config_err("ensemble.snapshot_times must not be empty"));
            }
            if ens.snapshot_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return Err(config_err("ensemble.snapshot_times must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Built-in scenarios: the US-penny disk on a 0.20 m circle or a
/// 0.15 × 0.20 m ellipse, starting from `φ₀ = π/2`, `Ω = 10`, `ω = 0.2`.
pub fn preset(name: &str) -> ExperimentResult<ScenarioConfig> {
    let (mode, a, ensemble) = match name {
        "elastic-circle" => (ImpactMode::Elastic, 0.20, None),
        "plastic-circle" => (ImpactMode::Plastic, 0.20, None),
        "elastic-ellipse" => (ImpactMode::Elastic, 0.15, None),
        "plastic-ellipse" => (ImpactMode::Plastic, 0.15, None),
        "ensemble" => (
            ImpactMode::Elastic,
            0.20,
            Some(EnsembleConfig {
                count: 100,
                perturb_bound: 0.005,
                rng_seed: 2019,
                snapshot_times: default_snapshot_times(),
            }),
        ),
        _ => {
            return Err(config_err(format!("unknown preset '{name}' (known: {})", PRESETS.join(", "))));
        }
    };
    Ok(ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        params: PennyParams::us_penny(),
        table: TableParams { a, b: 0.20 },
        initial: InitialConditions {
            x0: 0.0,
            y0: 0.0,
            theta0: 0.0,
            phi0: std::f64::consts::FRAC_PI_2,
            thetadot0: 10.0,
            phidot0: 0.2,
        },
        engine: EngineOptions { impact_mode: mode, ..EngineOptions::default() },
        ensemble,
        output_dir: PathBuf::from("out").join(name),
    })
}

/// 17 significant digits: enough for an exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn state_fields(s: &PennyState) -> [f64; 8] {
    [s.x, s.y, s.theta, s.phi, s.xdot, s.ydot, s.thetadot, s.phidot]
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub trace: ExecutionTrace,
    pub trajectory_path: PathBuf,
    pub events_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Run one scenario and write `trajectory.csv`, `events.csv` and
/// `summary.json` into `config.output_dir`.
///
/// If the engine stops on an error, the files are still written and
/// [`ExperimentError::Engine`] is returned afterwards.
pub fn run_scenario(config: &ScenarioConfig) -> ExperimentResult<ScenarioReport> {
    config.validate()?;
    let system = PennySystem::new(config.params, config.table).map_err(config_err)?;
    let state0 = config.initial_state();
    let trace = system.simulate(&state0, &config.engine).map_err(config_err)?;
    log::info!(
        "{}: {} impacts, terminated by {}",
        config.output_dir.display(),
        trace.impact_count(),
        trace.termination
    );

    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let report = ScenarioReport {
        trajectory_path: dir.join("trajectory.csv"),
        events_path: dir.join("events.csv"),
        summary_path: dir.join("summary.json"),
        trace,
    };
    write_trajectory(&report.trajectory_path, &system, &report.trace)?;
    write_events(&report.events_path, &report.trace)?;
    write_summary(&report.summary_path, config, &system, &report.trace)?;

    if let Termination::Error(msg) = &report.trace.termination {
        return Err(ExperimentError::Engine(msg.clone()));
    }
    Ok(report)
}

fn write_trajectory(path: &Path, system: &PennySystem, trace: &ExecutionTrace) -> ExperimentResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for arc in &trace.arcs {
        for (t, s) in &arc.samples {
            let mut row = Vec::with_capacity(TRAJECTORY_HEADER.len());
            row.push(fmt_f64(*t));
            row.extend(state_fields(s).iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(s.kinetic_energy(&system.params)));
            row.push(fmt_f64(system.contact_h(s, Side::Front)));
            row.push(fmt_f64(system.contact_h(s, Side::Back)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_events(path: &Path, trace: &ExecutionTrace) -> ExperimentResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVENTS_HEADER)?;
    for ev in &trace.events {
        let lambda = |k: usize| ev.lambdas.get(k).map_or_else(String::new, |v| fmt_f64(*v));
        let alpha = if trace.mode.is_constrained() { fmt_f64(ev.alpha) } else { String::new() };
        w.write_record([
            ev.index.to_string(),
            fmt_f64(ev.time),
            ev.side.as_str().to_string(),
            trace.mode.to_string(),
            alpha,
            lambda(0),
            lambda(1),
            fmt_f64(ev.energy_before),
            fmt_f64(ev.energy_after),
            ev.grazing.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    termination: String,
    impact_count: usize,
    grazing_count: usize,
    end_time: f64,
    energy_drift_rel: f64,
    config_echo: &'a ScenarioConfig,
}

fn write_summary(
    path: &Path,
    config: &ScenarioConfig,
    system: &PennySystem,
    trace: &ExecutionTrace,
) -> ExperimentResult<()> {
    let e0 = config.initial_state().kinetic_energy(&system.params);
    let e1 = trace.final_state().map_or(e0, |s| s.kinetic_energy(&system.params));
    let summary = Summary {
        termination: trace.termination.to_string(),
        impact_count: trace.impact_count(),
        grazing_count: trace.events.len() - trace.impact_count(),
        end_time: trace.end_time(),
        energy_drift_rel: if e0 > 0.0 { (e1 - e0) / e0 } else { 0.0 },
        config_echo: config,
    };
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, &summary)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// One ensemble member: its perturbed start and the state at each snapshot
/// time, or `None` where the run did not reach that time.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberOutcome {
    pub member: usize,
    pub initial: PennyState,
    pub snapshots: Vec<Option<PennyState>>,
    pub termination: Termination,
}

impl MemberOutcome {
    pub fn failed(&self) -> bool {
        self.snapshots.iter().any(Option::is_none)
    }
}

/// Start state of member `i`: the base rates shifted by independent uniform
/// draws in `(-bound, bound)` from a generator seeded with `rng_seed + i`.
pub fn member_initial(config: &ScenarioConfig, ens: &EnsembleConfig, member: usize) -> PennyState {
    let mut ic = config.initial;
    if ens.perturb_bound > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(ens.rng_seed.wrapping_add(member as u64));
        let b = ens.perturb_bound;
        ic.thetadot0 += rng.random_range(-b..b);
        ic.phidot0 += rng.random_range(-b..b);
    }
    ic.state(&config.params)
}

/// Simulate every ensemble member up to the last snapshot time.
///
/// The impact budget is lifted so each member runs for the whole horizon;
/// members that fail are reported, not propagated.
pub fn ensemble_members(config: &ScenarioConfig, execution: Execution) -> ExperimentResult<Vec<MemberOutcome>> {
    config.validate()?;
    let ens = config.ensemble.as_ref().ok_or_else(|| config_err("config has no [ensemble] section"))?;
    let system = PennySystem::new(config.params, config.table).map_err(config_err)?;
    let horizon = ens.snapshot_times.iter().copied().fold(0.0, f64::max);
    let opts = EngineOptions { t_max: horizon.max(f64::MIN_POSITIVE), max_impacts: usize::MAX, ..config.engine };

    Ok(map_indexed(ens.count, execution, |member| {
        let initial = member_initial(config, ens, member);
        match system.simulate(&initial, &opts) {
            Ok(trace) => MemberOutcome {
                member,
                initial,
                snapshots: ens.snapshot_times.iter().map(|&t| trace.state_at(t, &config.params)).collect(),
                termination: trace.termination,
            },
            Err(e) => MemberOutcome {
                member,
                initial,
                snapshots: vec![None; ens.snapshot_times.len()],
                termination: Termination::Error(e.to_string()),
            },
        }
    }))
}

#[derive(Debug, Clone)]
pub struct EnsembleReport {
    pub members: Vec<MemberOutcome>,
    pub snapshot_paths: Vec<PathBuf>,
}

impl EnsembleReport {
    pub fn failed_count(&self) -> usize {
        self.members.iter().filter(|m| m.failed()).count()
    }
}

pub fn snapshot_file_name(t: f64) -> String {
    format!("snapshot_t{t}.csv")
}

/// Run the ensemble and write one `snapshot_t{T}.csv` per snapshot time.
pub fn run_ensemble(config: &ScenarioConfig) -> ExperimentResult<EnsembleReport> {
    run_ensemble_with(config, Execution::default())
}

pub fn run_ensemble_with(config: &ScenarioConfig, execution: Execution) -> ExperimentResult<EnsembleReport> {
    let members = ensemble_members(config, execution)?;
    let ens = config.ensemble.as_ref().expect("validated by ensemble_members");
    fs::create_dir_all(&config.output_dir)?;

    let mut snapshot_paths = Vec::with_capacity(ens.snapshot_times.len());
    for (k, &t) in ens.snapshot_times.iter().enumerate() {
        let path = config.output_dir.join(snapshot_file_name(t));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(SNAPSHOT_HEADER)?;
        for m in &members {
            let mut row = vec![m.member.to_string()];
            match &m.snapshots[k] {
                Some(s) => {
                    row.extend(state_fields(s).iter().map(|v| fmt_f64(*v)));
                    row.push("ok".into());
                }
                None => {
                    row.extend(std::iter::repeat_n(fmt_f64(f64::NAN), 8));
                    row.push("failed".into());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        snapshot_paths.push(path);
    }

    let report = EnsembleReport { members, snapshot_paths };
    if report.failed_count() > 0 {
        log::warn!("{} of {} ensemble members failed", report.failed_count(), report.members.len());
    }
    Ok(report)
}

/// Largest distance between any two disk centres.
pub fn positional_spread(states: &[PennyState]) -> f64 {
    let mut spread: f64 = 0.0;
    for (i, a) in states.iter().enumerate() {
        for b in &states[i + 1..] {
            spread = spread.max((a.x - b.x).hypot(a.y - b.y));
        }
    }
    spread
}
