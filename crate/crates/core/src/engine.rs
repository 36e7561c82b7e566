//! Hybrid execution of the rolling disk on a table.
//!
//! An execution alternates exact free-flow arcs with impact events. The next
//! impact is located by sampling the closed-form flow on a fixed grid until
//! one of the two contact functions changes sign, then bisecting that bracket
//! to `|H| < root_tol`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConstraintSet, MetricTensor};
use crate::impacts::{elastic_impact, plastic_impact, specular_reflect, ImpactChart, ImpactOutcome, GRAZING_TOL};
use crate::penny::{
    closed_form_flow, contact_differential, contact_rate, contact_value, free_flow, impact_chart, penny_constraints,
    penny_metric, penny_ode_rhs, PennyParams, PennyState, Side, TableParams,
};

const MAX_BISECTIONS: usize = 200;

/// Which impact map the engine applies at the wall.
///
/// `Specular` drops the rolling constraints altogether: the disk slides
/// freely between impacts and bounces with the unconstrained map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ImpactMode {
    Elastic,
    Plastic,
    Specular { restitution: f64 },
}

impl ImpactMode {
    pub fn is_constrained(self) -> bool {
        !matches!(self, ImpactMode::Specular { .. })
    }

    pub fn name(self) -> &'static str {
        match self {
            ImpactMode::Elastic => "elastic",
            ImpactMode::Plastic => "plastic",
            ImpactMode::Specular { .. } => "specular",
        }
    }
}

impl fmt::Display for ImpactMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImpactMode::Specular { restitution } if *restitution != 1.0 => {
                write!(f, "specular:{restitution}")
            }
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for ImpactMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "elastic" => Ok(ImpactMode::Elastic),
            "plastic" => Ok(ImpactMode::Plastic),
            "specular" => Ok(ImpactMode::Specular { restitution: 1.0 }),
            _ => {
                let e = s
                    .strip_prefix("specular:")
                    .ok_or_else(|| format!("unknown impact mode '{s}' (elastic, plastic, specular[:e])"))?;
                let restitution: f64 = e.parse().map_err(|_| format!("bad restitution '{e}'"))?;
                Ok(ImpactMode::Specular { restitution })
            }
        }
    }
}

impl TryFrom<String> for ImpactMode {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<ImpactMode> for String {
    fn from(mode: ImpactMode) -> String {
        mode.to_string()
    }
}

/// Engine settings. Fields left out of a config file take their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineOptions {
    pub impact_mode: ImpactMode,
    /// Stop after this many (non-grazing) impacts.
    pub max_impacts: usize,
    pub t_max: f64,
    /// Sampling step when bracketing a boundary crossing.
    pub scan_dt: f64,
    /// Bisection stops once `|H| < root_tol`.
    pub root_tol: f64,
    /// Spacing of recorded trajectory samples.
    pub record_dt: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            impact_mode: ImpactMode::Elastic,
            max_impacts: 20,
            t_max: 1000.0,
            scan_dt: 1e-3,
            root_tol: 1e-12,
            record_dt: 0.01,
        }
    }
}

impl EngineOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.max_impacts == 0 {
            return bad("max_impacts must be at least 1".into());
        }
        for (name, value) in [
            ("t_max", self.t_max),
            ("scan_dt", self.scan_dt),
            ("root_tol", self.root_tol),
            ("record_dt", self.record_dt),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return bad(format!("{name} must be positive, got {value}"));
            }
        }
        if let ImpactMode::Specular { restitution } = self.impact_mode {
            // e = 0 leaves the disk sliding along the wall, which the free flow cannot follow
            if !(restitution > 0.0 && restitution <= 1.0) {
                return bad(format!("engine restitution must lie in (0, 1], got {restitution}"));
            }
        }
        Ok(())
    }
}

/// Exact motion between impacts for the given mode.
pub fn flow(state: &PennyState, params: &PennyParams, mode: ImpactMode, t: f64) -> PennyState {
    if mode.is_constrained() {
        closed_form_flow(state, params, t)
    } else {
        free_flow(state, t)
    }
}

/// Classical fourth-order Runge–Kutta on the rolling equations of motion.
pub fn rk4_flow(state: &PennyState, params: &PennyParams, t: f64, dt: f64) -> PennyState {
    assert!(dt > 0.0, "rk4 step must be positive");
    if t == 0.0 {
        return *state;
    }
    let steps = (t.abs() / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let pack = |s: &PennyState| [s.x, s.y, s.theta, s.phi, s.xdot, s.ydot, s.thetadot, s.phidot];
    let unpack = |y: &[f64; 8]| PennyState {
        x: y[0],
        y: y[1],
        theta: y[2],
        phi: y[3],
        xdot: y[4],
        ydot: y[5],
        thetadot: y[6],
        phidot: y[7],
    };
    let rhs = |y: &[f64; 8]| penny_ode_rhs(&unpack(y), params);
    let axpy = |y: &[f64; 8], k: &[f64; 8], a: f64| {
        let mut out = *y;
        out.iter_mut().zip(k).for_each(|(o, ki)| *o += a * ki);
        out
    };
    let mut y = pack(state);
    for _ in 0..steps {
        let k1 = rhs(&y);
        let k2 = rhs(&axpy(&y, &k1, 0.5 * h));
        let k3 = rhs(&axpy(&y, &k2, 0.5 * h));
        let k4 = rhs(&axpy(&y, &k3, h));
        for i in 0..8 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    unpack(&y)
}

/// Where and when the flow next reaches the wall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpactHit {
    /// Time from the current state.
    pub time: f64,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactEvent {
    pub index: usize,
    pub time: f64,
    pub side: Side,
    /// Boundary state with the arrival velocity.
    pub pre: PennyState,
    /// Boundary state with the departure velocity.
    pub post: PennyState,
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub energy_before: f64,
    pub energy_after: f64,
    pub grazing: bool,
    /// `H` on the impacting side at the event configuration.
    pub contact_h: f64,
}

/// One continuous piece of an execution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Arc {
    pub t_start: f64,
    pub t_end: f64,
    pub start: PennyState,
    pub samples: Vec<(f64, PennyState)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TMax,
    MaxImpacts,
    Error(String),
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::TMax => f.write_str("t_max"),
            Termination::MaxImpacts => f.write_str("max_impacts"),
            Termination::Error(msg) => write!(f, "error: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionTrace {
    pub mode: ImpactMode,
    pub arcs: Vec<Arc>,
    pub events: Vec<ImpactEvent>,
    pub termination: Termination,
}

impl ExecutionTrace {
    pub fn impact_count(&self) -> usize {
        self.events.iter().filter(|e| !e.grazing).count()
    }

    pub fn end_time(&self) -> f64 {
        self.arcs.last().map_or(0.0, |a| a.t_end)
    }

    /// State at absolute time `t`, or `None` outside the executed interval.
    ///
    /// At an impact time the post-impact state is returned.
    pub fn state_at(&self, t: f64, params: &PennyParams) -> Option<PennyState> {
        let idx = self.arcs.partition_point(|a| a.t_start <= t);
        let arc = &self.arcs[idx.checked_sub(1)?];
        if t > arc.t_end {
            return None;
        }
        Some(flow(&arc.start, params, self.mode, t - arc.t_start))
    }

    pub fn initial_state(&self) -> Option<PennyState> {
        self.arcs.first().map(|a| a.start)
    }

    pub fn final_state(&self) -> Option<PennyState> {
        let last = self.arcs.last()?;
        if let Some(ev) = self.events.last() {
            if ev.time >= last.t_end {
                return Some(ev.post);
            }
        }
        last.samples.last().map(|(_, s)| *s)
    }
}

/// Immutable per-execution context: parameters plus the prebuilt geometry.
#[derive(Debug, Clone)]
pub struct PennySystem {
    pub params: PennyParams,
    pub table: TableParams,
    metric: MetricTensor,
    constraints: ConstraintSet,
    charts: [ImpactChart; 2],
}

impl PennySystem {
    pub fn new(params: PennyParams, table: TableParams) -> Result<Self> {
        params.validate()?;
        table.validate(&params)?;
        Ok(Self {
            params,
            table,
            metric: penny_metric(&params),
            constraints: penny_constraints(&params),
            charts: [impact_chart(&table, &params, Side::Front), impact_chart(&table, &params, Side::Back)],
        })
    }

    pub fn metric(&self) -> &MetricTensor {
        &self.metric
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn chart(&self, side: Side) -> &ImpactChart {
        match side {
            Side::Front => &self.charts[0],
            Side::Back => &self.charts[1],
        }
    }

    pub fn contact_h(&self, state: &PennyState, side: Side) -> f64 {
        contact_value(state, &self.table, &self.params, side)
    }

    /// Apply the impact map of `mode` at the configuration of `state`.
    pub fn apply_impact(&self, state: &PennyState, side: Side, mode: ImpactMode) -> Result<ImpactOutcome> {
        let q = state.configuration();
        let v = state.velocity();
        let chart = self.chart(side);
        match mode {
            ImpactMode::Elastic => elastic_impact(&self.metric, &self.constraints, &q, chart, &v),
            ImpactMode::Plastic => plastic_impact(&self.metric, &self.constraints, &q, chart, &v),
            ImpactMode::Specular { restitution } => specular_reflect(&self.metric, &q, chart, &v, restitution),
        }
    }

    /// Scan step actually used: `opts.scan_dt`, shrunk so a contact point
    /// moves less than `R/2` per step.
    pub fn effective_scan_dt(&self, state: &PennyState, opts: &EngineOptions) -> f64 {
        let r = self.params.radius;
        let speed = if opts.impact_mode.is_constrained() {
            r * state.thetadot.abs() + r * state.phidot.abs()
        } else {
            state.xdot.hypot(state.ydot) + r * state.phidot.abs()
        };
        if opts.scan_dt * speed < 0.5 * r {
            opts.scan_dt
        } else {
            0.25 * r / speed
        }
    }

    fn h_along(&self, state: &PennyState, mode: ImpactMode, side: Side, t: f64) -> f64 {
        self.contact_h(&flow(state, &self.params, mode, t), side)
    }

    fn rate_along(&self, state: &PennyState, mode: ImpactMode, side: Side, t: f64) -> f64 {
        contact_rate(&flow(state, &self.params, mode, t), &self.table, &self.params, side)
    }

    /// First time in `(start, horizon]` where `H_side` reaches zero.
    ///
    /// Besides sign changes at the samples, a sample interval where `dH/dt`
    /// turns from positive to negative is searched for its maximum, so a
    /// shallow excursion past the wall between two samples is not missed.
    fn scan_side(
        &self,
        state: &PennyState,
        opts: &EngineOptions,
        side: Side,
        start: f64,
        horizon: f64,
        dt: f64,
    ) -> Option<f64> {
        let mode = opts.impact_mode;
        let mut t_a = start;
        let mut h_a = self.h_along(state, mode, side, t_a);
        let mut rate_a = self.rate_along(state, mode, side, t_a);
        let mut k = 1u64;
        while t_a < horizon {
            let t_b = (start + k as f64 * dt).min(horizon);
            k += 1;
            let h_b = self.h_along(state, mode, side, t_b);
            if h_b >= 0.0 && h_a < 0.0 {
                return Some(self.bisect(state, mode, side, t_a, t_b));
            }
            let rate_b = self.rate_along(state, mode, side, t_b);
            if rate_a > 0.0 && rate_b < 0.0 && h_a < 0.0 {
                let t_peak = self.peak(state, mode, side, t_a, t_b);
                if self.h_along(state, mode, side, t_peak) >= 0.0 {
                    return Some(self.bisect(state, mode, side, t_a, t_peak));
                }
            }
            t_a = t_b;
            h_a = h_b;
            rate_a = rate_b;
        }
        None
    }

    /// Bisect on the sign of `dH/dt` for the interior maximum of `H`.
    fn peak(&self, state: &PennyState, mode: ImpactMode, side: Side, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.rate_along(state, mode, side, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Bisect a bracket `H(lo) < 0 ≤ H(hi)` down to adjacent floats and return
    /// whichever end has the smaller `|H|`.
    fn bisect(&self, state: &PennyState, mode: ImpactMode, side: Side, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.h_along(state, mode, side, mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (h_lo, h_hi) = (self.h_along(state, mode, side, lo), self.h_along(state, mode, side, hi));
        if h_hi.abs() < h_lo.abs() {
            hi
        } else {
            lo
        }
    }

    /// Time after which detection on a touching side is re-armed.
    fn liftoff_time(&self, state: &PennyState, opts: &EngineOptions, side: Side, dt: f64) -> Result<f64> {
        let rate = contact_rate(state, &self.table, &self.params, side);
        let cap = 10.0 * dt;
        let mut eps = if rate < 0.0 { (100.0 * opts.root_tol / -rate).clamp(1e-12, cap) } else { cap };
        loop {
            let h = self.h_along(state, opts.impact_mode, side, eps);
            if h < -opts.root_tol {
                return Ok(eps);
            }
            if eps >= cap {
                return if h < 0.0 {
                    Ok(eps)
                } else {
                    Err(Error::InvalidState(format!(
                        "{} contact does not leave the wall after touching it (H = {h:e})",
                        side.as_str()
                    )))
                };
            }
            eps = (2.0 * eps).min(cap);
        }
    }

    /// Next boundary crossing within `horizon` seconds.
    pub fn find_next_impact_within(
        &self,
        state: &PennyState,
        opts: &EngineOptions,
        horizon: f64,
    ) -> Result<Option<ImpactHit>> {
        let dt = self.effective_scan_dt(state, opts);
        let mut starts = [0.0; 2];
        for (slot, side) in starts.iter_mut().zip(Side::BOTH) {
            let h0 = self.contact_h(state, side);
            if h0 > opts.root_tol {
                return Err(Error::InvalidState(format!(
                    "{} contact is outside the table (H = {h0:e})",
                    side.as_str()
                )));
            }
            if h0 >= -opts.root_tol {
                let rate = contact_rate(state, &self.table, &self.params, side);
                let dh = contact_differential(state.configuration().as_slice(), &self.table, &self.params, side);
                let scale = state.velocity().norm() * dh.iter().map(|c| c * c).sum::<f64>().sqrt();
                // a grazing touch leaves the velocity tangent up to GRAZING_TOL
                if rate > GRAZING_TOL * scale {
                    return Err(Error::InvalidState(format!(
                        "{} contact is on the wall and moving outward",
                        side.as_str()
                    )));
                }
                *slot = self.liftoff_time(state, opts, side, dt)?;
            }
        }
        if state.is_at_rest() {
            return Ok(None);
        }

        let front = self.scan_side(state, opts, Side::Front, starts[0], horizon, dt);
        let back_horizon = front.map_or(horizon, |t| (t + dt).min(horizon));
        let back = if starts[1] < back_horizon {
            self.scan_side(state, opts, Side::Back, starts[1], back_horizon, dt)
        } else {
            None
        };
        match (front, back) {
            (None, None) => Ok(None),
            (Some(t), None) => Ok(Some(ImpactHit { time: t, side: Side::Front })),
            (None, Some(t)) => Ok(Some(ImpactHit { time: t, side: Side::Back })),
            (Some(tf), Some(tb)) => {
                if (tf - tb).abs() < opts.root_tol {
                    Err(Error::SimultaneousContact { time: tf })
                } else if tf < tb {
                    Ok(Some(ImpactHit { time: tf, side: Side::Front }))
                } else {
                    Ok(Some(ImpactHit { time: tb, side: Side::Back }))
                }
            }
        }
    }

    /// Flow to the given hit and apply the impact map there.
    pub fn step(
        &self,
        state: &PennyState,
        t_now: f64,
        hit: ImpactHit,
        opts: &EngineOptions,
        index: usize,
    ) -> Result<(PennyState, ImpactEvent)> {
        let pre = flow(state, &self.params, opts.impact_mode, hit.time);
        let outcome = self.apply_impact(&pre, hit.side, opts.impact_mode)?;
        let post = pre.with_velocity(outcome.post_velocity.as_slice());
        let event = ImpactEvent {
            index,
            time: t_now + hit.time,
            side: hit.side,
            pre,
            post,
            alpha: outcome.multiplier_alpha,
            lambdas: outcome.multiplier_lambdas.iter().copied().collect(),
            energy_before: outcome.energy_before,
            energy_after: outcome.energy_after,
            grazing: outcome.grazing,
            contact_h: self.contact_h(&pre, hit.side),
        };
        Ok((post, event))
    }

    fn record_arc(&self, start: &PennyState, t_start: f64, duration: f64, opts: &EngineOptions) -> Arc {
        let mut samples = Vec::new();
        let mut k = 0u64;
        loop {
            let dt = k as f64 * opts.record_dt;
            if dt >= duration {
                break;
            }
            samples.push((t_start + dt, flow(start, &self.params, opts.impact_mode, dt)));
            k += 1;
        }
        samples.push((t_start + duration, flow(start, &self.params, opts.impact_mode, duration)));
        Arc { t_start, t_end: t_start + duration, start: *start, samples }
    }

    /// Run an execution from `state0` until `t_max` or `max_impacts`.
    ///
    /// Invalid inputs are errors; failures after the start end the trace with
    /// [`Termination::Error`] and keep everything recorded so far.
    pub fn simulate(&self, state0: &PennyState, opts: &EngineOptions) -> Result<ExecutionTrace> {
        opts.validate()?;
        for side in Side::BOTH {
            let h = self.contact_h(state0, side);
            if h.is_nan() || h >= 0.0 {
                return Err(Error::InvalidState(format!(
                    "initial {} contact is not strictly inside the table (H = {h:e})",
                    side.as_str()
                )));
            }
        }
        if opts.impact_mode.is_constrained() && !state0.satisfies_rolling(self.params.radius) {
            return Err(Error::InvalidState("initial velocity violates the rolling constraints".into()));
        }

        let mut trace = ExecutionTrace {
            mode: opts.impact_mode,
            arcs: Vec::new(),
            events: Vec::new(),
            termination: Termination::TMax,
        };
        // grazing contacts do not count as impacts but must not loop forever
        let event_cap = opts.max_impacts.saturating_mul(10).saturating_add(100);
        let mut state = *state0;
        let mut t = 0.0;
        let mut impacts = 0;
        loop {
            let horizon = opts.t_max - t;
            let hit = match self.find_next_impact_within(&state, opts, horizon) {
                Ok(hit) => hit,
                Err(e) => {
                    trace.termination = Termination::Error(e.to_string());
                    break;
                }
            };
            let Some(hit) = hit else {
                trace.arcs.push(self.record_arc(&state, t, horizon.max(0.0), opts));
                trace.termination = Termination::TMax;
                break;
            };
            trace.arcs.push(self.record_arc(&state, t, hit.time, opts));
            match self.step(&state, t, hit, opts, trace.events.len()) {
                Ok((post, event)) => {
                    if !event.grazing {
                        impacts += 1;
                    }
                    t = event.time;
                    state = post;
                    trace.events.push(event);
                }
                Err(e) => {
                    trace.termination = Termination::Error(e.to_string());
                    break;
                }
            }
            if impacts >= opts.max_impacts {
                trace.termination = Termination::MaxImpacts;
                break;
            }
            if trace.events.len() >= event_cap {
                trace.termination = Termination::Error("too many grazing contacts".into());
                break;
            }
        }
        Ok(trace)
    }
}

/// Next impact from `state`, searching up to `opts.t_max` ahead.
pub fn find_next_impact(
    state: &PennyState,
    table: &TableParams,
    params: &PennyParams,
    opts: &EngineOptions,
) -> Result<Option<ImpactHit>> {
    PennySystem::new(*params, *table)?.find_next_impact_within(state, opts, opts.t_max)
}

/// Flow to the next impact and apply the impact map. `None` if no impact
/// happens before `opts.t_max`.
pub fn step(
    state: &PennyState,
    table: &TableParams,
    params: &PennyParams,
    opts: &EngineOptions,
) -> Result<Option<(PennyState, ImpactEvent)>> {
    let system = PennySystem::new(*params, *table)?;
    match system.find_next_impact_within(state, opts, opts.t_max)? {
        Some(hit) => system.step(state, 0.0, hit, opts, 0).map(Some),
        None => Ok(None),
    }
}

pub fn simulate(
    state0: &PennyState,
    table: &TableParams,
    params: &PennyParams,
    opts: &EngineOptions,
) -> Result<ExecutionTrace> {
    PennySystem::new(*params, *table)?.simulate(state0, opts)
}
