//! The vertical rolling disk ("penny") on an elliptical table.
//!
//! Configuration `q = (x, y, θ, φ)`: contact point, rolling angle, heading.
//! Rolling without slipping imposes `ẋ = Rθ̇ cosφ` and `ẏ = Rθ̇ sinφ`.
//! Between impacts `θ̇ = Ω` and `φ̇ = ω` are constant and the contact point
//! traces a circle of radius `RΩ/ω` (a straight line when `ω = 0`).
//!
//! Angles are kept unwrapped.

use std::f64::consts::PI;

use nalgebra::{dvector, DVector, Matrix2, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConstraintSet, MetricTensor, OneForm};
use crate::impacts::ImpactChart;

/// Below this heading rate the free flow uses the straight-line limit.
pub const STRAIGHT_LINE_THRESHOLD: f64 = 1e-10;

/// Contact points must be this close to the boundary for the explicit bounce formulas.
pub const ON_BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PennyParams {
    /// Disk radius `R` (m).
    pub radius: f64,
    /// Mass `m` (kg).
    pub mass: f64,
    /// `I`: moment of inertia about the axle, perpendicular to the disk plane (kg m²).
    pub inertia_roll: f64,
    /// `J`: moment of inertia about a diameter, in the disk plane (kg m²).
    pub inertia_yaw: f64,
}

impl PennyParams {
    /// Homogeneous thin disk: `I = ½mR²`, `J = ¼mR²`.
    pub fn thin_disk(radius: f64, mass: f64) -> Self {
        let mr2 = mass * radius * radius;
        Self { radius, mass, inertia_roll: 0.5 * mr2, inertia_yaw: 0.25 * mr2 }
    }

    /// A US-penny sized disk: R = 1 cm, m = 2.5 g.
    pub fn us_penny() -> Self {
        Self { radius: 0.01, mass: 0.0025, inertia_roll: 1.25e-7, inertia_yaw: 6.25e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("radius", self.radius),
            ("mass", self.mass),
            ("inertia_roll", self.inertia_roll),
            ("inertia_yaw", self.inertia_yaw),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// `I + mR²`, the effective rolling inertia.
    pub fn rolling_inertia(&self) -> f64 {
        self.inertia_roll + self.mass * self.radius * self.radius
    }
}

/// Elliptical table `x²/a² + y²/b² < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableParams {
    pub a: f64,
    pub b: f64,
}

impl TableParams {
    pub fn circle(radius: f64) -> Self {
        Self { a: radius, b: radius }
    }

    pub fn validate(&self, penny: &PennyParams) -> Result<()> {
        for (name, value) in [("a", self.a), ("b", self.b)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!("table semi-axis {name} must be positive, got {value}")));
            }
        }
        if self.a < 5.0 * penny.radius || self.b < 5.0 * penny.radius {
            log::warn!(
                "table semi-axes ({}, {}) are small compared to the disk radius {}",
                self.a,
                self.b,
                penny.radius
            );
        }
        Ok(())
    }

    /// `h(x, y) = x²/a² + y²/b² − 1`.
    pub fn h(&self, x: f64, y: f64) -> f64 {
        x * x / (self.a * self.a) + y * y / (self.b * self.b) - 1.0
    }

    pub fn grad_h(&self, x: f64, y: f64) -> (f64, f64) {
        (2.0 * x / (self.a * self.a), 2.0 * y / (self.b * self.b))
    }
}

/// Which antipodal end of the disk touches the wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Front,
    Back,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Front, Side::Back];

    pub fn sign(self) -> f64 {
        match self {
            Side::Front => 1.0,
            Side::Back => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Front => "front",
            Side::Back => "back",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PennyState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub phi: f64,
    pub xdot: f64,
    pub ydot: f64,
    /// `Ω`
    pub thetadot: f64,
    /// `ω`
    pub phidot: f64,
}

impl PennyState {
    /// A state rolling without slipping with spin rate `Ω` and heading rate `ω`.
    pub fn rolling(x: f64, y: f64, theta: f64, phi: f64, spin: f64, turn: f64, radius: f64) -> Self {
        Self {
            x,
            y,
            theta,
            phi,
            xdot: radius * spin * phi.cos(),
            ydot: radius * spin * phi.sin(),
            thetadot: spin,
            phidot: turn,
        }
    }

    pub fn configuration(&self) -> DVector<f64> {
        dvector![self.x, self.y, self.theta, self.phi]
    }

    pub fn velocity(&self) -> DVector<f64> {
        dvector![self.xdot, self.ydot, self.thetadot, self.phidot]
    }

    pub fn with_velocity(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), 4, "penny velocity has four components");
        Self { xdot: v[0], ydot: v[1], thetadot: v[2], phidot: v[3], ..*self }
    }

    /// Velocities negated, configuration kept.
    pub fn reversed(&self) -> Self {
        self.with_velocity(&[-self.xdot, -self.ydot, -self.thetadot, -self.phidot])
    }

    /// `(ẋ − Rθ̇ cosφ, ẏ − Rθ̇ sinφ)`.
    pub fn rolling_residual(&self, radius: f64) -> (f64, f64) {
        let (s, c) = self.phi.sin_cos();
        (self.xdot - radius * self.thetadot * c, self.ydot - radius * self.thetadot * s)
    }

    pub fn satisfies_rolling(&self, radius: f64) -> bool {
        let (r1, r2) = self.rolling_residual(radius);
        let tol = 1e-9 * (1.0 + self.thetadot.abs() * radius);
        r1.abs() < tol && r2.abs() < tol
    }

    pub fn kinetic_energy(&self, params: &PennyParams) -> f64 {
        0.5 * (params.mass * (self.xdot * self.xdot + self.ydot * self.ydot)
            + params.inertia_roll * self.thetadot * self.thetadot
            + params.inertia_yaw * self.phidot * self.phidot)
    }

    pub fn is_at_rest(&self) -> bool {
        self.xdot == 0.0 && self.ydot == 0.0 && self.thetadot == 0.0 && self.phidot == 0.0
    }
}

/// `diag(m, m, I, J)`.
pub fn penny_metric(params: &PennyParams) -> MetricTensor {
    MetricTensor::diagonal(&[params.mass, params.mass, params.inertia_roll, params.inertia_yaw])
}

/// `ω¹ = dx − R cosφ dθ`, `ω² = dy − R sinφ dθ`.
pub fn penny_constraints(params: &PennyParams) -> ConstraintSet {
    let r = params.radius;
    let w1 = OneForm::new(4, move |q| dvector![1.0, 0.0, -r * q[3].cos(), 0.0]);
    let w2 = OneForm::new(4, move |q| dvector![0.0, 1.0, -r * q[3].sin(), 0.0]);
    ConstraintSet::new(4, vec![w1, w2]).expect("two forms on a 4-dimensional space")
}

/// Exact rolling motion after time `t`.
///
/// Uses `sin(ωt+φ₀) − sinφ₀ = 2 cos(φ₀ + ωt/2) sin(ωt/2)` (and the cosine
/// analogue) so the formula stays accurate as `ω → 0`; below
/// [`STRAIGHT_LINE_THRESHOLD`] the chord factor `2 sin(ωt/2)/ω` is replaced by `t`.
pub fn closed_form_flow(state: &PennyState, params: &PennyParams, t: f64) -> PennyState {
    let spin = state.thetadot;
    let turn = state.phidot;
    let half = 0.5 * turn * t;
    let chord = if turn.abs() < STRAIGHT_LINE_THRESHOLD { t } else { 2.0 * half.sin() / turn };
    let (s_mid, c_mid) = (state.phi + half).sin_cos();
    let speed = params.radius * spin;
    let phi = state.phi + turn * t;
    let (s, c) = phi.sin_cos();
    PennyState {
        x: state.x + speed * c_mid * chord,
        y: state.y + speed * s_mid * chord,
        theta: state.theta + spin * t,
        phi,
        xdot: speed * c,
        ydot: speed * s,
        thetadot: spin,
        phidot: turn,
    }
}

/// Unconstrained free motion: every coordinate moves at constant velocity.
pub fn free_flow(state: &PennyState, t: f64) -> PennyState {
    PennyState {
        x: state.x + state.xdot * t,
        y: state.y + state.ydot * t,
        theta: state.theta + state.thetadot * t,
        phi: state.phi + state.phidot * t,
        ..*state
    }
}

/// `(ẋ, ẏ, θ̇, φ̇, ẍ, ÿ, θ̈, φ̈)` of the rolling equations of motion.
///
/// `θ̈ = φ̈ = 0`; the linear accelerations come from differentiating the
/// rolling constraints.
pub fn penny_ode_rhs(state: &PennyState, params: &PennyParams) -> [f64; 8] {
    let (s, c) = state.phi.sin_cos();
    let r = params.radius;
    let w = state.thetadot * state.phidot;
    [r * state.thetadot * c, r * state.thetadot * s, state.thetadot, state.phidot, -r * w * s, r * w * c, 0.0, 0.0]
}

/// `(front, back) = (x ± R cosφ, y ± R sinφ)`.
pub fn contact_points(state: &PennyState, params: &PennyParams) -> ([f64; 2], [f64; 2]) {
    let (s, c) = state.phi.sin_cos();
    let r = params.radius;
    ([state.x + r * c, state.y + r * s], [state.x - r * c, state.y - r * s])
}

fn contact_point(x: f64, y: f64, phi: f64, radius: f64, side: Side) -> (f64, f64) {
    let (s, c) = phi.sin_cos();
    let r = side.sign() * radius;
    (x + r * c, y + r * s)
}

/// `H(q) = h(contact point)` on the given side.
pub fn contact_value(state: &PennyState, table: &TableParams, params: &PennyParams, side: Side) -> f64 {
    let (px, py) = contact_point(state.x, state.y, state.phi, params.radius, side);
    table.h(px, py)
}

/// `dH` on the 4-dimensional configuration space:
/// `(h_x, h_y, 0, ±R(h_y cosφ − h_x sinφ))` with partials at the contact point.
pub fn contact_differential(q: &[f64], table: &TableParams, params: &PennyParams, side: Side) -> [f64; 4] {
    let (px, py) = contact_point(q[0], q[1], q[3], params.radius, side);
    let (hx, hy) = table.grad_h(px, py);
    let (s, c) = q[3].sin_cos();
    [hx, hy, 0.0, side.sign() * params.radius * (hy * c - hx * s)]
}

/// `dH(v)`: rate of change of `H` along the current velocity.
pub fn contact_rate(state: &PennyState, table: &TableParams, params: &PennyParams, side: Side) -> f64 {
    let dh = contact_differential(&[state.x, state.y, state.theta, state.phi], table, params, side);
    dh[0] * state.xdot + dh[1] * state.ydot + dh[3] * state.phidot
}

/// The boundary chart `H = h ∘ contact point` for one side of the disk.
pub fn impact_chart(table: &TableParams, params: &PennyParams, side: Side) -> ImpactChart {
    let (t1, p1) = (*table, *params);
    let (t2, p2) = (*table, *params);
    ImpactChart::new(
        move |q| {
            let (px, py) = contact_point(q[0], q[1], q[3], p1.radius, side);
            t1.h(px, py)
        },
        OneForm::new(4, move |q| DVector::from_row_slice(&contact_differential(q.as_slice(), &t2, &p2, side))),
    )
}

/// Closed-form unconstrained bounce of the disk off the wall.
///
/// `θ̇` is untouched; the other velocities move along `∇H` scaled by the
/// impact multiplier
/// `C = −2 dH(v) / ((h_x² + h_y²)/m + R²(h_y cosφ − h_x sinφ)²/J)`.
/// Kept independent of the generic machinery for cross-checking.
pub fn penny_preimpact_map(
    state: &PennyState,
    table: &TableParams,
    params: &PennyParams,
    side: Side,
) -> Result<[f64; 4]> {
    let (px, py) = contact_point(state.x, state.y, state.phi, params.radius, side);
    let h_val = table.h(px, py);
    if h_val.abs() > ON_BOUNDARY_TOL {
        return Err(Error::InvalidState(format!("contact point is off the boundary (H = {h_val:e})")));
    }
    let (hx, hy) = table.grad_h(px, py);
    let (s, c) = state.phi.sin_cos();
    let r = side.sign() * params.radius;
    let turn_coupling = hy * c - hx * s;
    let m = params.mass;
    let j = params.inertia_yaw;
    let denom = (hx * hx + hy * hy) / m + r * r * turn_coupling * turn_coupling / j;
    if denom == 0.0 {
        return Err(Error::DegenerateChart);
    }
    let numer = hx * state.xdot + hy * state.ydot + r * turn_coupling * state.phidot;
    let impact_c = -2.0 * numer / denom;
    Ok([
        state.xdot + impact_c / m * hx,
        state.ydot + impact_c / m * hy,
        state.thetadot,
        state.phidot + impact_c / j * r * turn_coupling,
    ])
}

/// The projection onto the rolling distribution as an explicit 4×4 matrix,
/// assembled from its `[A B; C D] / (I + mR²)` block form.
pub fn penny_projection_matrix(phi: f64, params: &PennyParams) -> Matrix4<f64> {
    let (s, c) = phi.sin_cos();
    let (m, r, i) = (params.mass, params.radius, params.inertia_roll);
    let block_a = Matrix2::new(c * c, s * c, s * c, s * s) * (m * r * r);
    let block_b = Matrix2::new(c, 0.0, s, 0.0) * (i * r);
    let block_c = Matrix2::new(c, s, 0.0, 0.0) * (m * r);
    let block_d = Matrix2::new(i, 0.0, 0.0, i + m * r * r);
    let mut full = Matrix4::zeros();
    full.fixed_view_mut::<2, 2>(0, 0).copy_from(&block_a);
    full.fixed_view_mut::<2, 2>(0, 2).copy_from(&block_b);
    full.fixed_view_mut::<2, 2>(2, 0).copy_from(&block_c);
    full.fixed_view_mut::<2, 2>(2, 2).copy_from(&block_d);
    full / params.rolling_inertia()
}

/// Apply [`penny_projection_matrix`] to a velocity.
pub fn project_rolling(phi: f64, params: &PennyParams, v: &[f64; 4]) -> [f64; 4] {
    let out = penny_projection_matrix(phi, params) * Vector4::from_row_slice(v);
    [out[0], out[1], out[2], out[3]]
}

/// Wrap an angle into `(−π, π]` for display.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped == -PI {
        PI
    } else {
        wrapped
    }
}
