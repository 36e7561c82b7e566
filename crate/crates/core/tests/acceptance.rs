//! Acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report reads top to
//! bottom; any failed criterion makes the process exit non-zero.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nonholo::engine::{find_next_impact, EngineOptions, ExecutionTrace, PennySystem};
use nonholo::experiments::{positional_spread, preset, run_ensemble, ScenarioConfig};
use nonholo::geometry::{project_onto_distribution, ConstraintSet, MetricTensor};
use nonholo::impacts::{elastic_impact, plastic_impact, specular_reflect, ImpactChart};
use nonholo::penny::*;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

fn run_preset(name: &str) -> (ScenarioConfig, ExecutionTrace, Duration) {
    let cfg = preset(name).unwrap();
    let system = PennySystem::new(cfg.params, cfg.table).unwrap();
    let start = Instant::now();
    let trace = system.simulate(&cfg.initial_state(), &cfg.engine).unwrap();
    (cfg, trace, start.elapsed())
}

fn rolling_ok(s: &PennyState, radius: f64, tol: f64) -> bool {
    let (r1, r2) = s.rolling_residual(radius);
    let scale = s.velocity().norm();
    r1.abs() <= tol * scale && r2.abs() <= tol * scale
}

/// Random rolling state with the chosen contact on the wall, moving outward.
fn boundary_state(rng: &mut ChaCha8Rng) -> (PennyState, TableParams, Side) {
    let table = if rng.random_bool(0.5) { TableParams::circle(0.2) } else { TableParams { a: 0.15, b: 0.2 } };
    let side = if rng.random_bool(0.5) { Side::Front } else { Side::Back };
    let p = PennyParams::us_penny();
    loop {
        let psi = rng.random_range(0.0..2.0 * PI);
        let phi = rng.random_range(-PI..PI);
        let (px, py) = (table.a * psi.cos(), table.b * psi.sin());
        let r = side.sign() * p.radius;
        let spin = rng.random_range(-20.0..20.0);
        let turn = rng.random_range(-5.0..5.0);
        let mut s = PennyState::rolling(
            px - r * phi.cos(),
            py - r * phi.sin(),
            rng.random_range(-PI..PI),
            phi,
            spin,
            turn,
            p.radius,
        );
        let rate = contact_rate(&s, &table, &p, side);
        let dh = contact_differential(s.configuration().as_slice(), &table, &p, side);
        let scale = s.velocity().norm() * dh.iter().map(|c| c * c).sum::<f64>().sqrt();
        if rate.abs() < 1e-3 * scale {
            continue;
        }
        if rate < 0.0 {
            s = s.reversed();
        }
        return (s, table, side);
    }
}

fn elastic_energy() -> Check {
    let (cfg, trace, elapsed) = run_preset("elastic-circle");
    let p = cfg.params;
    // ½mR²Ω² + ½IΩ² + ½Jω² at Ω = 10, ω = 0.2
    let e0 = 0.5 * p.mass * (p.radius * 10.0f64).powi(2) + 0.5 * p.inertia_roll * 100.0 + 0.5 * p.inertia_yaw * 0.04;
    ensure((e0 - 1.875125e-5).abs() < 1e-15, || format!("initial energy {e0:e}"))?;
    ensure(trace.impact_count() == 20, || format!("{} impacts", trace.impact_count()))?;
    let mut worst: f64 = 0.0;
    for ev in &trace.events {
        worst = worst.max((ev.energy_after - e0).abs() / e0);
        ensure(rolling_ok(&ev.post, p.radius, 1e-10), || format!("impact {} violates rolling", ev.index))?;
    }
    let e_end = trace.final_state().unwrap().kinetic_energy(&p);
    worst = worst.max((e_end - e0).abs() / e0);
    ensure(worst <= 1e-9, || format!("energy drift {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("20 impacts, max drift {worst:.1e}, {elapsed:.0?}"))
}

fn plastic_energy() -> Check {
    let mut detail = Vec::new();
    for name in ["plastic-circle", "plastic-ellipse"] {
        let (cfg, trace, elapsed) = run_preset(name);
        ensure(trace.impact_count() == 20, || format!("{name}: {} impacts", trace.impact_count()))?;
        let mut last = cfg.initial_state().kinetic_energy(&cfg.params);
        let first = last;
        for ev in &trace.events {
            ensure(ev.energy_after <= last * (1.0 + 1e-12), || format!("{name}: energy rises at impact {}", ev.index))?;
            ensure(rolling_ok(&ev.post, cfg.params.radius, 1e-10), || {
                format!("{name}: impact {} violates rolling", ev.index)
            })?;
            last = ev.energy_after;
        }
        ensure(elapsed < Duration::from_secs(1), || format!("{name} took {elapsed:?}"))?;
        detail.push(format!("{name} E {first:.3e} -> {last:.3e}"));
    }
    Ok(detail.join(", "))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn unconstrained_reduction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = 2 + case % 5;
        let g = random_spd(&mut rng, n);
        let metric = MetricTensor::constant(g.clone());
        let normal = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let chart = ImpactChart::hyperplane(normal.clone(), 0.0);
        let q = DVector::zeros(n);
        let mut v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        if normal.dot(&v) < 0.0 {
            v = -v;
        }
        // v − 2 dh(v) / (dhᵀ g⁻¹ dh) · g⁻¹ dh
        let grad = g.clone().lu().solve(&normal).unwrap();
        let expected = &v - &grad * (2.0 * normal.dot(&v) / normal.dot(&grad));
        let empty = ConstraintSet::empty(n);
        let spec = specular_reflect(&metric, &q, &chart, &v, 1.0).map_err(|e| e.to_string())?;
        let el = elastic_impact(&metric, &empty, &q, &chart, &v).map_err(|e| e.to_string())?;
        let pl = plastic_impact(&metric, &empty, &q, &chart, &v).map_err(|e| e.to_string())?;
        for out in [&spec.post_velocity, &el.post_velocity, &pl.post_velocity] {
            worst = worst.max(rel_diff(out, &expected));
        }
        let stick = specular_reflect(&metric, &q, &chart, &v, 0.0).map_err(|e| e.to_string())?;
        let dh_post = normal.dot(&stick.post_velocity).abs();
        ensure(dh_post <= 1e-12 * normal.norm() * v.norm(), || format!("e=0 leaves dh(v+) = {dh_post:e}"))?;
    }
    ensure(worst <= 1e-12, || format!("max relative difference {worst:e}"))?;
    Ok(format!("100 states, max relative difference {worst:.1e}"))
}

fn dual_path() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = PennyParams::us_penny();
    let metric = penny_metric(&p);
    let cs = penny_constraints(&p);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (s, table, side) = boundary_state(&mut rng);
        let explicit = DVector::from_row_slice(&penny_preimpact_map(&s, &table, &p, side).map_err(|e| e.to_string())?);
        let generic =
            specular_reflect(&metric, &s.configuration(), &impact_chart(&table, &p, side), &s.velocity(), 1.0)
                .map_err(|e| e.to_string())?;
        worst = worst.max(rel_diff(&explicit, &generic.post_velocity));

        let mat = penny_projection_matrix(s.phi, &p);
        for k in 0..4 {
            let e_k = DVector::from_fn(4, |i, _| if i == k { 1.0 } else { 0.0 });
            let col = project_onto_distribution(&cs, &metric, &s.configuration(), &e_k).map_err(|e| e.to_string())?;
            let explicit_col = DVector::from_iterator(4, mat.column(k).iter().copied());
            worst = worst.max((&explicit_col - &col).amax() / col.amax().max(1.0));
        }
    }
    ensure(worst <= 1e-12, || format!("max relative difference {worst:e}"))?;
    Ok(format!("50 boundary states, max relative difference {worst:.1e}"))
}

/// Brute-force elastic solve for the disk: `v⁺ = v + g⁻¹(λ₁ω¹ + λ₂ω² + α dH)`,
/// eliminate `λ` from the two rolling conditions by Cramer's rule, then take
/// both roots of the energy quadratic from the textbook formula.
fn brute_force_elastic(s: &PennyState, p: &PennyParams, dh: [f64; 4]) -> [(f64, [f64; 2], [f64; 4]); 2] {
    let ginv = [1.0 / p.mass, 1.0 / p.mass, 1.0 / p.inertia_roll, 1.0 / p.inertia_yaw];
    let (sn, cs) = s.phi.sin_cos();
    let w1 = [1.0, 0.0, -p.radius * cs, 0.0];
    let w2 = [0.0, 1.0, -p.radius * sn, 0.0];
    let v = [s.xdot, s.ydot, s.thetadot, s.phidot];
    let pair = |a: &[f64; 4], b: &[f64; 4]| (0..4).map(|i| a[i] * ginv[i] * b[i]).sum::<f64>();
    let apply = |a: &[f64; 4], b: &[f64; 4]| (0..4).map(|i| a[i] * b[i]).sum::<f64>();
    // ω^ℓ(v⁺) = ω^ℓ(v) + Σ_k λ_k⟨ω^k,ω^ℓ⟩ + α⟨dH,ω^ℓ⟩ = 0
    let m = Matrix2::new(pair(&w1, &w1), pair(&w2, &w1), pair(&w1, &w2), pair(&w2, &w2));
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let cramer =
        |r: Vector2<f64>| [(r[0] * m[(1, 1)] - m[(0, 1)] * r[1]) / det, (m[(0, 0)] * r[1] - r[0] * m[(1, 0)]) / det];
    let l0 = cramer(Vector2::new(-apply(&w1, &v), -apply(&w2, &v)));
    let l1 = cramer(Vector2::new(-pair(&dh, &w1), -pair(&dh, &w2)));
    let post = |alpha: f64| {
        let l = [l0[0] + alpha * l1[0], l0[1] + alpha * l1[1]];
        let mut out = v;
        for i in 0..4 {
            out[i] += ginv[i] * (l[0] * w1[i] + l[1] * w2[i] + alpha * dh[i]);
        }
        (l, out)
    };
    // kinetic energy of post(α) is quadratic in α: sample it at three points
    let energy = |u: &[f64; 4]| 0.5 * (0..4).map(|i| u[i] * u[i] / ginv[i]).sum::<f64>();
    let e0 = energy(&v);
    let k0 = energy(&post(0.0).1) - e0;
    let k1 = energy(&post(1.0).1) - e0;
    let km = energy(&post(-1.0).1) - e0;
    let a = 0.5 * (k1 + km) - k0;
    let b = 0.5 * (k1 - km);
    let c = k0;
    let disc = (b * b - 4.0 * a * c).sqrt();
    let roots = [(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)];
    roots.map(|alpha| {
        let (l, u) = post(alpha);
        (alpha, l, u)
    })
}

fn elastic_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = PennyParams::us_penny();
    let metric = penny_metric(&p);
    let cs = penny_constraints(&p);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (s, table, side) = boundary_state(&mut rng);
        let dh = contact_differential(s.configuration().as_slice(), &table, &p, side);
        let out = elastic_impact(&metric, &cs, &s.configuration(), &impact_chart(&table, &p, side), &s.velocity())
            .map_err(|e| e.to_string())?;
        let roots = brute_force_elastic(&s, &p, dh);
        // one root leaves v unchanged, the other is the bounce
        let v = s.velocity();
        let (trivial, bounce) =
            if roots[0].0.abs() < roots[1].0.abs() { (roots[0], roots[1]) } else { (roots[1], roots[0]) };
        let stays = DVector::from_row_slice(&trivial.2);
        ensure(rel_diff(&stays, &v) <= 1e-9, || "trivial root moves the velocity".into())?;
        let scale_l = bounce.1[0].abs().max(bounce.1[1].abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((out.multiplier_alpha - bounce.0).abs() / bounce.0.abs());
        for k in 0..2 {
            worst = worst.max((out.multiplier_lambdas[k] - bounce.1[k]).abs() / scale_l);
        }
        worst = worst.max(rel_diff(&out.post_velocity, &DVector::from_row_slice(&bounce.2)));
    }
    ensure(worst <= 1e-9, || format!("max relative difference {worst:e}"))?;
    Ok(format!("50 boundary states, max relative difference {worst:.1e}"))
}

fn rk4(s: &PennyState, p: &PennyParams, dt: f64) -> PennyState {
    let pack = |s: &PennyState| [s.x, s.y, s.theta, s.phi, s.xdot, s.ydot, s.thetadot, s.phidot];
    let unpack = |u: [f64; 8]| PennyState {
        x: u[0],
        y: u[1],
        theta: u[2],
        phi: u[3],
        xdot: u[4],
        ydot: u[5],
        thetadot: u[6],
        phidot: u[7],
    };
    let y = pack(s);
    let add = |a: [f64; 8], b: [f64; 8], h: f64| std::array::from_fn::<f64, 8, _>(|i| a[i] + h * b[i]);
    let k1 = penny_ode_rhs(&unpack(y), p);
    let k2 = penny_ode_rhs(&unpack(add(y, k1, 0.5 * dt)), p);
    let k3 = penny_ode_rhs(&unpack(add(y, k2, 0.5 * dt)), p);
    let k4 = penny_ode_rhs(&unpack(add(y, k3, dt)), p);
    unpack(std::array::from_fn(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
}

fn flow_vs_rk4() -> Check {
    let p = PennyParams::us_penny();
    let cases = [
        PennyState::rolling(0.0, 0.0, 0.0, FRAC_PI_2, 10.0, 0.2, p.radius),
        PennyState::rolling(0.05, -0.03, 1.0, -2.0, -7.0, 3.0, p.radius),
        PennyState::rolling(0.0, 0.0, 0.0, 0.4, 10.0, 0.0, p.radius),
    ];
    let mut worst: f64 = 0.0;
    for s0 in cases {
        let mut s = s0;
        for k in 1..=1000 {
            s = rk4(&s, &p, 1e-3);
            if k % 100 == 0 {
                let exact = closed_form_flow(&s0, &p, k as f64 * 1e-3);
                let a = [s.x, s.y, s.theta, s.phi, s.xdot, s.ydot, s.thetadot, s.phidot];
                let b =
                    [exact.x, exact.y, exact.theta, exact.phi, exact.xdot, exact.ydot, exact.thetadot, exact.phidot];
                for i in 0..8 {
                    worst = worst.max((a[i] - b[i]).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-8, || format!("max coordinate difference {worst:e}"))?;
    Ok(format!("3 cases incl. ω = 0, max coordinate difference {worst:.1e}"))
}

fn event_time() -> Check {
    let p = PennyParams::us_penny();
    let s = PennyState::rolling(0.0, 0.0, 0.0, 0.0, 10.0, 0.0, p.radius);
    let hit = find_next_impact(&s, &TableParams::circle(0.2), &p, &EngineOptions::default())
        .map_err(|e| e.to_string())?
        .ok_or("no impact found")?;
    // contact x + R reaches 0.2 at speed RΩ = 0.1 m/s
    let expected = (0.2 - p.radius) / (p.radius * 10.0);
    let err = (hit.time - expected).abs();
    ensure(hit.side == Side::Front && err <= 1e-9, || format!("t = {} ({:?})", hit.time, hit.side))?;
    Ok(format!("t = {:.12} s, error {err:.1e}", hit.time))
}

fn ensemble() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = preset("ensemble").unwrap();
    let ens = cfg.ensemble.clone().unwrap();
    ensure(ens.count == 100 && ens.perturb_bound == 0.005, || "preset is not 100 members at bound 0.005".into())?;

    cfg.output_dir = tmp.path().join("a");
    let start = Instant::now();
    let report = run_ensemble(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.failed_count() == 0, || format!("{} members failed", report.failed_count()))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;

    cfg.output_dir = tmp.path().join("b");
    let again = run_ensemble(&cfg).map_err(|e| e.to_string())?;
    for (a, b) in report.snapshot_paths.iter().zip(&again.snapshot_paths) {
        ensure(fs::read(a).unwrap() == fs::read(b).unwrap(), || format!("{} differs on rerun", a.display()))?;
    }

    let spread_at = |k: usize| {
        let states: Vec<_> = report.members.iter().map(|m| m.snapshots[k].unwrap()).collect();
        positional_spread(&states)
    };
    let (first, last) = (spread_at(0), spread_at(ens.snapshot_times.len() - 1));
    ensure(last > first, || format!("spread {first:e} -> {last:e}"))?;
    Ok(format!("100 members, spread {first:.2e} -> {last:.2e} m, {elapsed:.1?}"))
}

fn reversibility() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = PennyParams::us_penny();
    let metric = penny_metric(&p);
    let cs = penny_constraints(&p);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (s, table, side) = boundary_state(&mut rng);
        let chart = impact_chart(&table, &p, side);
        let q = s.configuration();
        let once = elastic_impact(&metric, &cs, &q, &chart, &s.velocity()).map_err(|e| e.to_string())?;
        let twice = elastic_impact(&metric, &cs, &q, &chart, &once.post_velocity).map_err(|e| e.to_string())?;
        worst = worst.max(rel_diff(&twice.post_velocity, &s.velocity()));
    }
    ensure(worst <= 1e-10, || format!("max relative difference {worst:e}"))?;
    Ok(format!("100 boundary states, max relative difference {worst:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("elastic energy and constraints", elastic_energy),
        ("plastic energy and constraints", plastic_energy),
        ("unconstrained maps reduce to reflection", unconstrained_reduction),
        ("explicit disk formulas match generic maps", dual_path),
        ("elastic multipliers match brute force", elastic_oracle),
        ("closed-form flow matches RK4", flow_vs_rk4),
        ("head-on impact time", event_time),
        ("perturbation ensemble", ensemble),
        ("elastic map is an involution", reversibility),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
