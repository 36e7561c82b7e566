//! Impact maps at a boundary `S = {h = 0}`.
//!
//! * [`specular_reflect`]: the unconstrained corner-condition bounce with a
//!   coefficient of restitution.
//! * [`elastic_impact`]: momentum jump in `span{ω^k, dh}` with kinetic energy
//!   conserved and the constraints restored afterwards.
//! * [`plastic_impact`]: the elastic unconstrained bounce followed by the
//!   g-orthogonal projection onto the constraint distribution.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{
    check_dim, check_independent_rows, gram_from_rows, ConstraintSet, LocalMetric, MetricTensor, OneForm,
};

/// `|dh(v)| < GRAZING_TOL·|v|·|dh|` counts as a tangential (grazing) arrival.
pub const GRAZING_TOL: f64 = 1e-10;

/// Admissible pre-impact constraint residual, relative to `|v|·|ω^k|`.
pub const PRE_CONSTRAINT_TOL: f64 = 1e-9;

/// Slack on the post-impact normal velocity sign, relative to `|v⁺|·|dh|`.
pub const DIRECTION_TOL: f64 = 1e-12;

type ScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// A boundary function `h` (feasible region `h < 0`) and its differential.
#[derive(Clone)]
pub struct ImpactChart {
    h: Arc<ScalarFn>,
    dh: OneForm,
}

impl fmt::Debug for ImpactChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImpactChart").field("dim", &self.dh.dim()).finish_non_exhaustive()
    }
}

impl ImpactChart {
    pub fn new<H>(h: H, dh: OneForm) -> Self
    where
        H: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self { h: Arc::new(h), dh }
    }

    /// The flat wall `⟨normal, q⟩ − offset = 0`.
    pub fn hyperplane(normal: DVector<f64>, offset: f64) -> Self {
        let n = normal.clone();
        Self::new(move |q| n.dot(q) - offset, OneForm::constant(normal))
    }

    pub fn dim(&self) -> usize {
        self.dh.dim()
    }

    pub fn value(&self, q: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), q.len())?;
        Ok((self.h)(q))
    }

    pub fn differential(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.dh.at(q)
    }
}

/// Result of applying an impact map.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactOutcome {
    pub post_velocity: DVector<f64>,
    /// Coefficient of `dh` in the momentum jump.
    pub multiplier_alpha: f64,
    /// Coefficients of the constraint forms in the momentum jump.
    pub multiplier_lambdas: DVector<f64>,
    pub energy_before: f64,
    pub energy_after: f64,
    pub grazing: bool,
}

/// Multipliers of the elastic momentum jump `p⁺ = p⁻ + λ_k ω^k + α dh`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticSolution {
    pub alpha: f64,
    pub lambdas: DVector<f64>,
    pub post_velocity: DVector<f64>,
    pub grazing: bool,
}

struct ImpactSite {
    local: LocalMetric,
    rows: DMatrix<f64>,
    dh: DVector<f64>,
    dh_v: f64,
    grazing: bool,
}

impl ImpactSite {
    fn prepare(
        metric: &MetricTensor,
        constraints: &ConstraintSet,
        q: &DVector<f64>,
        chart: &ImpactChart,
        v: &DVector<f64>,
    ) -> Result<Self> {
        check_dim(metric.dim(), constraints.dim())?;
        check_dim(metric.dim(), chart.dim())?;
        check_dim(metric.dim(), v.len())?;
        let local = metric.at(q)?;
        let dh = chart.differential(q)?;
        if dh.amax() == 0.0 {
            return Err(Error::DegenerateChart);
        }
        let rows = constraints.matrix_at(q)?;
        let v_norm = v.norm();
        for (k, row) in rows.row_iter().enumerate() {
            let residual = row.dot(&v.transpose());
            if residual.abs() > PRE_CONSTRAINT_TOL * v_norm * row.norm() {
                return Err(Error::ConstraintViolation { index: k, residual });
            }
        }
        if !rows.is_empty() {
            let mut joint = rows.clone().insert_row(rows.nrows(), 0.0);
            joint.set_row(rows.nrows(), &dh.transpose());
            check_independent_rows(&joint)?;
        }
        let dh_v = dh.dot(v);
        let grazing = dh_v.abs() < GRAZING_TOL * v_norm * dh.norm();
        Ok(Self { local, rows, dh, dh_v, grazing })
    }

    fn unchanged(&self, v: &DVector<f64>) -> Result<ImpactOutcome> {
        let e = self.local.kinetic_energy(v)?;
        Ok(ImpactOutcome {
            post_velocity: v.clone(),
            multiplier_alpha: 0.0,
            multiplier_lambdas: DVector::zeros(self.rows.nrows()),
            energy_before: e,
            energy_after: e,
            grazing: true,
        })
    }
}

/// Unconstrained bounce `v − (1+e)·dh(v)/⟨dh,dh⟩·∇h` with `∇h = dh♯`.
///
/// `e = 1` is the variational (energy-conserving) reflection, `e = 0` the
/// g-orthogonal projection onto `ker dh`.
pub fn specular_reflect(
    metric: &MetricTensor,
    q: &DVector<f64>,
    chart: &ImpactChart,
    v: &DVector<f64>,
    restitution: f64,
) -> Result<ImpactOutcome> {
    if !(0.0..=1.0).contains(&restitution) {
        return Err(Error::InvalidParams(format!("coefficient of restitution {restitution} outside [0, 1]")));
    }
    let empty = ConstraintSet::empty(metric.dim());
    let site = ImpactSite::prepare(metric, &empty, q, chart, v)?;
    if site.grazing {
        return site.unchanged(v);
    }
    let grad = site.local.sharp(&site.dh)?;
    let alpha = -(1.0 + restitution) * site.dh_v / site.dh.dot(&grad);
    let post = v + &grad * alpha;
    Ok(ImpactOutcome {
        energy_before: site.local.kinetic_energy(v)?,
        energy_after: site.local.kinetic_energy(&post)?,
        post_velocity: post,
        multiplier_alpha: alpha,
        multiplier_lambdas: DVector::zeros(0),
        grazing: false,
    })
}

/// Roots of `a2 α² + a1 α + a0 = 0`, larger magnitude first.
///
/// Uses the cancellation-free form so the small root stays accurate when
/// `a0 ≈ 0`. A slightly negative discriminant is clamped to zero.
fn quadratic_roots(a2: f64, a1: f64, a0: f64) -> (f64, f64) {
    let disc = (a1 * a1 - 4.0 * a2 * a0).max(0.0);
    let sign = if a1 >= 0.0 { 1.0 } else { -1.0 };
    let qv = -0.5 * (a1 + sign * disc.sqrt());
    if qv == 0.0 {
        return (0.0, 0.0);
    }
    (qv / a2, a0 / qv)
}

fn solve_elastic(site: &ImpactSite, v: &DVector<f64>) -> Result<ElasticSolution> {
    let m = site.rows.nrows();
    if site.grazing {
        return Ok(ElasticSolution { alpha: 0.0, lambdas: DVector::zeros(m), post_velocity: v.clone(), grazing: true });
    }
    let g_inv = site.local.inverse();
    let p_pre = site.local.flat(v)?;

    // λ(α) = λ0 + α λ1 from λ_k⟨ω^k,ω^ℓ⟩ + α⟨dh,ω^ℓ⟩ + ω^ℓ(v) = 0
    let (lambda0, lambda1) = if m == 0 {
        (DVector::zeros(0), DVector::zeros(0))
    } else {
        let gram = gram_from_rows(&site.local, &site.rows)?;
        let b = &site.rows * (g_inv * &site.dh);
        let c = &site.rows * v;
        (-(&gram.lower * c), -(&gram.lower * b))
    };
    // momentum jump δ(α) = δ0 + α δ1
    let delta0 = site.rows.tr_mul(&lambda0);
    let delta1 = site.rows.tr_mul(&lambda1) + &site.dh;

    let pair = |a: &DVector<f64>, b: &DVector<f64>| a.dot(&(g_inv * b));
    let a2 = pair(&delta1, &delta1);
    let a1 = 2.0 * (pair(&p_pre, &delta1) + pair(&delta0, &delta1));
    let a0 = 2.0 * pair(&p_pre, &delta0) + pair(&delta0, &delta0);
    if a2 <= 0.0 {
        return Err(Error::ConstraintDegeneracy { ratio: 0.0 });
    }
    let (alpha, _trivial) = quadratic_roots(a2, a1, a0);

    let lambdas = &lambda0 + &lambda1 * alpha;
    let p_post = p_pre + &delta0 + &delta1 * alpha;
    let post_velocity = site.local.sharp(&p_post)?;
    Ok(ElasticSolution { alpha, lambdas, post_velocity, grazing: false })
}

/// Solve the elastic multiplier system without the outcome bookkeeping.
pub fn elastic_multipliers(
    metric: &MetricTensor,
    constraints: &ConstraintSet,
    q: &DVector<f64>,
    chart: &ImpactChart,
    v: &DVector<f64>,
) -> Result<ElasticSolution> {
    let site = ImpactSite::prepare(metric, constraints, q, chart, v)?;
    solve_elastic(&site, v)
}

/// Elastic nonholonomic impact.
///
/// Solves `p⁺ = p⁻ + λ_k ω^k + α dh` subject to `ω^k(v⁺) = 0` and equal
/// kinetic energy. The multipliers `λ` are linear in `α`, which leaves a
/// quadratic in `α` with one trivial root; the other root is the bounce.
pub fn elastic_impact(
    metric: &MetricTensor,
    constraints: &ConstraintSet,
    q: &DVector<f64>,
    chart: &ImpactChart,
    v: &DVector<f64>,
) -> Result<ImpactOutcome> {
    let site = ImpactSite::prepare(metric, constraints, q, chart, v)?;
    if site.grazing {
        return site.unchanged(v);
    }
    let sol = solve_elastic(&site, v)?;
    let dh_post = site.dh.dot(&sol.post_velocity);
    if site.dh_v.signum() * dh_post > DIRECTION_TOL * sol.post_velocity.norm() * site.dh.norm() {
        log::warn!("elastic impact keeps exiting: q = {q:?}, v = {v:?}");
        return Err(Error::NonPhysicalImpact { dh_pre: site.dh_v, dh_post });
    }
    Ok(ImpactOutcome {
        energy_before: site.local.kinetic_energy(v)?,
        energy_after: site.local.kinetic_energy(&sol.post_velocity)?,
        post_velocity: sol.post_velocity,
        multiplier_alpha: sol.alpha,
        multiplier_lambdas: sol.lambdas,
        grazing: false,
    })
}

/// Plastic nonholonomic impact: `π_Δ ∘ P` in closed form,
/// `v − 2·dh(v)/g(∇h,∇h)·(∇h − a_{ij} ω^i(∇h) W^j)`.
pub fn plastic_impact(
    metric: &MetricTensor,
    constraints: &ConstraintSet,
    q: &DVector<f64>,
    chart: &ImpactChart,
    v: &DVector<f64>,
) -> Result<ImpactOutcome> {
    let site = ImpactSite::prepare(metric, constraints, q, chart, v)?;
    if site.grazing {
        return site.unchanged(v);
    }
    let grad = site.local.sharp(&site.dh)?;
    let alpha = -2.0 * site.dh_v / site.dh.dot(&grad);
    let (direction, lambdas) = if site.rows.is_empty() {
        (grad.clone(), DVector::zeros(0))
    } else {
        let gram = gram_from_rows(&site.local, &site.rows)?;
        let w_fields = site.local.inverse() * site.rows.transpose();
        let coeffs = &gram.lower * (&site.rows * &grad);
        (&grad - &w_fields * &coeffs, -(coeffs * alpha))
    };
    let post = v + direction * alpha;
    Ok(ImpactOutcome {
        energy_before: site.local.kinetic_energy(v)?,
        energy_after: site.local.kinetic_energy(&post)?,
        post_velocity: post,
        multiplier_alpha: alpha,
        multiplier_lambdas: lambdas,
        grazing: false,
    })
}
