//! Kinetic-energy geometry on a configuration space.
//!
//! A [`MetricTensor`] is the Riemannian metric `g` of a natural Lagrangian
//! `L = ½ g(v, v) − V`. Its flat map is the fiber derivative (velocity to
//! momentum) and its sharp map is the inverse. Constraint one-forms are
//! collected in a [`ConstraintSet`] whose common kernel is the admissible
//! velocity distribution; [`project_onto_distribution`] is the g-orthogonal
//! projection onto it.
//!
//! Covectors are stored as plain column vectors of components, so a pairing
//! `ω(v)` is `ω.dot(v)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Largest metric condition number accepted by the solves.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative singular-value threshold for linear independence of one-forms.
pub const INDEPENDENCE_THRESHOLD: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-14;

type MetricFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type CovectorFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Kinetic-energy metric, evaluated pointwise.
#[derive(Clone)]
pub struct MetricTensor {
    dim: usize,
    eval: Arc<MetricFn>,
}

impl fmt::Debug for MetricTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricTensor").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl MetricTensor {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        assert!(dim > 0, "metric dimension must be positive");
        Self { dim, eval: Arc::new(eval) }
    }

    /// A metric that does not depend on the configuration.
    pub fn constant(g: DMatrix<f64>) -> Self {
        assert!(g.is_square(), "metric matrix must be square");
        Self::new(g.nrows(), move |_| g.clone())
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        Self::constant(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw metric matrix `g(q)` without any validation beyond dimensions.
    pub fn matrix_at(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim, q.len())?;
        let g = (self.eval)(q);
        if g.nrows() != self.dim || g.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: g.nrows() });
        }
        Ok(g)
    }

    /// Evaluate and factor the metric at `q`.
    ///
    /// Fails when `g(q)` is not symmetric, not positive definite, or has a
    /// condition number above [`MAX_CONDITION`].
    pub fn at(&self, q: &DVector<f64>) -> Result<LocalMetric> {
        LocalMetric::new(self.matrix_at(q)?)
    }
}

/// The metric frozen at one configuration, with its factorization.
#[derive(Debug, Clone)]
pub struct LocalMetric {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
}

impl LocalMetric {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        let scale = g.amax().max(1.0);
        if (&g - g.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::NotPositiveDefinite("matrix is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(g.clone());
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        if lo <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {lo:e}")));
        }
        let condition = hi / lo;
        if condition > MAX_CONDITION {
            return Err(Error::IllConditioned { condition });
        }
        let chol = g.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("cholesky failed".into()))?;
        let g_inv = chol.inverse();
        // symmetrize to remove rounding asymmetry from the inverse
        let g_inv = (&g_inv + g_inv.transpose()) * 0.5;
        Ok(Self { g, g_inv })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.g_inv
    }

    pub fn flat(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        Ok(&self.g * v)
    }

    pub fn sharp(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), p.len())?;
        Ok(&self.g_inv * p)
    }

    /// `g(u, v)`.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), u.len())?;
        check_dim(self.dim(), v.len())?;
        Ok(u.dot(&(&self.g * v)))
    }

    /// Cometric pairing `p1 · g⁻¹ · p2`.
    pub fn cometric_inner(&self, p1: &DVector<f64>, p2: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), p1.len())?;
        check_dim(self.dim(), p2.len())?;
        Ok(p1.dot(&(&self.g_inv * p2)))
    }

    pub fn kinetic_energy(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(0.5 * self.inner(v, v)?)
    }
}

/// `♭`: velocity to momentum, `g(q)·v`.
pub fn flat(metric: &MetricTensor, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(metric.dim(), v.len())?;
    metric.at(q)?.flat(v)
}

/// `♯`: momentum to velocity, the solution of `g(q)·v = p`.
pub fn sharp(metric: &MetricTensor, q: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(metric.dim(), p.len())?;
    metric.at(q)?.sharp(p)
}

pub fn cometric_inner(metric: &MetricTensor, q: &DVector<f64>, p1: &DVector<f64>, p2: &DVector<f64>) -> Result<f64> {
    metric.at(q)?.cometric_inner(p1, p2)
}

/// `½ vᵀ g(q) v`.
pub fn kinetic_energy(metric: &MetricTensor, q: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    check_dim(metric.dim(), v.len())?;
    let g = metric.matrix_at(q)?;
    Ok(0.5 * v.dot(&(&g * v)))
}

/// A covector field `q ↦ ω_q`.
#[derive(Clone)]
pub struct OneForm {
    dim: usize,
    eval: Arc<CovectorFn>,
}

impl fmt::Debug for OneForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OneForm").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl OneForm {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { dim, eval: Arc::new(eval) }
    }

    pub fn constant(components: DVector<f64>) -> Self {
        Self::new(components.len(), move |_| components.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, q.len())?;
        let w = (self.eval)(q);
        check_dim(self.dim, w.len())?;
        Ok(w)
    }
}

/// Constraint one-forms `ω¹..ωᵐ`; admissible velocities are their common kernel.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    dim: usize,
    forms: Vec<OneForm>,
}

impl ConstraintSet {
    pub fn new(dim: usize, forms: Vec<OneForm>) -> Result<Self> {
        if let Some(bad) = forms.iter().find(|f| f.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.dim() });
        }
        if !forms.is_empty() && forms.len() >= dim {
            return Err(Error::InvalidParams(format!(
                "{} constraints on a {dim}-dimensional space leave no motion",
                forms.len()
            )));
        }
        Ok(Self { dim, forms })
    }

    /// No constraints: the distribution is the whole tangent space.
    pub fn empty(dim: usize) -> Self {
        Self { dim, forms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn forms(&self) -> &[OneForm] {
        &self.forms
    }

    /// The `m×n` matrix whose rows are the covectors at `q`.
    pub fn matrix_at(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim, q.len())?;
        let mut rows = DMatrix::zeros(self.forms.len(), self.dim);
        for (k, form) in self.forms.iter().enumerate() {
            rows.set_row(k, &form.at(q)?.transpose());
        }
        Ok(rows)
    }

    /// Residuals `ω^k(v)`.
    pub fn residuals(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, v.len())?;
        Ok(self.matrix_at(q)? * v)
    }

    pub fn check_independent(&self, q: &DVector<f64>) -> Result<()> {
        check_independent_rows(&self.matrix_at(q)?)
    }
}

/// Smallest over largest singular value of the rows of `rows`.
pub fn independence_ratio(rows: &DMatrix<f64>) -> f64 {
    if rows.nrows() == 0 {
        return 1.0;
    }
    let sv = SVD::new(rows.clone(), false, false).singular_values;
    let hi = sv.max();
    if hi == 0.0 {
        0.0
    } else {
        sv.min() / hi
    }
}

pub(crate) fn check_independent_rows(rows: &DMatrix<f64>) -> Result<()> {
    let ratio = independence_ratio(rows);
    if ratio > INDEPENDENCE_THRESHOLD {
        Ok(())
    } else {
        Err(Error::ConstraintDegeneracy { ratio })
    }
}

/// Gram matrices of the constraint forms under the cometric.
#[derive(Debug, Clone)]
pub struct GramMatrices {
    /// `a^{ij} = ⟨ω^i, ω^j⟩ = ω^i(W^j)` with `W^j = (ω^j)♯`.
    pub upper: DMatrix<f64>,
    /// `a_{ij}`, the inverse of `upper`.
    pub lower: DMatrix<f64>,
}

pub(crate) fn gram_from_rows(local: &LocalMetric, rows: &DMatrix<f64>) -> Result<GramMatrices> {
    check_independent_rows(rows)?;
    let upper = rows * local.inverse() * rows.transpose();
    let upper = (&upper + upper.transpose()) * 0.5;
    let lower = match upper.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => return Err(Error::ConstraintDegeneracy { ratio: 0.0 }),
    };
    Ok(GramMatrices { upper, lower })
}

pub fn gram_matrices(constraints: &ConstraintSet, metric: &MetricTensor, q: &DVector<f64>) -> Result<GramMatrices> {
    check_dim(metric.dim(), constraints.dim())?;
    let local = metric.at(q)?;
    gram_from_rows(&local, &constraints.matrix_at(q)?)
}

/// `π_Δ(v) = v − a_{ij} ω^i(v) W^j` for constraint rows already evaluated at `q`.
pub(crate) fn project_with_rows(local: &LocalMetric, rows: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if rows.nrows() == 0 {
        return Ok(v.clone());
    }
    let gram = gram_from_rows(local, rows)?;
    let w_fields = local.inverse() * rows.transpose();
    Ok(v - w_fields * (gram.lower * (rows * v)))
}

/// g-orthogonal projection of `v` onto the constraint distribution at `q`.
pub fn project_onto_distribution(
    constraints: &ConstraintSet,
    metric: &MetricTensor,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim(metric.dim(), constraints.dim())?;
    check_dim(metric.dim(), v.len())?;
    let local = metric.at(q)?;
    project_with_rows(&local, &constraints.matrix_at(q)?, v)
}
