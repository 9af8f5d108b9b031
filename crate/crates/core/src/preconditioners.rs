//! Constructors for the SPD metrics used by the solver.

use nalgebra::{DMatrix, DVector};

use crate::eigen::{lowest_generalized_eigenpairs, smallest_eigenvalue, symmetric_eigen_sorted};
use crate::error::{Error, Result};
use crate::hessian::Hessian;
use crate::metric::{SpdMetric, DENSE_LIMIT};
use crate::sparse::{LdltFactor, SparseSymmetric};

/// `ε` placing the spectral-metric condition bound `(1 + ε/μ)/(1 + ε/L)` at `kappa`.
///
/// Solves `ε = Lμ(κ − 1)/(L − κμ)`; requires `1 < κ < L/μ`.
pub fn epsilon_for_target_kappa(mu: f64, big_l: f64, kappa: f64) -> Result<f64> {
    if !(mu > 0.0) || !(big_l >= mu) {
        return Err(Error::InvalidParameter(format!("need 0 < mu <= L, got mu = {mu}, L = {big_l}")));
    }
    if !(kappa > 1.0) || !(kappa < big_l / mu) {
        return Err(Error::InvalidParameter(format!(
            "target kappa {kappa} is outside the attainable range (1, {})",
            big_l / mu
        )));
    }
    Ok(big_l * mu * (kappa - 1.0) / (big_l - kappa * mu))
}

/// Upper bound `(1 + ε/μ)/(1 + ε/L)` on the condition number of the spectral metric.
pub fn spectral_kappa_bound(mu: f64, big_l: f64, epsilon: f64) -> f64 {
    let bound = (1.0 + epsilon / mu) / (1.0 + epsilon / big_l);
    debug_assert!((bound - big_l * (mu + epsilon) / (mu * (big_l + epsilon))).abs() <= 1e-12 * bound);
    bound
}

fn dense_hessian(h: &Hessian) -> Result<DMatrix<f64>> {
    if h.dim() > DENSE_LIMIT {
        return Err(Error::TooLarge { n: h.dim(), limit: DENSE_LIMIT });
    }
    Ok(h.to_dense())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("regularization must be positive, got {epsilon}")));
    }
    Ok(())
}

/// `M = Q diag(|λ_i| + ε) Qᵀ` from the eigendecomposition `H = QΛQᵀ`.
///
/// The generalized eigenvalues of `(H, M)` are `λ_i/(|λ_i| + ε)`.
pub fn spectral_metric(h: &Hessian, epsilon: f64) -> Result<SpdMetric> {
    check_epsilon(epsilon)?;
    let (values, q) = symmetric_eigen_sorted(&dense_hessian(h)?);
    SpdMetric::eigen_form(q, values.map(|l| l.abs() + epsilon))
}

/// Spectral metric assembled once at a reference state. The metric itself is
/// identical to [`spectral_metric`]; freezing is the caller's schedule.
pub fn frozen_spectral_metric(h_ref: &Hessian, epsilon: f64) -> Result<SpdMetric> {
    spectral_metric(h_ref, epsilon)
}

/// Parameters of the subspace-inertial metric.
#[derive(Clone, Debug, PartialEq)]
pub struct InertialParams {
    /// Inertia `α ∈ [0, 1)`.
    pub alpha: f64,
    /// Weights `a_1..a_k` on the unstable eigenvalue magnitudes.
    pub weights: Vec<f64>,
    /// Tail weight `β` applied to `|λ_{k+1}|`.
    pub beta: f64,
    pub epsilon: f64,
}

impl InertialParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("inertia alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.weights.is_empty() || self.weights.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::InvalidParameter("inertial weights must be positive and non-empty".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter("tail weight beta must be positive".into()));
        }
        check_epsilon(self.epsilon)
    }
}

/// Subspace-inertial metric built from the `k` lowest eigenpairs of `H`.
///
/// With `ṽ_i` the current eigenvectors and `v_i^old` the previous frame,
/// `w_i = (1 − α) σ_i ṽ_i + α v_i^old` with `σ_i = sign⟨ṽ_i, v_i^old⟩` (ties
/// give `+1`) are orthonormalized to `V`, and
/// `M = μ_rest I + Σ (μ_i − μ_rest) v_i v_iᵀ` with `μ_i = a_i|λ_i| + ε`,
/// `μ_rest = β|λ_{k+1}| + ε`.
///
/// Returns the metric together with `V`, which is the `v_old` of the next call.
/// Without a previous frame the current eigenvectors are used directly.
pub fn subspace_inertial_metric(
    h: &Hessian,
    params: &InertialParams,
    v_old: Option<&DMatrix<f64>>,
) -> Result<(SpdMetric, DMatrix<f64>)> {
    params.validate()?;
    let n = h.dim();
    let k = params.weights.len();
    if k >= n {
        return Err(Error::InvalidParameter(format!("inertial metric needs k < n, got k = {k}, n = {n}")));
    }
    let eig = lowest_generalized_eigenpairs(h, &SpdMetric::identity(n), k + 1)?;
    let tilde = eig.vectors.columns(0, k).into_owned();
    let mixed = match v_old {
        Some(old) => {
            if old.shape() != (n, k) {
                return Err(Error::DimensionMismatch { expected: n * k, found: old.nrows() * old.ncols() });
            }
            let mut w = DMatrix::zeros(n, k);
            for i in 0..k {
                let t = tilde.column(i);
                let o = old.column(i);
                let sigma = if t.dot(&o) < 0.0 { -1.0 } else { 1.0 };
                w.set_column(i, &(t * ((1.0 - params.alpha) * sigma) + o * params.alpha));
            }
            w
        }
        None => tilde,
    };
    let v = crate::metric::m_orthonormalize(&mixed, &SpdMetric::identity(n))?.into_vectors();
    let mu = DVector::from_fn(k, |i, _| params.weights[i] * eig.values[i].abs() + params.epsilon);
    let rest = params.beta * eig.values[k].abs() + params.epsilon;
    let metric = SpdMetric::low_rank(rest, v.clone(), mu)?;
    Ok((metric, v))
}

/// `M = diag(|H_ii| + ε)`.
pub fn jacobi_metric(h: &Hessian, epsilon: f64) -> Result<SpdMetric> {
    check_epsilon(epsilon)?;
    SpdMetric::diagonal(h.diagonal().map(|d| d.abs() + epsilon))
}

/// `|A| = Q|Λ|Qᵀ` for symmetric `A`.
pub fn matrix_abs(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, q) = symmetric_eigen_sorted(a);
    let m = &q * DMatrix::from_diagonal(&values.map(f64::abs)) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Validates a block partition against `n`.
pub fn check_partition(partition: &[usize], n: usize) -> Result<()> {
    if partition.contains(&0) {
        return Err(Error::InvalidParameter("block sizes must be positive".into()));
    }
    let total: usize = partition.iter().sum();
    if total != n {
        return Err(Error::DimensionMismatch { expected: n, found: total });
    }
    Ok(())
}

/// `M = blockdiag(|H_pp| + εI)` over a contiguous partition.
pub fn block_jacobi_metric(h: &Hessian, partition: &[usize], epsilon: f64) -> Result<SpdMetric> {
    check_epsilon(epsilon)?;
    check_partition(partition, h.dim())?;
    let mut blocks = Vec::with_capacity(partition.len());
    let mut start = 0;
    for &size in partition {
        let block = DMatrix::from_fn(size, size, |i, j| h.get(start + i, start + j));
        blocks.push(matrix_abs(&block) + DMatrix::identity(size, size) * epsilon);
        start += size;
    }
    SpdMetric::block_diagonal(blocks)
}

/// Parameters of the shifted (incomplete) Cholesky metric.
#[derive(Clone, Debug, PartialEq)]
pub struct IcParams {
    /// Added to `max(0, −λ_min)` to form the shift `δ`.
    pub margin: f64,
    /// Drop tolerance of the zero-fill factorization.
    pub drop_tol: f64,
    /// Sparse Hessians up to this dimension are factored densely and exactly.
    pub dense_threshold: usize,
    /// Use a complete sparse factorization instead of the zero-fill one.
    pub complete: bool,
}

impl Default for IcParams {
    fn default() -> Self {
        IcParams { margin: 1.0, drop_tol: 0.0, dense_threshold: 0, complete: false }
    }
}

/// Retries with doubled shift after a factorization breakdown.
const IC_RETRIES: usize = 3;

/// Shift `δ = max(0, −λ_min(H)) + margin` used by [`shifted_ic_metric`].
pub fn ic_shift(h: &Hessian, margin: f64) -> Result<f64> {
    Ok((-smallest_eigenvalue(h, 1e-10)?).max(0.0) + margin)
}

/// Shifted Cholesky metric `M = L̃L̃ᵀ ≈ H + δI`.
///
/// Dense Hessians (and sparse ones up to `dense_threshold`) are factored
/// exactly. Otherwise a zero-fill incomplete factorization on the pattern of
/// `H + δI` is used, or a complete envelope factorization when
/// `params.complete` is set. On breakdown `δ` is doubled, at most three times.
pub fn shifted_ic_metric(h: &Hessian, params: &IcParams) -> Result<SpdMetric> {
    if !(params.margin > 0.0) {
        return Err(Error::InvalidParameter("shift margin must be positive".into()));
    }
    if !(params.drop_tol >= 0.0) {
        return Err(Error::InvalidParameter("drop tolerance must be non-negative".into()));
    }
    let mut delta = ic_shift(h, params.margin)?;
    let dense = !h.is_sparse() || h.dim() <= params.dense_threshold;
    let mut last = None;
    for _attempt in 0..=IC_RETRIES {
        let result = if dense {
            let a = dense_hessian(h)? + DMatrix::identity(h.dim(), h.dim()) * delta;
            SpdMetric::dense((&a + a.transpose()) * 0.5)
        } else {
            let a = h.to_sparse().shifted(delta);
            if params.complete {
                LdltFactor::envelope_spd(&a).and_then(|f| SpdMetric::factored(f, Some(a)))
            } else {
                LdltFactor::incomplete(&a, params.drop_tol).and_then(|f| SpdMetric::factored(f, None))
            }
        };
        match result {
            Ok(m) => return Ok(m),
            Err(e @ (Error::Breakdown { .. } | Error::NotPositiveDefinite(_) | Error::RoundTrip { .. })) => {
                last = Some(e);
                delta *= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::NotPositiveDefinite("shifted factorization failed".into())))
}

/// `M = A + cI` for a symmetric positive semidefinite `A`, factored exactly.
pub fn shifted_operator_metric(a: &SparseSymmetric, c: f64) -> Result<SpdMetric> {
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter(format!("shift must be non-negative, got {c}")));
    }
    let shifted = a.shifted(c);
    let factor = LdltFactor::envelope_spd(&shifted)
        .map_err(|e| Error::NotPositiveDefinite(format!("A + cI is not positive definite: {e}")))?;
    SpdMetric::factored(factor, Some(shifted))
}

/// Metric family recommended by [`select_metric`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recommendation {
    FrozenSpectral,
    BlockJacobi,
    ShiftedIncompleteCholesky,
    Jacobi,
}

/// Size- and structure-based choice of metric, first matching rule wins:
/// `n <= 200` → frozen spectral; `n <= 1000` with block structure → block
/// Jacobi; density `< 0.01` → shifted incomplete Cholesky; otherwise Jacobi.
pub fn select_metric(n: usize, density: f64, block_structured: bool) -> Recommendation {
    if n <= 200 {
        Recommendation::FrozenSpectral
    } else if n <= 1000 && block_structured {
        Recommendation::BlockJacobi
    } else if density < 0.01 {
        Recommendation::ShiftedIncompleteCholesky
    } else {
        Recommendation::Jacobi
    }
}
