//! Generalized symmetric eigenproblems `Hu = λMu` and Morse indices.
//!
//! The dense path reduces to a standard problem through the Cholesky factor
//! of `M`. Large sparse pencils are handled with Sylvester inertia counts of
//! `H − sM` (envelope LDLᵀ), which give Morse indices directly and locate the
//! lowest eigenvalues for a shifted block inverse iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hessian::Hessian;
use crate::metric::{SpdMetric, DENSE_LIMIT};
use crate::sparse::{LdltFactor, SparseSymmetric};

/// Generalized eigenvalues with magnitude below this are treated as zero.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Above this dimension sparse Hessians use the inertia-based path.
pub const SPARSE_THRESHOLD: usize = 256;

/// Eigenpairs of a pencil `(H, M)`, ascending, with M-orthonormal vectors.
#[derive(Clone, Debug)]
pub struct GenEigenDecomposition {
    pub values: DVector<f64>,
    /// One eigenvector per column.
    pub vectors: DMatrix<f64>,
}

impl GenEigenDecomposition {
    /// Largest scaled residual `‖Hu_i − λ_i M u_i‖∞ / (‖H‖ + |λ_i|‖M‖)` with max-entry norms.
    pub fn max_scaled_residual(&self, h: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
        let (hn, mn) = (h.amax(), m.amax());
        (0..self.values.len())
            .map(|i| {
                let u = self.vectors.column(i);
                let r = h * u - m * u * self.values[i];
                r.amax() / (hn + self.values[i].abs() * mn)
            })
            .fold(0.0, f64::max)
    }
}

/// Morse index of `(H, M)` and whether any eigenvalue sits within
/// [`DEGENERACY_TOL`] of zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MorseIndex {
    pub index: usize,
    pub degenerate: bool,
}

/// Flips each column so its first entry that is not negligible is positive.
pub(crate) fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let scale = col.amax();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12 * scale).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Ascending eigendecomposition of a dense symmetric matrix with the sign convention applied.
pub fn symmetric_eigen_sorted(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    fix_signs(&mut vectors);
    (values, vectors)
}

/// Full generalized eigendecomposition for `n <= DENSE_LIMIT`.
///
/// `M = LLᵀ` is factored, the symmetric matrix `L⁻¹HL⁻ᵀ` is diagonalized and
/// eigenvectors are mapped back with `u = L⁻ᵀw`.
pub fn generalized_eigendecomposition(h: &DMatrix<f64>, m: &SpdMetric) -> Result<GenEigenDecomposition> {
    let n = h.nrows();
    if h.ncols() != n || m.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: m.dim().max(h.ncols()) });
    }
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    let asym = (h - h.transpose()).amax();
    if asym > 1e-10 * h.amax().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if m.is_identity() {
        let (values, vectors) = symmetric_eigen_sorted(h);
        return Ok(GenEigenDecomposition { values, vectors });
    }
    let md = m.to_dense()?;
    let chol = md
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization of M failed".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(h)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let (values, w) = symmetric_eigen_sorted(&c);
    let mut vectors = l
        .transpose()
        .solve_upper_triangular(&w)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    fix_signs(&mut vectors);
    Ok(GenEigenDecomposition { values, vectors })
}

/// Negative eigenvalue count of the pencil from dense eigenvalues.
fn index_from_values(values: &DVector<f64>) -> MorseIndex {
    MorseIndex {
        index: values.iter().filter(|&&v| v < 0.0).count(),
        degenerate: values.iter().any(|v| v.abs() < DEGENERACY_TOL),
    }
}

/// Number of eigenvalues of `(H, M)` strictly below `s`, from the inertia of `H − sM`.
fn count_below(h: &SparseSymmetric, m: &SparseSymmetric, s: f64) -> Result<usize> {
    let mut shift = s;
    for _ in 0..4 {
        match LdltFactor::envelope(&h.add_scaled(m, -shift)) {
            Ok(f) => return Ok(f.inertia(0.0).negative),
            // an exactly singular shift; nudge it
            Err(Error::Breakdown { .. }) => shift += 1e-13 * (1.0 + shift.abs()),
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoConvergence(format!("inertia count at shift {s:e}")))
}

fn sparse_metric(m: &SpdMetric) -> Result<SparseSymmetric> {
    m.to_sparse().ok_or_else(|| {
        Error::InvalidParameter(format!("metric '{}' has no sparse form for a large sparse pencil", m.kind()))
    })
}

/// Morse index of `(H, M)`: the number of negative generalized eigenvalues,
/// which by Sylvester's law equals the number of negative eigenvalues of `H`.
pub fn morse_index(h: &Hessian, m: &SpdMetric) -> Result<MorseIndex> {
    match h {
        Hessian::Sparse(hs) if hs.dim() > SPARSE_THRESHOLD => {
            // the count is metric independent, so a metric without sparse form is replaced by I
            let ms = m.to_sparse().unwrap_or_else(|| SparseSymmetric::identity(hs.dim()));
            let below_minus = count_below(hs, &ms, -DEGENERACY_TOL)?;
            let below_plus = count_below(hs, &ms, DEGENERACY_TOL)?;
            let index = count_below(hs, &ms, 0.0)?;
            Ok(MorseIndex { index, degenerate: below_plus != below_minus })
        }
        _ => Ok(index_from_values(&generalized_eigendecomposition(&h.to_dense(), m)?.values)),
    }
}

/// Smallest eigenvalue of a symmetric Hessian.
///
/// Dense: full eigensolve. Sparse: bisection on inertia counts of `H − sI`
/// inside the Gershgorin interval, to relative accuracy `rel_tol`.
pub fn smallest_eigenvalue(h: &Hessian, rel_tol: f64) -> Result<f64> {
    match h {
        Hessian::Dense(a) => Ok(symmetric_eigen_sorted(a).0[0]),
        Hessian::Sparse(a) => {
            let id = SparseSymmetric::identity(a.dim());
            let (lo, hi) = a.gershgorin_bounds();
            bisect_eigenvalue(a, &id, 1, lo, hi, rel_tol * (hi - lo).abs().max(1.0))
        }
    }
}

/// The `j`-th (1-based) eigenvalue of `(H, M)` in `[lo, hi]` to absolute accuracy `tol`.
fn bisect_eigenvalue(
    h: &SparseSymmetric,
    m: &SparseSymmetric,
    j: usize,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64> {
    let mut guard = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if count_below(h, m, mid)? >= j {
            hi = mid;
        } else {
            lo = mid;
        }
        guard += 1;
        if guard > 200 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bracket `[lo, hi]` with fewer than 1 eigenvalue below `lo` and at least `j` below `hi`.
fn bracket(h: &SparseSymmetric, m: &SparseSymmetric, j: usize) -> Result<(f64, f64)> {
    let mut lo = -1.0;
    let mut guard = 0;
    while count_below(h, m, lo)? > 0 {
        lo *= 4.0;
        guard += 1;
        if guard > 60 {
            return Err(Error::NoConvergence("cannot bracket the lowest eigenvalue".into()));
        }
    }
    let mut hi = 1.0;
    guard = 0;
    while count_below(h, m, hi)? < j {
        hi *= 4.0;
        guard += 1;
        if guard > 60 {
            return Err(Error::NoConvergence("cannot bracket the upper eigenvalue".into()));
        }
    }
    Ok((lo, hi))
}

/// The `k` lowest generalized eigenpairs of `(H, M)`, ascending and M-orthonormal.
///
/// Small or dense problems use the full dense decomposition. Large sparse
/// problems locate `λ_1` and `λ_{k+1}` by inertia bisection, then run block
/// inverse iteration with Rayleigh–Ritz on `H − sM` with `s` below `λ_1`.
pub fn lowest_generalized_eigenpairs(h: &Hessian, m: &SpdMetric, k: usize) -> Result<GenEigenDecomposition> {
    let n = h.dim();
    if m.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: m.dim() });
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("requested {k} eigenpairs of an n = {n} pencil")));
    }
    match h {
        Hessian::Sparse(hs) if n > SPARSE_THRESHOLD && m.has_sparse_form() => sparse_lowest(hs, m, k),
        _ => {
            let full = generalized_eigendecomposition(&h.to_dense(), m)?;
            Ok(GenEigenDecomposition {
                values: full.values.rows(0, k).into_owned(),
                vectors: full.vectors.columns(0, k).into_owned(),
            })
        }
    }
}

fn sparse_lowest(h: &SparseSymmetric, m: &SpdMetric, k: usize) -> Result<GenEigenDecomposition> {
    let n = h.dim();
    if k == 0 {
        return Ok(GenEigenDecomposition { values: DVector::zeros(0), vectors: DMatrix::zeros(n, 0) });
    }
    let ms = sparse_metric(m)?;
    let (lo, hi) = bracket(h, &ms, k + 1)?;
    let width = hi - lo;
    let l1 = bisect_eigenvalue(h, &ms, 1, lo, hi, 1e-6 * width)?;
    let lk1 = bisect_eigenvalue(h, &ms, k + 1, l1 - 1e-6 * width, hi, 1e-6 * width)?;
    let gap = (lk1 - l1).max(1e-8 * width);
    let shift = l1 - 0.1 * gap;
    let factor = LdltFactor::envelope(&h.add_scaled(&ms, -shift))?;

    // deterministic, non-symmetric start block
    let p = (k + 2).min(n);
    let mut x = DMatrix::from_fn(n, p, |i, j| {
        let t = (i as f64 + 1.0) * (j as f64 + 1.0);
        (0.7 * t).sin() + 0.3 * (1.3 * t + j as f64).cos()
    });
    let mut values = DVector::zeros(k);
    let mut vectors = DMatrix::zeros(n, k);
    let hscale = h.max_abs().max(1.0);
    for _iter in 0..200 {
        for j in 0..p {
            let mx = m.apply(&x.column(j).into_owned());
            x.set_column(j, &factor.solve(&mx));
        }
        x = crate::metric::m_orthonormalize(&x, m)?.into_vectors();
        // Rayleigh–Ritz on span(x)
        let mut hx = DMatrix::zeros(n, p);
        let mut mx = DMatrix::zeros(n, p);
        for j in 0..p {
            let col = x.column(j).into_owned();
            hx.set_column(j, &h.mul_vec(&col));
            mx.set_column(j, &m.apply(&col));
        }
        let hp = x.transpose() * &hx;
        let mp = x.transpose() * &mx;
        let mp = (&mp + mp.transpose()) * 0.5;
        let small = SpdMetric::dense(mp)?;
        let ritz = generalized_eigendecomposition(&((&hp + hp.transpose()) * 0.5), &small)?;
        x = &x * &ritz.vectors;
        let hx = &hx * &ritz.vectors;
        let mx = &mx * &ritz.vectors;
        let mut worst: f64 = 0.0;
        for i in 0..k {
            let r = hx.column(i) - mx.column(i) * ritz.values[i];
            worst = worst.max(r.amax() / (hscale + ritz.values[i].abs() * ms.max_abs()));
        }
        values.copy_from(&ritz.values.rows(0, k));
        vectors.copy_from(&x.columns(0, k));
        if worst < 1e-13 {
            break;
        }
    }
    fix_signs(&mut vectors);
    Ok(GenEigenDecomposition { values, vectors })
}
