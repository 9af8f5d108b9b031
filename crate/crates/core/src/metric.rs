//! SPD metrics, M-inner products and M-orthonormal frames.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sparse::{LdltFactor, SparseSymmetric};

/// Largest dimension for which [`SpdMetric::to_dense`] materializes a matrix.
pub const DENSE_LIMIT: usize = 4000;

const SYMMETRY_TOL: f64 = 1e-12;
const ROUND_TRIP_TOL: f64 = 1e-10;
const PROBES: usize = 3;

#[derive(Clone)]
enum Repr {
    Identity,
    Diagonal(DVector<f64>),
    Dense {
        matrix: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
    /// `Q diag(d) Qᵀ` with orthogonal `Q`.
    Eigen {
        q: DMatrix<f64>,
        d: DVector<f64>,
    },
    Blocks {
        offsets: Vec<usize>,
        blocks: Vec<DMatrix<f64>>,
        chols: Vec<Cholesky<f64, Dyn>>,
    },
    /// `L D Lᵀ`; `matrix` holds the factored operator when the factorization is exact.
    Factored {
        factor: LdltFactor,
        matrix: Option<SparseSymmetric>,
    },
    /// `μ_rest I + V diag(μ − μ_rest) Vᵀ` with Euclidean-orthonormal `V`.
    LowRank {
        rest: f64,
        v: DMatrix<f64>,
        mu: DVector<f64>,
    },
}

/// A symmetric positive definite operator `M` with `apply` (`v ↦ Mv`) and
/// `solve` (`g ↦ M⁻¹g`).
///
/// Every constructor probes symmetry, positivity and the `apply ∘ solve`
/// round trip on seeded random vectors and refuses operators that fail.
/// Clones share the underlying storage.
#[derive(Clone)]
pub struct SpdMetric {
    n: usize,
    repr: Arc<Repr>,
    label: &'static str,
}

impl fmt::Debug for SpdMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdMetric").field("n", &self.n).field("kind", &self.label).finish()
    }
}

impl SpdMetric {
    fn build(n: usize, repr: Repr, label: &'static str) -> Result<Self> {
        let m = SpdMetric { n, repr: Arc::new(repr), label };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        SpdMetric { n, repr: Arc::new(Repr::Identity), label: "identity" }
    }

    pub fn diagonal(d: DVector<f64>) -> Result<Self> {
        if let Some(i) = d.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!("diagonal entry {i} is {}", d[i])));
        }
        Self::build(d.len(), Repr::Diagonal(d), "diagonal")
    }

    /// Dense SPD matrix with a cached Cholesky factor.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let n = check_square(&matrix)?;
        check_symmetric(&matrix)?;
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        Self::build(n, Repr::Dense { matrix, chol }, "dense")
    }

    /// `Q diag(d) Qᵀ` for orthogonal `Q` and positive `d`.
    pub fn eigen_form(q: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let n = check_square(&q)?;
        if d.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: d.len() });
        }
        if let Some(i) = d.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!("eigenvalue {i} is {}", d[i])));
        }
        Self::build(n, Repr::Eigen { q, d }, "spectral")
    }

    /// Block-diagonal SPD matrix; blocks are placed contiguously along the diagonal.
    pub fn block_diagonal(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        let mut chols = Vec::with_capacity(blocks.len());
        for (b, block) in blocks.iter().enumerate() {
            let size = check_square(block)?;
            check_symmetric(block)?;
            let chol = Cholesky::new(block.clone()).ok_or_else(|| {
                Error::NotPositiveDefinite(format!("Cholesky factorization of block {b} failed"))
            })?;
            chols.push(chol);
            offsets.push(offsets.last().unwrap() + size);
        }
        let n = *offsets.last().unwrap();
        Self::build(n, Repr::Blocks { offsets, blocks, chols }, "block-diagonal")
    }

    /// Metric given by an `L D Lᵀ` factorization with positive pivots.
    ///
    /// Pass the factored matrix as `exact` when the factorization is complete;
    /// it is then used for `apply` and sparse materialization.
    pub fn factored(factor: LdltFactor, exact: Option<SparseSymmetric>) -> Result<Self> {
        if let Some(p) = factor.pivots().iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Breakdown { pivot: p, value: factor.pivots()[p] });
        }
        let n = factor.dim();
        if let Some(a) = &exact {
            if a.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, found: a.dim() });
            }
        }
        let label = if exact.is_some() { "sparse-cholesky" } else { "incomplete-cholesky" };
        Self::build(n, Repr::Factored { factor, matrix: exact }, label)
    }

    /// `μ_rest I + Σ (μ_i − μ_rest) v_i v_iᵀ` for Euclidean-orthonormal columns `v_i`.
    pub fn low_rank(rest: f64, v: DMatrix<f64>, mu: DVector<f64>) -> Result<Self> {
        if v.ncols() != mu.len() {
            return Err(Error::DimensionMismatch { expected: v.ncols(), found: mu.len() });
        }
        if !(rest > 0.0) || mu.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::NotPositiveDefinite("low-rank metric weights must be positive".into()));
        }
        let gram = v.transpose() * &v;
        let err = (gram - DMatrix::identity(v.ncols(), v.ncols())).amax();
        if err > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "low-rank metric directions are not orthonormal (error {err:e})"
            )));
        }
        Self::build(v.nrows(), Repr::LowRank { rest, v, mu }, "low-rank")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Short name of the representation, e.g. `"diagonal"`.
    pub fn kind(&self) -> &'static str {
        self.label
    }

    pub fn is_identity(&self) -> bool {
        matches!(*self.repr, Repr::Identity)
    }

    /// `Mv`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.n, "metric apply dimension mismatch");
        match &*self.repr {
            Repr::Identity => v.clone(),
            Repr::Diagonal(d) => d.component_mul(v),
            Repr::Dense { matrix, .. } => matrix * v,
            Repr::Eigen { q, d } => q * (q.tr_mul(v).component_mul(d)),
            Repr::Blocks { offsets, blocks, .. } => {
                let mut out = DVector::zeros(self.n);
                for (b, block) in blocks.iter().enumerate() {
                    let (s, len) = (offsets[b], block.nrows());
                    out.rows_mut(s, len).copy_from(&(block * v.rows(s, len)));
                }
                out
            }
            Repr::Factored { factor, matrix } => match matrix {
                Some(a) => a.mul_vec(v),
                None => factor.apply(v),
            },
            Repr::LowRank { rest, v: basis, mu } => {
                let c = basis.tr_mul(v);
                let scaled = DVector::from_fn(mu.len(), |i, _| (mu[i] - rest) * c[i]);
                v * *rest + basis * scaled
            }
        }
    }

    /// `M⁻¹g`.
    pub fn solve(&self, g: &DVector<f64>) -> DVector<f64> {
        assert_eq!(g.len(), self.n, "metric solve dimension mismatch");
        match &*self.repr {
            Repr::Identity => g.clone(),
            Repr::Diagonal(d) => g.component_div(d),
            Repr::Dense { chol, .. } => chol.solve(g),
            Repr::Eigen { q, d } => q * (q.tr_mul(g).component_div(d)),
            Repr::Blocks { offsets, chols, .. } => {
                let mut out = DVector::zeros(self.n);
                for (b, chol) in chols.iter().enumerate() {
                    let (s, len) = (offsets[b], offsets[b + 1] - offsets[b]);
                    out.rows_mut(s, len).copy_from(&chol.solve(&g.rows(s, len).into_owned()));
                }
                out
            }
            Repr::Factored { factor, .. } => factor.solve(g),
            Repr::LowRank { rest, v: basis, mu } => {
                let c = basis.tr_mul(g);
                let scaled = DVector::from_fn(mu.len(), |i, _| (1.0 / mu[i] - 1.0 / rest) * c[i]);
                g / *rest + basis * scaled
            }
        }
    }

    /// `M⁻¹ G` column by column.
    pub fn solve_mat(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        for j in 0..g.ncols() {
            out.set_column(j, &self.solve(&g.column(j).into_owned()));
        }
        out
    }

    /// `M V` column by column.
    pub fn apply_mat(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for j in 0..v.ncols() {
            out.set_column(j, &self.apply(&v.column(j).into_owned()));
        }
        out
    }

    /// Dense matrix of `M`, available for `n <= DENSE_LIMIT`.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.n > DENSE_LIMIT {
            return Err(Error::TooLarge { n: self.n, limit: DENSE_LIMIT });
        }
        Ok(match &*self.repr {
            Repr::Identity => DMatrix::identity(self.n, self.n),
            Repr::Diagonal(d) => DMatrix::from_diagonal(d),
            Repr::Dense { matrix, .. } => matrix.clone(),
            Repr::Eigen { q, d } => {
                let m = q * DMatrix::from_diagonal(d) * q.transpose();
                (&m + m.transpose()) * 0.5
            }
            Repr::Factored { factor, matrix } => match matrix {
                Some(a) => a.to_dense(),
                None => factor.product().to_dense(),
            },
            _ => {
                let mut m = self.apply_mat(&DMatrix::identity(self.n, self.n));
                m = (&m + m.transpose()) * 0.5;
                m
            }
        })
    }

    /// Sparse matrix of `M` when the representation is sparse.
    /// Whether [`SpdMetric::to_sparse`] returns `Some`.
    pub fn has_sparse_form(&self) -> bool {
        matches!(&*self.repr, Repr::Identity | Repr::Diagonal(_) | Repr::Blocks { .. } | Repr::Factored { .. })
    }

    pub fn to_sparse(&self) -> Option<SparseSymmetric> {
        match &*self.repr {
            Repr::Identity => Some(SparseSymmetric::identity(self.n)),
            Repr::Diagonal(d) => Some(SparseSymmetric::from_diagonal(d)),
            Repr::Blocks { offsets, blocks, .. } => {
                let mut t = Vec::new();
                for (b, block) in blocks.iter().enumerate() {
                    for i in 0..block.nrows() {
                        for j in 0..=i {
                            if block[(i, j)] != 0.0 || i == j {
                                t.push((offsets[b] + i, offsets[b] + j, block[(i, j)]));
                            }
                        }
                    }
                }
                SparseSymmetric::from_triplets(self.n, t).ok()
            }
            Repr::Factored { factor, matrix } => {
                Some(matrix.clone().unwrap_or_else(|| factor.product()))
            }
            _ => None,
        }
    }

    /// Number of stored factor entries for factored metrics.
    pub fn factor_nnz(&self) -> Option<usize> {
        match &*self.repr {
            Repr::Factored { factor, .. } => Some(factor.nnz()),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed0f5bd);
        let mut probe = || DVector::from_fn(self.n, |_, _| StandardNormal.sample(&mut rng));
        for _ in 0..PROBES {
            let u = probe();
            let v = probe();
            let mu = self.apply(&u);
            let mv = self.apply(&v);
            let lhs = u.dot(&mv);
            let rhs = v.dot(&mu);
            let scale = (u.norm() * mv.norm()).max(v.norm() * mu.norm()).max(f64::MIN_POSITIVE);
            let asym = (lhs - rhs).abs() / scale;
            if !(asym <= SYMMETRY_TOL) {
                return Err(Error::NotSymmetric { asymmetry: asym });
            }
            let quad = u.dot(&mu);
            if !(quad > 0.0) {
                return Err(Error::NotPositiveDefinite(format!("probe quadratic form {quad:e}")));
            }
            let back = self.apply(&self.solve(&v));
            let residual = (back - &v).norm() / v.norm();
            if !(residual <= ROUND_TRIP_TOL) {
                return Err(Error::RoundTrip { residual });
            }
        }
        Ok(())
    }
}

fn check_square(a: &DMatrix<f64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), found: a.ncols() });
    }
    Ok(a.nrows())
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * a.amax().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

fn check_dim(n: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: v.len() });
    }
    Ok(())
}

/// `uᵀ M v`.
pub fn m_inner(u: &DVector<f64>, v: &DVector<f64>, m: &SpdMetric) -> Result<f64> {
    check_dim(m.dim(), u)?;
    check_dim(m.dim(), v)?;
    Ok(u.dot(&m.apply(v)))
}

/// `sqrt(uᵀ M u)`.
pub fn m_norm(u: &DVector<f64>, m: &SpdMetric) -> Result<f64> {
    Ok(m_inner(u, u, m)?.sqrt())
}

/// An `n × k` frame `V` with `VᵀMV = I`.
#[derive(Clone, Debug)]
pub struct Frame {
    vectors: DMatrix<f64>,
    metric: SpdMetric,
}

impl Frame {
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn into_vectors(self) -> DMatrix<f64> {
        self.vectors
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.vectors.column(i).into_owned()
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn metric(&self) -> &SpdMetric {
        &self.metric
    }

    /// `max |VᵀMV − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.vectors, &self.metric)
    }
}

/// `max |VᵀMV − I|` for an arbitrary set of columns.
pub fn orthonormality_error(v: &DMatrix<f64>, m: &SpdMetric) -> f64 {
    let k = v.ncols();
    if k == 0 {
        return 0.0;
    }
    let gram = v.transpose() * m.apply_mat(v);
    (gram - DMatrix::identity(k, k)).amax()
}

/// Modified Gram–Schmidt in the M-inner product with one reorthogonalization
/// pass. Column order is preserved, so the direction of `v_1` never changes.
///
/// A column whose M-norm after projection falls below `1e-12` times its
/// original M-norm is reported as [`Error::RankDeficient`].
pub fn m_orthonormalize(v: &DMatrix<f64>, m: &SpdMetric) -> Result<Frame> {
    let (n, k) = v.shape();
    if n != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: n });
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("frame has k = {k} > n = {n} columns")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("frame contains non-finite entries".into()));
    }
    let mut q = DMatrix::zeros(n, k);
    let mut mq = DMatrix::zeros(n, k);
    for j in 0..k {
        let mut w = v.column(j).into_owned();
        let original = w.dot(&m.apply(&w)).sqrt();
        for _pass in 0..2 {
            for i in 0..j {
                let c = mq.column(i).dot(&w);
                w.axpy(-c, &q.column(i), 1.0);
            }
        }
        let mw = m.apply(&w);
        let norm = w.dot(&mw).max(0.0).sqrt();
        if !(norm >= 1e-12 * original) || norm == 0.0 {
            return Err(Error::RankDeficient { column: j, norm });
        }
        q.set_column(j, &(w / norm));
        mq.set_column(j, &(mw / norm));
    }
    Ok(Frame { vectors: q, metric: m.clone() })
}
