use nalgebra::{DMatrix, DVector};

use crate::sparse::SparseSymmetric;

/// A symmetric Hessian returned by a problem, stored densely or sparsely.
#[derive(Clone, Debug)]
pub enum Hessian {
    Dense(DMatrix<f64>),
    Sparse(SparseSymmetric),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Dense(a) => a.nrows(),
            Hessian::Sparse(a) => a.dim(),
        }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Hessian::Dense(a) => a * v,
            Hessian::Sparse(a) => a.mul_vec(v),
        }
    }

    /// `H V` column by column.
    pub fn mul_mat(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Hessian::Dense(a) => a * v,
            Hessian::Sparse(a) => {
                let mut out = DMatrix::zeros(v.nrows(), v.ncols());
                for j in 0..v.ncols() {
                    out.set_column(j, &a.mul_vec(&v.column(j).into_owned()));
                }
                out
            }
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            Hessian::Dense(a) => a.diagonal(),
            Hessian::Sparse(a) => a.diagonal(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Hessian::Dense(a) => a[(i, j)],
            Hessian::Sparse(a) => a.get(i, j),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Dense(a) => a.clone(),
            Hessian::Sparse(a) => a.to_dense(),
        }
    }

    /// Sparse view; dense matrices are converted keeping every nonzero.
    pub fn to_sparse(&self) -> SparseSymmetric {
        match self {
            Hessian::Dense(a) => SparseSymmetric::from_dense(a, 0.0).expect("square by construction"),
            Hessian::Sparse(a) => a.clone(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Hessian::Sparse(_))
    }

    /// Fraction of nonzero entries, `nnz / n²`.
    pub fn density(&self) -> f64 {
        match self {
            Hessian::Dense(a) => {
                let n = a.nrows() as f64;
                a.iter().filter(|v| **v != 0.0).count() as f64 / (n * n)
            }
            Hessian::Sparse(a) => a.density(),
        }
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        match self {
            Hessian::Dense(a) => a.amax(),
            Hessian::Sparse(a) => a.max_abs(),
        }
    }

    /// Largest entry of `H − Hᵀ`.
    pub fn asymmetry(&self) -> f64 {
        match self {
            Hessian::Dense(a) => (a - a.transpose()).amax(),
            // symmetric by construction
            Hessian::Sparse(_) => 0.0,
        }
    }
}

impl From<DMatrix<f64>> for Hessian {
    fn from(a: DMatrix<f64>) -> Self {
        Hessian::Dense(a)
    }
}

impl From<SparseSymmetric> for Hessian {
    fn from(a: SparseSymmetric) -> Self {
        Hessian::Sparse(a)
    }
}
