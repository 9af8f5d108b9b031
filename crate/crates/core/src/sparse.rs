//! Compressed sparse symmetric matrices and their LDLᵀ factorizations.
//!
//! Two factorizations share one storage type ([`LdltFactor`]):
//!
//! * [`LdltFactor::envelope`] is a complete factorization restricted to the
//!   row envelope (skyline) of the matrix. Fill stays inside the envelope, so
//!   banded operators such as the five-point Laplacian in natural ordering
//!   factor in `O(n b²)`. It does not pivot; it is used both for SPD solves
//!   and for Sylvester inertia counts of indefinite matrices.
//! * [`LdltFactor::incomplete`] is the zero-fill variant: the strictly lower
//!   pattern of the input is kept and everything else is discarded.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric matrix in compressed-row storage with both triangles present.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Builds the matrix from `(i, j, value)` triplets.
    ///
    /// Each off-diagonal triplet is mirrored, so an unordered pair must be
    /// listed once. Duplicates are summed.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch { expected: n, found: i.max(j) + 1 });
            }
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite entry at ({i}, {j})")));
            }
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        Ok(Self::from_rows(n, rows))
    }

    fn from_rows(n: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseSymmetric { n, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&DVector::from_element(n, 1.0))
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Self {
        let n = d.len();
        SparseSymmetric {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.iter().copied().collect(),
        }
    }

    /// Converts a dense symmetric matrix, dropping entries with `|a_ij| <= drop`.
    pub fn from_dense(a: &DMatrix<f64>, drop: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: a.ncols() });
        }
        let mut rows = vec![Vec::new(); n];
        for (i, row) in rows.iter_mut().enumerate() {
            for j in 0..n {
                let v = 0.5 * (a[(i, j)] + a[(j, i)]);
                if v.abs() > drop || i == j {
                    row.push((j, v));
                }
            }
        }
        Ok(Self::from_rows(n, rows))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored nonzeros, counting both triangles.
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// `nnz / n²`.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n as f64 * self.n as f64)
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n, "sparse matvec dimension mismatch");
        DVector::from_fn(self.n, |i, _| self.row(i).map(|(j, v)| v * x[j]).sum())
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.get(i, i))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[(i, j)] = v;
            }
        }
        a
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s I`.
    pub fn shifted(&self, s: f64) -> Self {
        self.add_scaled(&Self::identity(self.n), s)
    }

    /// `self + s · other` on the union of both patterns.
    pub fn add_scaled(&self, other: &SparseSymmetric, s: f64) -> Self {
        assert_eq!(self.n, other.n, "sparse add dimension mismatch");
        let rows = (0..self.n)
            .map(|i| {
                self.row(i)
                    .chain(other.row(i).map(|(j, v)| (j, s * v)))
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::from_rows(self.n, rows)
    }

    /// Gershgorin enclosure `[lo, hi]` of the spectrum.
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let mut diag = 0.0;
            let mut radius = 0.0;
            for (j, v) in self.row(i) {
                if j == i {
                    diag = v;
                } else {
                    radius += v.abs();
                }
            }
            lo = lo.min(diag - radius);
            hi = hi.max(diag + radius);
        }
        (lo, hi)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Column of the first stored entry in each row (the envelope start).
    fn envelope_starts(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| self.row(i).next().map_or(i, |(j, _)| j.min(i)))
            .collect()
    }
}

/// Counts of negative, zero and positive pivots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

/// `A ≈ L D Lᵀ` with unit lower-triangular `L` stored by rows.
#[derive(Clone, Debug)]
pub struct LdltFactor {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl LdltFactor {
    /// Complete LDLᵀ inside the row envelope. Pivots are not checked for sign;
    /// an exactly vanishing pivot is an error.
    pub fn envelope(a: &SparseSymmetric) -> Result<Self> {
        let n = a.dim();
        let first = a.envelope_starts();
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i]));
        }
        let mut l = vec![0.0; start[n]];
        let mut d = vec![0.0; n];
        let scale = a.max_abs().max(f64::MIN_POSITIVE);

        // `t[k]` holds l_ik d_k for the current row.
        let mut t = vec![0.0; n];
        for i in 0..n {
            let fi = first[i];
            let row_i = start[i];
            for (j, v) in a.row(i) {
                if j < i {
                    l[row_i + (j - fi)] = v;
                }
            }
            let mut diag = a.get(i, i);
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let row_j = start[j];
                let mut s = l[row_i + (j - fi)];
                for k in lo..j {
                    s -= t[k] * l[row_j + (k - fj)];
                }
                t[j] = s;
                let lij = s / d[j];
                l[row_i + (j - fi)] = lij;
                diag -= s * lij;
            }
            if !diag.is_finite() || diag.abs() <= 1e-300 * scale {
                return Err(Error::Breakdown { pivot: i, value: diag });
            }
            d[i] = diag;
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(l.len());
        row_ptr.push(0);
        for i in 0..n {
            cols.extend(first[i]..i);
            row_ptr.push(cols.len());
        }
        Ok(LdltFactor { n, row_ptr, cols, l, d })
    }

    /// Envelope factorization that additionally requires every pivot to be positive.
    pub fn envelope_spd(a: &SparseSymmetric) -> Result<Self> {
        let f = Self::envelope(a)?;
        f.require_positive()?;
        Ok(f)
    }

    /// Zero-fill incomplete LDLᵀ on the strictly lower pattern of `a`.
    ///
    /// Off-diagonal factor entries with `|l_ij d_j| < drop_tol · sqrt(|a_ii a_jj|)`
    /// are discarded. A nonpositive pivot is reported as [`Error::Breakdown`].
    pub fn incomplete(a: &SparseSymmetric, drop_tol: f64) -> Result<Self> {
        let n = a.dim();
        let diag_a = a.diagonal();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols: Vec<usize> = Vec::new();
        let mut l: Vec<f64> = Vec::new();
        let mut d = vec![0.0; n];
        row_ptr.push(0);
        for i in 0..n {
            let row_start = cols.len();
            let mut diag = diag_a[i];
            for (j, v) in a.row(i) {
                if j >= i {
                    break;
                }
                // sparse dot of rows i and j over columns < j, weighted by d
                let (ri, rj) = (row_start..cols.len(), row_ptr[j]..row_ptr[j + 1]);
                let mut s = v;
                let (mut p, mut q) = (ri.start, rj.start);
                while p < ri.end && q < rj.end {
                    match cols[p].cmp(&cols[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            s -= l[p] * d[cols[p]] * l[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
                let lij = s / d[j];
                if drop_tol > 0.0 && s.abs() < drop_tol * (diag_a[i] * diag_a[j]).abs().sqrt() {
                    continue;
                }
                cols.push(j);
                l.push(lij);
                diag -= s * lij;
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::Breakdown { pivot: i, value: diag });
            }
            d[i] = diag;
            row_ptr.push(cols.len());
        }
        Ok(LdltFactor { n, row_ptr, cols, l, d })
    }

    fn require_positive(&self) -> Result<()> {
        match self.d.iter().position(|&v| !(v > 0.0)) {
            Some(p) => Err(Error::Breakdown { pivot: p, value: self.d[p] }),
            None => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of `L`, including the unit diagonal.
    pub fn nnz(&self) -> usize {
        self.l.len() + self.n
    }

    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    /// Sylvester inertia of the factored matrix. Pivots with
    /// `|d_i| <= zero_tol` are counted as zero.
    pub fn inertia(&self, zero_tol: f64) -> Inertia {
        let mut out = Inertia { negative: 0, zero: 0, positive: 0 };
        for &v in &self.d {
            if v.abs() <= zero_tol {
                out.zero += 1;
            } else if v < 0.0 {
                out.negative += 1;
            } else {
                out.positive += 1;
            }
        }
        out
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.l[r].iter().copied())
    }

    /// Solves `L D Lᵀ x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n, "factor solve dimension mismatch");
        let mut x = b.clone();
        for i in 0..self.n {
            let s: f64 = self.row(i).map(|(k, lik)| lik * x[k]).sum();
            x[i] -= s;
        }
        for i in 0..self.n {
            x[i] /= self.d[i];
        }
        for i in (0..self.n).rev() {
            let xi = x[i];
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            for p in r {
                x[self.cols[p]] -= self.l[p] * xi;
            }
        }
        x
    }

    /// Computes `L D Lᵀ v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.n, "factor apply dimension mismatch");
        let mut w = v.clone();
        for i in 0..self.n {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            for p in r {
                w[self.cols[p]] += self.l[p] * v[i];
            }
        }
        for i in 0..self.n {
            w[i] *= self.d[i];
        }
        let mut y = w.clone();
        for i in 0..self.n {
            let s: f64 = self.row(i).map(|(k, lik)| lik * w[k]).sum();
            y[i] += s;
        }
        y
    }

    /// Materializes `L D Lᵀ` as a sparse matrix.
    pub fn product(&self) -> SparseSymmetric {
        // (L D Lᵀ)_{ij} = sum_k l_ik d_k l_jk over the shared columns, including k = i, j.
        let full_row = |i: usize| -> Vec<(usize, f64)> {
            let mut r: Vec<(usize, f64)> = self.row(i).collect();
            r.push((i, 1.0));
            r
        };
        let rows_full: Vec<Vec<(usize, f64)>> = (0..self.n).map(full_row).collect();
        // column lists: which rows touch column k
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for (i, r) in rows_full.iter().enumerate() {
            for &(k, v) in r {
                by_col[k].push((i, v));
            }
        }
        let mut triplets = Vec::new();
        for (k, entries) in by_col.iter().enumerate() {
            for (a, &(i, li)) in entries.iter().enumerate() {
                for &(j, lj) in &entries[..=a] {
                    triplets.push((i, j, li * self.d[k] * lj));
                }
            }
        }
        SparseSymmetric::from_triplets(self.n, triplets).expect("indices in range by construction")
    }
}
