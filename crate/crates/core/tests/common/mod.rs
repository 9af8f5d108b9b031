#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, n, n);
    (&a + a.transpose()) * 0.5
}

/// `BBᵀ + cI` with condition number up to roughly `1e3`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = gaussian_matrix(rng, n, n);
    let c: f64 = rng.random_range(0.05..2.0);
    &b * b.transpose() + DMatrix::identity(n, n) * c
}

/// `M^{-1/2}` by a spectral square root; independent of any Cholesky path.
pub fn inverse_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = e.eigenvalues.map(|l| 1.0 / l.sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Ascending eigenvalues of the congruence `M^{-1/2} H M^{-1/2}`.
pub fn congruence_spectrum(h: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    let s = inverse_sqrt(m);
    let c = &s * h * &s;
    let mut v: Vec<f64> = SymmetricEigen::new((&c + c.transpose()) * 0.5).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Orthogonal projector onto span(V) in the Euclidean sense.
pub fn projector(v: &DMatrix<f64>) -> DMatrix<f64> {
    let q = v.clone().qr().q();
    &q * q.transpose()
}
