mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use phisd::eigen::generalized_eigendecomposition;
use phisd::metric::SpdMetric;
use phisd::preconditioners::*;
use phisd::problems::{AllenCahn, BistableChain, GridSpec, Problem};
use phisd::sparse::SparseSymmetric;
use phisd::Hessian;
use proptest::prelude::*;

fn ladder(n: usize) -> DMatrix<f64> {
    let mut l = vec![-1.0];
    l.extend((2..=n).map(|i| i as f64));
    DMatrix::from_diagonal(&DVector::from_vec(l))
}

fn pencil_condition(h: &DMatrix<f64>, m: &SpdMetric) -> f64 {
    let e = generalized_eigendecomposition(h, m).unwrap();
    let abs: Vec<f64> = e.values.iter().map(|l| l.abs()).collect();
    abs.iter().cloned().fold(0.0, f64::max) / abs.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[test]
fn target_kappa_is_realized_by_frozen_spectral_metric() {
    let h = ladder(100);
    for kappa in [1.01, 2.0, 10.0] {
        let eps = epsilon_for_target_kappa(1.0, 100.0, kappa).unwrap();
        let m = frozen_spectral_metric(&Hessian::Dense(h.clone()), eps).unwrap();
        let got = pencil_condition(&h, &m);
        assert!((got - kappa).abs() < 1e-10 * kappa, "{kappa}: {got}");
    }
}

#[test]
fn spectral_metric_matches_eigen_oracle() {
    let mut r = rng(5);
    let a = random_symmetric(&mut r, 12);
    let eig = a.clone().symmetric_eigen();
    let oracle = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.abs() + 0.25)) * eig.eigenvectors.transpose();
    let m = spectral_metric(&Hessian::Dense(a), 0.25).unwrap();
    assert!(max_abs(&(m.to_dense().unwrap() - oracle)) < 1e-10);
    assert!(spectral_metric(&Hessian::Dense(DMatrix::identity(2, 2)), 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// `|A|` against the SVD oracle `|A| = VΣVᵀ`.
    #[test]
    fn block_jacobi_blocks_match_svd_abs(seed in any::<u64>(), sizes in prop::collection::vec(1usize..5, 1..5)) {
        let mut r = rng(seed);
        let n: usize = sizes.iter().sum();
        let a = random_symmetric(&mut r, n);
        let m = block_jacobi_metric(&Hessian::Dense(a.clone()), &sizes, 0.1).unwrap().to_dense().unwrap();
        let mut start = 0;
        for &s in &sizes {
            let block = a.view((start, start), (s, s)).into_owned();
            let svd = block.svd(true, true);
            let vt = svd.v_t.unwrap();
            let oracle = vt.transpose() * DMatrix::from_diagonal(&svd.singular_values) * &vt + DMatrix::identity(s, s) * 0.1;
            prop_assert!(max_abs(&(m.view((start, start), (s, s)).into_owned() - oracle)) < 1e-10);
            start += s;
        }
        // nothing outside the blocks
        let mut start = 0;
        let mut masked = m.clone();
        for &s in &sizes {
            masked.view_mut((start, start), (s, s)).fill(0.0);
            start += s;
        }
        prop_assert_eq!(max_abs(&masked), 0.0);
    }

    #[test]
    fn jacobi_is_positive_for_any_symmetric(seed in any::<u64>(), n in 1usize..10) {
        let mut r = rng(seed);
        let a = random_symmetric(&mut r, n);
        let m = jacobi_metric(&Hessian::Dense(a.clone()), 1e-3).unwrap().to_dense().unwrap();
        for i in 0..n {
            prop_assert!((m[(i, i)] - a[(i, i)].abs() - 1e-3).abs() < 1e-15);
        }
    }
}

#[test]
fn block_jacobi_rejects_bad_partitions() {
    let h = Hessian::Dense(DMatrix::identity(4, 4));
    assert!(block_jacobi_metric(&h, &[2, 1], 0.1).is_err());
    assert!(block_jacobi_metric(&h, &[2, 0, 2], 0.1).is_err());
    assert!(block_jacobi_metric(&h, &[2, 2], -1.0).is_err());
}

#[test]
fn shifted_cholesky_on_indefinite_chain() {
    let c = BistableChain::new(60, 1e4, 1.0).unwrap();
    let h = c.hessian(&DVector::zeros(120));
    assert!(h.is_sparse() && h.dim() > 100);
    let dense = h.to_dense();
    let lmin = dense.clone().symmetric_eigen().eigenvalues.min();
    assert!(lmin < 0.0);
    let delta = ic_shift(&h, 1.0).unwrap();
    // bisection accuracy is relative to the Gershgorin spread
    assert!((delta - (1.0 - lmin)).abs() < 1e-9 * dense.amax() * 4.0);

    let mut r = rng(1);
    let v = gaussian_vector(&mut r, h.dim());
    let shifted = &dense + DMatrix::identity(h.dim(), h.dim()) * delta;
    let complete = shifted_ic_metric(&h, &IcParams { complete: true, ..IcParams::default() }).unwrap();
    assert!((complete.apply(&v) - &shifted * &v).amax() < 1e-8 * shifted.amax());
    assert!((complete.solve(&(&shifted * &v)) - &v).amax() < 1e-8);

    // the chain Hessian is banded with no fill inside the band, so the zero-fill factor is exact too
    let zero_fill = shifted_ic_metric(&h, &IcParams::default()).unwrap();
    assert!((zero_fill.apply(&v) - &shifted * &v).amax() < 1e-8 * shifted.amax());
}

#[test]
fn incomplete_factor_reproduces_pattern_entries() {
    let ac = AllenCahn::new(GridSpec::new(12, 0.1).unwrap());
    let h = ac.hessian(&DVector::zeros(144));
    let m = shifted_ic_metric(&h, &IcParams::default()).unwrap();
    let md = m.to_dense().unwrap();
    let delta = ic_shift(&h, 1.0).unwrap();
    let a = h.to_dense() + DMatrix::identity(144, 144) * delta;
    for i in 0..144 {
        for j in 0..144 {
            if a[(i, j)] != 0.0 {
                assert!((md[(i, j)] - a[(i, j)]).abs() < 1e-9 * a.amax(), "({i},{j})");
            }
        }
    }
    let (lo, _) = {
        let e = md.symmetric_eigen().eigenvalues;
        (e.min(), e.max())
    };
    assert!(lo > 0.0);
}

#[test]
fn shift_margin_validation() {
    let h = Hessian::Dense(DMatrix::identity(3, 3));
    assert!(shifted_ic_metric(&h, &IcParams { margin: 0.0, ..IcParams::default() }).is_err());
    assert!(shifted_ic_metric(&h, &IcParams { drop_tol: -1.0, ..IcParams::default() }).is_err());
}

#[test]
fn shifted_operator_solves_exactly() {
    let ac = AllenCahn::new(GridSpec::new(10, 0.1).unwrap());
    let a = ac.laplacian().clone();
    let m = shifted_operator_metric(&a, 2.0).unwrap();
    let oracle = a.to_dense() + DMatrix::identity(100, 100) * 2.0;
    let mut r = rng(8);
    let b = gaussian_vector(&mut r, 100);
    let x = oracle.clone().lu().solve(&b).unwrap();
    assert!((m.solve(&b) - x).amax() < 1e-10);
    assert!(shifted_operator_metric(&a, -1.0).is_err());
    // singular A with c = 0 is not positive definite
    assert!(shifted_operator_metric(&a, 0.0).is_err());
    let neg = SparseSymmetric::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0]));
    assert!(shifted_operator_metric(&neg, 0.5).is_err());
}

#[test]
fn selection_table() {
    assert_eq!(select_metric(100, 0.1, false), Recommendation::FrozenSpectral);
    assert_eq!(select_metric(400, 0.01, true), Recommendation::BlockJacobi);
    assert_eq!(select_metric(1002, 0.004, true), Recommendation::ShiftedIncompleteCholesky);
    assert_eq!(select_metric(5000, 0.5, false), Recommendation::Jacobi);
}

#[test]
fn inertial_metric_against_mixing_oracle() {
    let mut r = rng(21);
    let n = 8;
    let a = random_symmetric(&mut r, n);
    let h = Hessian::Dense(a.clone());
    let params = InertialParams { alpha: 0.7, weights: vec![0.5, 2.0], beta: 1.5, epsilon: 0.1 };
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let old = gaussian_matrix(&mut r, n, 2).qr().q();
    let (m, v) = subspace_inertial_metric(&h, &params, Some(&old)).unwrap();

    // independent mix then Gram–Schmidt
    let mut w = DMatrix::zeros(n, 2);
    for c in 0..2 {
        let t = eig.eigenvectors.column(order[c]).into_owned();
        let o = old.column(c).into_owned();
        let s = if t.dot(&o) < 0.0 { -1.0 } else { 1.0 };
        w.set_column(c, &(t * (0.3 * s) + o * 0.7));
    }
    let q = w.qr().q();
    for c in 0..2 {
        let sign = q.column(c).dot(&v.column(c)).signum();
        assert!((q.column(c) * sign - v.column(c)).amax() < 1e-10);
    }
    let md = m.to_dense().unwrap();
    let rest = 1.5 * lam[2].abs() + 0.1;
    let mu = [0.5 * lam[0].abs() + 0.1, 2.0 * lam[1].abs() + 0.1];
    let oracle = DMatrix::identity(n, n) * rest
        + (0..2).map(|c| v.column(c) * v.column(c).transpose() * (mu[c] - rest)).fold(DMatrix::zeros(n, n), |a, b| a + b);
    assert!(max_abs(&(md - oracle)) < 1e-10);

    let bad = InertialParams { alpha: 1.0, ..params.clone() };
    assert!(subspace_inertial_metric(&h, &bad, None).is_err());
    let wrong_shape = DMatrix::zeros(n, 3);
    assert!(subspace_inertial_metric(&h, &params, Some(&wrong_shape)).is_err());
}
