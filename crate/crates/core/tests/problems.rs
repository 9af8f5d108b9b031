mod common;

use common::*;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use phisd::eigen::{morse_index, symmetric_eigen_sorted};
use phisd::metric::SpdMetric;
use phisd::problems::{finite_difference_check, AllenCahn, BistableChain, Butterfly, GridSpec, Problem, Quadratic};
use rand::Rng;

fn smooth_field(ac: &AllenCahn, seed: u64) -> DVector<f64> {
    let mut r = rng(seed);
    let n = ac.grid().n;
    let modes: Vec<(f64, f64, f64)> =
        (0..6).map(|_| (r.random_range(0.0..4.0), r.random_range(0.0..4.0), r.random_range(-0.4..0.4))).collect();
    DVector::from_fn(n * n, |p, _| {
        let (x, y) = (ac.coordinate(p / n), ac.coordinate(p % n));
        modes.iter().map(|(a, b, c)| c * (std::f64::consts::PI * (a * x + b * y)).cos()).sum()
    })
}

fn all_problems() -> Vec<(Box<dyn Problem>, Vec<DVector<f64>>)> {
    let mut r = rng(17);
    let q = Quadratic::integer_ladder(-1.0, 100).unwrap();
    let qp = (0..3).map(|_| gaussian_vector(&mut r, 100)).collect();
    let b = Butterfly::new(1.0);
    let bp = (0..3).map(|_| DVector::from_fn(2, |_, _| r.random_range(-2.0..2.0))).collect();
    let c = BistableChain::new(50, 1e4, 1.0).unwrap();
    let alt = c.named_state("alternating", &[]).unwrap();
    let cp = (0..3).map(|_| &alt + gaussian_vector(&mut r, 100) * 0.3).collect();
    let ac = AllenCahn::new(GridSpec::new(24, 0.07).unwrap());
    let ap = (0..3).map(|s| smooth_field(&ac, s)).collect();
    vec![(Box::new(q), qp), (Box::new(b), bp), (Box::new(c), cp), (Box::new(ac), ap)]
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    for (p, points) in all_problems() {
        for (i, x) in points.iter().enumerate() {
            let rep = finite_difference_check(p.as_ref(), x, None, 5, i as u64);
            assert!(rep.passed(), "{} point {i}: {rep:?}", p.name());
        }
    }
}

#[test]
fn finite_difference_check_catches_a_wrong_gradient() {
    struct Broken;
    impl Problem for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn dim(&self) -> usize {
            2
        }
        fn energy(&self, x: &DVector<f64>) -> f64 {
            x[0] * x[0] + x[0] * x[1]
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![2.0 * x[0], x[0]])
        }
        fn hessian(&self, _x: &DVector<f64>) -> phisd::Hessian {
            phisd::Hessian::Dense(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0]))
        }
    }
    let rep = finite_difference_check(&Broken, &DVector::from_vec(vec![0.3, 0.7]), None, 3, 0);
    assert!(!rep.passed() && rep.gradient_error > 1e-3);
}

#[test]
fn hessians_are_symmetric_on_probes() {
    let mut r = rng(4);
    for (p, points) in all_problems() {
        let h = p.hessian(&points[0]);
        for _ in 0..5 {
            let (u, v) = (gaussian_vector(&mut r, p.dim()), gaussian_vector(&mut r, p.dim()));
            let (a, b) = (u.dot(&h.mul_vec(&v)), v.dot(&h.mul_vec(&u)));
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{}", p.name());
        }
    }
}

#[test]
fn reference_points_are_critical_with_tagged_index() {
    let problems: Vec<Box<dyn Problem>> = vec![
        Box::new(Quadratic::integer_ladder(-1.0, 100).unwrap()),
        Box::new(Butterfly::new(1.0)),
        Box::new(BistableChain::new(50, 1e4, 1.0).unwrap()),
        Box::new(AllenCahn::new(GridSpec::new(40, 0.07).unwrap())),
    ];
    for p in problems {
        assert!(!p.reference_points().is_empty());
        for rp in p.reference_points() {
            assert!(p.gradient(&rp.x).norm() < 1e-8, "{} {}", p.name(), rp.label);
            let mi = morse_index(&p.hessian(&rp.x), &SpdMetric::identity(p.dim())).unwrap();
            assert_eq!(mi.index, rp.morse_index, "{} {}", p.name(), rp.label);
        }
    }
}

/// Grid scan of `‖∇E‖` built from energy differences only, followed by
/// Newton refinement with a difference Hessian: recovers every critical
/// point of the butterfly in `[-3, 3]²`.
#[test]
fn butterfly_critical_points_from_independent_scan() {
    let b = Butterfly::new(1.0);
    let e = |x: f64, y: f64| b.energy(&DVector::from_vec(vec![x, y]));
    let s = 1e-4;
    let grad = |x: f64, y: f64| Vector2::new((e(x + s, y) - e(x - s, y)) / (2.0 * s), (e(x, y + s) - e(x, y - s)) / (2.0 * s));
    let hess = |x: f64, y: f64| {
        let gx = (grad(x + s, y) - grad(x - s, y)) / (2.0 * s);
        let gy = (grad(x, y + s) - grad(x, y - s)) / (2.0 * s);
        Matrix2::new(gx[0], gy[0], gx[1], gy[1])
    };
    let mut found: Vec<(Vector2<f64>, usize)> = Vec::new();
    let steps = 60;
    for i in 0..=steps {
        for j in 0..=steps {
            let mut p = Vector2::new(-3.0 + 6.0 * i as f64 / steps as f64, -3.0 + 6.0 * j as f64 / steps as f64);
            if grad(p[0], p[1]).norm() > 3.0 {
                continue;
            }
            for _ in 0..50 {
                let Some(inv) = hess(p[0], p[1]).try_inverse() else { break };
                p -= inv * grad(p[0], p[1]);
                if p.amax() > 10.0 {
                    break;
                }
            }
            if p.amax() > 3.0 || grad(p[0], p[1]).norm() > 1e-6 {
                continue;
            }
            if found.iter().all(|(q, _)| (q - p).norm() > 1e-4) {
                let h = hess(p[0], p[1]);
                let ev = h.symmetric_eigen().eigenvalues;
                found.push((p, ev.iter().filter(|l| **l < 0.0).count()));
            }
        }
    }
    let saddles: Vec<_> = found.iter().filter(|(_, k)| *k == 1).collect();
    assert_eq!(saddles.len(), 1, "{found:?}");
    let reference = b.reference_point("saddle").unwrap().x;
    assert!((saddles[0].0 - Vector2::new(reference[0], reference[1])).norm() < 1e-6);
    for label in ["min_left", "min_right"] {
        let m = b.reference_point(label).unwrap().x;
        assert!(found.iter().any(|(p, k)| *k == 0 && (p - Vector2::new(m[0], m[1])).norm() < 1e-6), "{label}");
    }
}

#[test]
fn chain_hessian_sparsity_pattern() {
    let c = BistableChain::new(10, 1e4, 1.0).unwrap();
    let mut r = rng(9);
    let h = c.hessian(&gaussian_vector(&mut r, 20)).to_dense();
    for i in 0..20 {
        for j in 0..20 {
            let same_site = i / 2 == j / 2;
            let link = (i % 2 == 1 && j == i + 1) || (j % 2 == 1 && i == j + 1);
            if !same_site && !link {
                assert_eq!(h[(i, j)], 0.0);
            }
        }
    }
    assert_eq!(c.block_partition().unwrap(), vec![2; 10]);
}

#[test]
fn allen_cahn_operator_and_energies() {
    let g = GridSpec::new(16, 0.1).unwrap();
    let ac = AllenCahn::new(g);
    let (vals, _) = symmetric_eigen_sorted(&ac.laplacian().to_dense());
    assert!(vals[0].abs() < 1e-10 && vals[1] > 0.0);
    // constants lie in the kernel, so only the well term contributes
    let c = DVector::from_element(256, 0.4);
    let well = 256.0 * 0.25 * (0.16f64 - 1.0).powi(2) / 0.01;
    assert!((ac.energy(&c) - well).abs() < 1e-9 * well);
    // u ≡ 0: N² / (4ξ²)
    assert!((ac.energy(&DVector::zeros(256)) - 256.0 / 0.04).abs() < 1e-9);
    let one = DVector::from_element(256, 1.0);
    assert_eq!(morse_index(&ac.hessian(&one), &SpdMetric::identity(256)).unwrap().index, 0);
    assert!((GridSpec::new(80, 0.07).unwrap().resolution() - 5.53).abs() < 0.01);
}

#[test]
fn invalid_parameters_rejected() {
    assert!(Quadratic::new(vec![1.0, 0.0]).is_err());
    assert!(BistableChain::new(1, 1.0, 1.0).is_err());
    assert!(GridSpec::new(2, 0.1).is_err());
    assert!(GridSpec::new(10, 0.0).is_err());
    assert!(Butterfly::new(1.0).named_state("nowhere", &[]).is_err());
}
