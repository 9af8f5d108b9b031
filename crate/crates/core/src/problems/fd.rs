use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Problem;

/// Full gradient differencing is used up to this dimension; above it the
/// check runs along random directions.
const FULL_GRADIENT_LIMIT: usize = 200;

/// Outcome of [`finite_difference_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// Largest relative error of the analytic gradient.
    pub gradient_error: f64,
    /// Largest relative error of analytic Hessian–vector products.
    pub hessian_error: f64,
    /// First non-finite evaluation, if any.
    pub failure: Option<String>,
}

impl FdReport {
    pub const GRADIENT_TOL: f64 = 1e-6;
    pub const HESSIAN_TOL: f64 = 1e-5;

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.gradient_error < Self::GRADIENT_TOL && self.hessian_error < Self::HESSIAN_TOL
    }
}

/// Compares analytic derivatives with central differences at `x`.
///
/// With `step = None` the step is `ε^{1/3} max(1, ‖x‖∞)`. Gradient errors are
/// `‖g_fd − g‖ / ‖g‖` (componentwise differencing for `n <= 200`), or
/// `|D_d E − gᵀd| / (‖g‖‖d‖)` along `directions` random unit vectors for
/// larger `n`. Hessian errors are `‖(g(x+sd) − g(x−sd))/2s − Hd‖ / ‖Hd‖`.
pub fn finite_difference_check(
    problem: &dyn Problem,
    x: &DVector<f64>,
    step: Option<f64>,
    directions: usize,
    seed: u64,
) -> FdReport {
    let n = problem.dim();
    let s = step.unwrap_or_else(|| f64::EPSILON.cbrt() * x.amax().max(1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport { gradient_error: 0.0, hessian_error: 0.0, failure: None };

    let g = problem.gradient(x);
    if g.iter().any(|v| !v.is_finite()) || !problem.energy(x).is_finite() {
        report.failure = Some("non-finite energy or gradient at the base point".into());
        return report;
    }
    let rel = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den.max(f64::MIN_POSITIVE) };

    if n <= FULL_GRADIENT_LIMIT {
        let mut fd = DVector::zeros(n);
        let mut xp = x.clone();
        for i in 0..n {
            let xi = x[i];
            xp[i] = xi + s;
            let ep = problem.energy(&xp);
            xp[i] = xi - s;
            let em = problem.energy(&xp);
            xp[i] = xi;
            if !ep.is_finite() || !em.is_finite() {
                report.failure = Some(format!("non-finite energy when perturbing component {i}"));
                return report;
            }
            fd[i] = (ep - em) / (2.0 * s);
        }
        report.gradient_error = rel((&fd - &g).norm(), g.norm().max(fd.norm()));
    }

    let hess = problem.hessian(x);
    for trial in 0..directions {
        let mut d = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        d /= d.norm();
        let xp = x + &d * s;
        let xm = x - &d * s;
        if n > FULL_GRADIENT_LIMIT {
            let (ep, em) = (problem.energy(&xp), problem.energy(&xm));
            if !ep.is_finite() || !em.is_finite() {
                report.failure = Some(format!("non-finite energy along direction {trial}"));
                return report;
            }
            let dd = (ep - em) / (2.0 * s);
            let e = rel((dd - g.dot(&d)).abs(), g.norm());
            report.gradient_error = report.gradient_error.max(e);
        }
        let (gp, gm) = (problem.gradient(&xp), problem.gradient(&xm));
        if gp.iter().chain(gm.iter()).any(|v| !v.is_finite()) {
            report.failure = Some(format!("non-finite gradient along direction {trial}"));
            return report;
        }
        let fd = (gp - gm) / (2.0 * s);
        let hd = hess.mul_vec(&d);
        let e = rel((&fd - &hd).norm(), hd.norm().max(fd.norm()));
        report.hessian_error = report.hessian_error.max(e);
    }
    report
}
