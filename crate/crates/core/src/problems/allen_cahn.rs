use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DVector;

use super::{Problem, ReferencePoint};
use crate::error::{Error, Result};
use crate::hessian::Hessian;
use crate::sparse::{LdltFactor, SparseSymmetric};

/// Smallest `ξ/h` at which the flat layer is registered as an index-1 reference point.
pub const MIN_INTERFACE_RESOLUTION: f64 = 2.5;

/// Uniform `N × N` grid on the unit square with interface width `ξ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub xi: f64,
}

impl GridSpec {
    pub fn new(n: usize, xi: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!("grid needs N >= 3, got {n}")));
        }
        if !(xi > 0.0) {
            return Err(Error::InvalidParameter("interface width must be positive".into()));
        }
        Ok(GridSpec { n, xi })
    }

    /// Mesh size `1 / (N − 1)`.
    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 - 1.0)
    }

    /// Interface resolution `ξ / h`.
    pub fn resolution(&self) -> f64 {
        self.xi / self.h()
    }
}

/// Five-point finite-difference Allen–Cahn energy with homogeneous Neumann boundaries:
///
/// `E(u) = ½ uᵀ A u + ξ⁻² Σ_p F(u_p)`, `F(u) = ¼ (u² − 1)²`,
///
/// where `A = −Δ_h` is the symmetric Neumann Laplacian (graph Laplacian of the
/// grid divided by `h²`, mirror ghost nodes folded in). The gradient is
/// `Au + ξ⁻²(u³ − u)` and the Hessian `A + diag((3u² − 1)/ξ²)`.
///
/// Unknowns are ordered with `x` as the slow index: `p = i_x N + i_y`.
#[derive(Debug)]
pub struct AllenCahn {
    grid: GridSpec,
    laplacian: SparseSymmetric,
    profile: OnceLock<Result<DVector<f64>>>,
}

impl Clone for AllenCahn {
    fn clone(&self) -> Self {
        AllenCahn { grid: self.grid, laplacian: self.laplacian.clone(), profile: OnceLock::new() }
    }
}

/// Graph Laplacian of a path with `n` nodes, scaled by `1/h²`.
fn path_laplacian(n: usize, h: f64) -> Vec<(usize, usize, f64)> {
    let s = 1.0 / (h * h);
    let mut t = Vec::new();
    for i in 0..n {
        let deg = if i == 0 || i + 1 == n { 1.0 } else { 2.0 };
        t.push((i, i, deg * s));
        if i + 1 < n {
            t.push((i, i + 1, -s));
        }
    }
    t
}

impl AllenCahn {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.n;
        let s = 1.0 / (grid.h() * grid.h());
        let mut t = Vec::with_capacity(3 * n * n);
        for ix in 0..n {
            for iy in 0..n {
                let p = ix * n + iy;
                let deg = [ix > 0, ix + 1 < n, iy > 0, iy + 1 < n].iter().filter(|b| **b).count();
                t.push((p, p, deg as f64 * s));
                if ix + 1 < n {
                    t.push((p, p + n, -s));
                }
                if iy + 1 < n {
                    t.push((p, p + 1, -s));
                }
            }
        }
        let laplacian = SparseSymmetric::from_triplets(n * n, t).expect("indices in range");
        AllenCahn { grid, laplacian, profile: OnceLock::new() }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// The Neumann operator `−Δ_h`.
    pub fn laplacian(&self) -> &SparseSymmetric {
        &self.laplacian
    }

    fn inv_xi2(&self) -> f64 {
        1.0 / (self.grid.xi * self.grid.xi)
    }

    /// Grid coordinate `i h`.
    pub fn coordinate(&self, i: usize) -> f64 {
        i as f64 * self.grid.h()
    }

    /// Odd one-dimensional transition layer `φ` centred at `x = 1/2`, solved
    /// by Newton's method on the one-dimensional discrete problem.
    pub fn interface_profile(&self) -> Result<DVector<f64>> {
        self.profile.get_or_init(|| self.solve_profile()).clone()
    }

    fn solve_profile(&self) -> Result<DVector<f64>> {
        let n = self.grid.n;
        let a = SparseSymmetric::from_triplets(n, path_laplacian(n, self.grid.h()))?;
        let w = (2.0f64).sqrt() * self.grid.xi;
        let mut phi = DVector::from_fn(n, |i, _| ((self.coordinate(i) - 0.5) / w).tanh());
        let c = self.inv_xi2();
        for _ in 0..50 {
            let g = a.mul_vec(&phi) + phi.map(|p| c * (p * p * p - p));
            if g.amax() < 1e-11 {
                break;
            }
            let jac = a.add_scaled(&SparseSymmetric::from_diagonal(&phi.map(|p| c * (3.0 * p * p - 1.0))), 1.0);
            phi -= LdltFactor::envelope(&jac)?.solve(&g);
        }
        // enforce exact odd symmetry about the centre
        let sym = DVector::from_fn(n, |i, _| 0.5 * (phi[i] - phi[n - 1 - i]));
        Ok(sym)
    }

    /// `φ(x) − φ'(x) Σ_j a_j cos(jπy)`: the flat layer displaced by a small
    /// bending `Σ a_j cos(jπy)` to first order. `φ'` uses central differences.
    pub fn bent_interface(&self, amplitudes: &[f64]) -> Result<DVector<f64>> {
        let n = self.grid.n;
        let phi = self.interface_profile()?;
        let h = self.grid.h();
        let dphi = DVector::from_fn(n, |i, _| match i {
            0 => (phi[1] - phi[0]) / h,
            _ if i + 1 == n => (phi[n - 1] - phi[n - 2]) / h,
            _ => (phi[i + 1] - phi[i - 1]) / (2.0 * h),
        });
        let shift: Vec<f64> = (0..n)
            .map(|iy| {
                let y = self.coordinate(iy);
                amplitudes.iter().enumerate().map(|(j, a)| a * ((j + 1) as f64 * PI * y).cos()).sum()
            })
            .collect();
        Ok(DVector::from_fn(n * n, |p, _| {
            let (ix, iy) = (p / n, p % n);
            phi[ix] - dphi[ix] * shift[iy]
        }))
    }
}

impl Problem for AllenCahn {
    fn name(&self) -> &str {
        "allen_cahn"
    }

    fn dim(&self) -> usize {
        self.grid.n * self.grid.n
    }

    fn energy(&self, u: &DVector<f64>) -> f64 {
        let c = self.inv_xi2();
        0.5 * u.dot(&self.laplacian.mul_vec(u)) + c * u.iter().map(|v| 0.25 * (v * v - 1.0).powi(2)).sum::<f64>()
    }

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        let c = self.inv_xi2();
        self.laplacian.mul_vec(u) + u.map(|v| c * (v * v * v - v))
    }

    fn hessian(&self, u: &DVector<f64>) -> Hessian {
        let c = self.inv_xi2();
        let reaction = SparseSymmetric::from_diagonal(&u.map(|v| c * (3.0 * v * v - 1.0)));
        Hessian::Sparse(self.laplacian.add_scaled(&reaction, 1.0))
    }

    fn base_operator(&self) -> Option<SparseSymmetric> {
        Some(self.laplacian.clone())
    }

    fn reference_points(&self) -> Vec<ReferencePoint> {
        let n2 = self.dim();
        let mut pts = vec![
            ReferencePoint { label: "plus", x: DVector::from_element(n2, 1.0), morse_index: 0, source: "analytic" },
            ReferencePoint { label: "minus", x: DVector::from_element(n2, -1.0), morse_index: 0, source: "analytic" },
        ];
        // on coarse grids the layer is pinned and the translation mode turns stable
        if self.grid.resolution() < MIN_INTERFACE_RESOLUTION {
            return pts;
        }
        if let Ok(x) = self.bent_interface(&[]) {
            pts.push(ReferencePoint {
                label: "flat_interface",
                x,
                morse_index: 1,
                source: "one-dimensional Newton solve extended constantly in y",
            });
        }
        pts
    }

    fn named_states(&self) -> &'static [&'static str] {
        &["interface", "tanh"]
    }

    /// `"interface"`: [`AllenCahn::bent_interface`] with `params` as the
    /// amplitudes of `cos(πy), cos(2πy), …`. `"tanh"`: `tanh((x − 1/2)/(√2 ξ))`.
    fn named_state(&self, name: &str, params: &[f64]) -> Result<DVector<f64>> {
        let n = self.grid.n;
        match name {
            "interface" => self.bent_interface(params),
            "tanh" => {
                let w = (2.0f64).sqrt() * self.grid.xi;
                Ok(DVector::from_fn(n * n, |p, _| ((self.coordinate(p / n) - 0.5) / w).tanh()))
            }
            _ => Err(Error::InvalidParameter(format!("allen_cahn has no named state '{name}'"))),
        }
    }
}
