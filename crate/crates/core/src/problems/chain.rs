use nalgebra::DVector;

use super::{Problem, ReferencePoint};
use crate::error::{Error, Result};
use crate::hessian::Hessian;
use crate::sparse::SparseSymmetric;

/// Chain of `N` bistable sites, each holding a stiffly bonded pair `(u_i, v_i)`:
///
/// `E = Σ K/2 (u_i − v_i)² + Σ [(u_i² − 1)² + (v_i² − 1)²] + Σ δ/2 (v_i − u_{i+1})²`.
///
/// Variables are interleaved as `(u_1, v_1, u_2, v_2, …)` so each site is a
/// contiguous 2×2 Hessian block; the only off-block entries couple `v_i` and `u_{i+1}`.
#[derive(Clone, Debug)]
pub struct BistableChain {
    sites: usize,
    stiffness: f64,
    coupling: f64,
}

impl BistableChain {
    pub fn new(sites: usize, stiffness: f64, coupling: f64) -> Result<Self> {
        if sites < 2 {
            return Err(Error::InvalidParameter("chain needs at least 2 sites".into()));
        }
        if !(stiffness > 0.0) || !(coupling > 0.0) {
            return Err(Error::InvalidParameter("chain stiffness and coupling must be positive".into()));
        }
        Ok(BistableChain { sites, stiffness, coupling })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    fn uniform(&self, value: f64) -> DVector<f64> {
        DVector::from_element(2 * self.sites, value)
    }
}

impl Problem for BistableChain {
    fn name(&self) -> &str {
        "chain"
    }

    fn dim(&self) -> usize {
        2 * self.sites
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        let (k, d) = (self.stiffness, self.coupling);
        let well = |s: f64| (s * s - 1.0).powi(2);
        let mut e = 0.0;
        for i in 0..self.sites {
            let (u, v) = (x[2 * i], x[2 * i + 1]);
            e += 0.5 * k * (u - v).powi(2) + well(u) + well(v);
            if i + 1 < self.sites {
                e += 0.5 * d * (v - x[2 * i + 2]).powi(2);
            }
        }
        e
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (k, d) = (self.stiffness, self.coupling);
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.sites {
            let (u, v) = (x[2 * i], x[2 * i + 1]);
            g[2 * i] += k * (u - v) + 4.0 * u * (u * u - 1.0);
            g[2 * i + 1] += -k * (u - v) + 4.0 * v * (v * v - 1.0);
            if i + 1 < self.sites {
                let s = d * (v - x[2 * i + 2]);
                g[2 * i + 1] += s;
                g[2 * i + 2] -= s;
            }
        }
        g
    }

    fn hessian(&self, x: &DVector<f64>) -> Hessian {
        let (k, d) = (self.stiffness, self.coupling);
        let mut t = Vec::with_capacity(5 * self.sites);
        for i in 0..self.sites {
            let (iu, iv) = (2 * i, 2 * i + 1);
            t.push((iu, iu, k + 12.0 * x[iu] * x[iu] - 4.0));
            t.push((iv, iv, k + 12.0 * x[iv] * x[iv] - 4.0));
            t.push((iu, iv, -k));
            if i + 1 < self.sites {
                t.push((iv, iv, d));
                t.push((iv + 1, iv + 1, d));
                t.push((iv, iv + 1, -d));
            }
        }
        Hessian::Sparse(SparseSymmetric::from_triplets(self.dim(), t).expect("indices in range"))
    }

    fn block_partition(&self) -> Option<Vec<usize>> {
        Some(vec![2; self.sites])
    }

    fn reference_points(&self) -> Vec<ReferencePoint> {
        vec![
            ReferencePoint { label: "plus", x: self.uniform(1.0), morse_index: 0, source: "analytic" },
            ReferencePoint { label: "minus", x: self.uniform(-1.0), morse_index: 0, source: "analytic" },
        ]
    }

    fn named_states(&self) -> &'static [&'static str] {
        &["alternating", "uniform"]
    }

    /// `"alternating"`: `u_i = v_i = (−1)^i` for `i = 1..N`. `"uniform"`: all ones.
    fn named_state(&self, name: &str, _params: &[f64]) -> Result<DVector<f64>> {
        match name {
            "alternating" => Ok(DVector::from_fn(self.dim(), |j, _| if (j / 2) % 2 == 0 { -1.0 } else { 1.0 })),
            "uniform" => Ok(self.uniform(1.0)),
            _ => Err(Error::InvalidParameter(format!("chain has no named state '{name}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_state_is_a_minimum() {
        let c = BistableChain::new(50, 1e4, 1.0).unwrap();
        let x = c.uniform(1.0);
        assert_eq!(c.energy(&x), 0.0);
        assert_eq!(c.gradient(&x).amax(), 0.0);
    }

    #[test]
    fn alternating_energy_counts_bonds() {
        let c = BistableChain::new(50, 1e4, 1.0).unwrap();
        let x = c.named_state("alternating", &[]).unwrap();
        assert_eq!(x[0], -1.0);
        assert_eq!(x[2], 1.0);
        assert!((c.energy(&x) - 98.0).abs() < 1e-12);
    }

    #[test]
    fn hessian_pattern_is_block_plus_coupling() {
        let c = BistableChain::new(4, 10.0, 0.5).unwrap();
        let h = c.hessian(&c.uniform(0.3)).to_dense();
        for i in 0..8 {
            for j in 0..8 {
                let same_site = i / 2 == j / 2;
                let link = (i % 2 == 1 && j == i + 1) || (j % 2 == 1 && i == j + 1);
                if !same_site && !link {
                    assert_eq!(h[(i, j)], 0.0, "({i},{j})");
                }
            }
        }
        assert_eq!(h[(1, 2)], -0.5);
    }
}
