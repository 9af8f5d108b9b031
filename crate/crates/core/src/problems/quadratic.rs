use nalgebra::{DMatrix, DVector};

use super::{Problem, ReferencePoint};
use crate::error::{Error, Result};
use crate::hessian::Hessian;

/// `E(x) = ½ xᵀ diag(λ) x`, a saddle at the origin whose index is the number of negative `λ_i`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    spectrum: DVector<f64>,
}

impl Quadratic {
    pub fn new(spectrum: Vec<f64>) -> Result<Self> {
        if spectrum.is_empty() {
            return Err(Error::InvalidParameter("quadratic spectrum is empty".into()));
        }
        if spectrum.iter().any(|l| *l == 0.0 || !l.is_finite()) {
            return Err(Error::InvalidParameter("quadratic spectrum entries must be finite and nonzero".into()));
        }
        Ok(Quadratic { spectrum: DVector::from_vec(spectrum) })
    }

    /// Spectrum `(first, 2, 3, …, last)`: one entry `first` followed by the integers `2..=last`.
    pub fn integer_ladder(first: f64, last: usize) -> Result<Self> {
        let mut s = vec![first];
        s.extend((2..=last).map(|i| i as f64));
        Self::new(s)
    }

    pub fn spectrum(&self) -> &DVector<f64> {
        &self.spectrum
    }

    /// `μ = min |λ_i|`.
    pub fn mu(&self) -> f64 {
        self.spectrum.iter().fold(f64::INFINITY, |m, l| m.min(l.abs()))
    }

    /// `L = max |λ_i|`.
    pub fn big_l(&self) -> f64 {
        self.spectrum.iter().fold(0.0, |m, l| m.max(l.abs()))
    }
}

impl Problem for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.spectrum.len()
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.iter().zip(self.spectrum.iter()).map(|(xi, l)| l * xi * xi).sum::<f64>()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.spectrum.component_mul(x)
    }

    fn hessian(&self, _x: &DVector<f64>) -> Hessian {
        Hessian::Dense(DMatrix::from_diagonal(&self.spectrum))
    }

    fn reference_points(&self) -> Vec<ReferencePoint> {
        vec![ReferencePoint {
            label: "origin",
            x: DVector::zeros(self.dim()),
            morse_index: self.spectrum.iter().filter(|l| **l < 0.0).count(),
            source: "analytic",
        }]
    }

    fn named_states(&self) -> &'static [&'static str] {
        &["corner"]
    }

    /// `"corner"`: `e_1 + e_n`.
    fn named_state(&self, name: &str, _params: &[f64]) -> Result<DVector<f64>> {
        match name {
            "corner" => {
                let n = self.dim();
                let mut x = DVector::zeros(n);
                x[0] = 1.0;
                x[n - 1] += 1.0;
                Ok(x)
            }
            _ => Err(Error::InvalidParameter(format!("quadratic has no named state '{name}'"))),
        }
    }
}
