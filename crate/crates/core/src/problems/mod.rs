//! Benchmark energies with analytic gradients and Hessians.

mod allen_cahn;
mod butterfly;
mod chain;
mod fd;
mod quadratic;

pub use allen_cahn::{AllenCahn, GridSpec, MIN_INTERFACE_RESOLUTION};
pub use butterfly::Butterfly;
pub use chain::BistableChain;
pub use fd::{finite_difference_check, FdReport};
pub use quadratic::Quadratic;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hessian::Hessian;
use crate::sparse::SparseSymmetric;

/// A known critical point of a problem.
#[derive(Clone, Debug)]
pub struct ReferencePoint {
    pub label: &'static str,
    pub x: DVector<f64>,
    pub morse_index: usize,
    /// How the point was obtained, e.g. `"analytic"`.
    pub source: &'static str,
}

/// A smooth energy `E: ℝⁿ → ℝ` with analytic first and second derivatives.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn energy(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    fn hessian(&self, x: &DVector<f64>) -> Hessian;

    /// Contiguous diagonal block sizes that expose coupled components.
    fn block_partition(&self) -> Option<Vec<usize>> {
        None
    }

    /// A positive semidefinite operator carrying the stiff part of the
    /// Hessian, used by shifted-operator metrics.
    fn base_operator(&self) -> Option<SparseSymmetric> {
        None
    }

    fn reference_points(&self) -> Vec<ReferencePoint> {
        Vec::new()
    }

    /// A problem-specific starting state. `params` carries optional shape coefficients.
    fn named_state(&self, name: &str, params: &[f64]) -> Result<DVector<f64>> {
        let _ = params;
        Err(Error::InvalidParameter(format!("problem '{}' has no named state '{name}'", self.name())))
    }

    /// Names accepted by [`Problem::named_state`].
    fn named_states(&self) -> &'static [&'static str] {
        &[]
    }

    /// Looks up a reference point by label.
    fn reference_point(&self, label: &str) -> Result<ReferencePoint> {
        self.reference_points().into_iter().find(|p| p.label == label).ok_or_else(|| {
            Error::InvalidParameter(format!("problem '{}' has no reference point '{label}'", self.name()))
        })
    }
}
