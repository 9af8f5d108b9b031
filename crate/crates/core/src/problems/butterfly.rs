use nalgebra::{DMatrix, DVector};

use super::{Problem, ReferencePoint};
use crate::hessian::Hessian;

/// Two-dimensional landscape
/// `E(x, y) = x⁴ − 2x² + y⁴ + y² − 3/2 x²y² + x²y − c y³`.
///
/// The origin is an index-1 saddle for every `c` (Hessian `diag(−4, 2)`).
/// For `c = 1` the remaining critical points are the two minima `(±3/2, −1)`.
#[derive(Clone, Debug)]
pub struct Butterfly {
    c: f64,
}

impl Butterfly {
    pub fn new(c: f64) -> Self {
        Butterfly { c }
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Problem for Butterfly {
    fn name(&self) -> &str {
        "butterfly"
    }

    fn dim(&self) -> usize {
        2
    }

    fn energy(&self, p: &DVector<f64>) -> f64 {
        let (x, y) = (p[0], p[1]);
        let (x2, y2) = (x * x, y * y);
        x2 * x2 - 2.0 * x2 + y2 * y2 + y2 - 1.5 * x2 * y2 + x2 * y - self.c * y2 * y
    }

    fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        let (x, y) = (p[0], p[1]);
        DVector::from_vec(vec![
            4.0 * x * x * x - 4.0 * x - 3.0 * x * y * y + 2.0 * x * y,
            4.0 * y * y * y + 2.0 * y - 3.0 * x * x * y + x * x - 3.0 * self.c * y * y,
        ])
    }

    fn hessian(&self, p: &DVector<f64>) -> Hessian {
        let (x, y) = (p[0], p[1]);
        let hxx = 12.0 * x * x - 4.0 - 3.0 * y * y + 2.0 * y;
        let hxy = -6.0 * x * y + 2.0 * x;
        let hyy = 12.0 * y * y + 2.0 - 3.0 * x * x - 6.0 * self.c * y;
        Hessian::Dense(DMatrix::from_row_slice(2, 2, &[hxx, hxy, hxy, hyy]))
    }

    fn reference_points(&self) -> Vec<ReferencePoint> {
        let mut pts = vec![ReferencePoint {
            label: "saddle",
            x: DVector::zeros(2),
            morse_index: 1,
            source: "grid scan over [-3,3]^2 with Newton refinement",
        }];
        if self.c == 1.0 {
            for (label, x) in [("min_left", -1.5), ("min_right", 1.5)] {
                pts.push(ReferencePoint {
                    label,
                    x: DVector::from_vec(vec![x, -1.0]),
                    morse_index: 0,
                    source: "grid scan over [-3,3]^2 with Newton refinement",
                });
            }
        }
        pts
    }
}
