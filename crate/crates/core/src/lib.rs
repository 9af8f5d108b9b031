//! Saddle search with preconditioned high-index saddle dynamics.
//!
//! The guide in `book/` walks through the pieces; its code blocks run as doc-tests.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod harness;
pub mod hessian;
pub mod metric;
pub mod preconditioners;
pub mod problems;
pub mod sparse;
pub use error::{Error, Result};
pub use hessian::Hessian;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/preconditioners.md")]
    mod preconditioners {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
