//! Homogeneous and metric generalized inverses of bounded operators between
//! finite-dimensional lp spaces, and checks of their behaviour under
//! stable perturbations.

pub mod error;
pub mod geninv;
pub mod harness;
pub mod linalg;
pub mod operators;
pub mod oracle;
pub mod perturb;
pub mod projection;
pub mod sampling;
pub mod space;
pub mod subspace;

pub use error::{Error, Result};

/// The book's code snippets, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/spaces-and-projections.md")]
    mod spaces_and_projections {}
    #[doc = include_str!("../../../book/src/generalized-inverses.md")]
    mod generalized_inverses {}
    #[doc = include_str!("../../../book/src/perturbations.md")]
    mod perturbations {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
}
