//! Immersed-body incompressible flow library.
//!
//! One staggered-grid fluid core shared by several interchangeable
//! constraint-coupling schemes (elastic-fiber forcing, fictitious-domain
//! rigid solves, direct/velocity forcing, Brinkman penalization, penalty
//! surface forcing, and a fully implicit steady-Stokes solve with
//! distributed Lagrange multipliers), plus volume-penalized scalar
//! transport and one-sided moving-least-squares transfer kernels.

pub mod body;
pub mod coupling;
pub mod dlm;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod mls;
pub mod ns;
pub mod poisson;
pub mod rigid;
pub mod vp;

pub use error::{IbfdError, Result};
