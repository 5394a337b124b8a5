//! Numerical solver and verification harness for the singular semilinear
//! Dirichlet problem `-Δu = f / u^β` in `Ω`, `u > 0` in `Ω`, `u = 0` on `∂Ω`,
//! with `β > 0` and `f >= 0`.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`]: domains, structured grids, the discrete negative Laplacian,
//!   nodal fields, norms and reflections.
//! * [`solver`]: the regularized problems `-Δu_n = f_n / (u_n + 1/n)^β` and
//!   the continuation `n -> ∞` that produces the singular solution.
//! * [`variational`]: the truncated nonlinearity, its primitive, the
//!   associated convex functional, obstacle minimization over `0 <= φ <= v`
//!   and the comparison certificate built on it.
//! * [`verify`]: uniqueness, comparison, symmetry, scaling, boundary-rate and
//!   energy-class checks that produce machine-readable reports.

pub mod error;
pub mod expr;
pub mod grid;
pub mod solver;
pub mod variational;
pub mod verify;

pub use error::{Error, Result};
