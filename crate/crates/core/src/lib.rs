//! Lattice solvers and diagnostics for backward stochastic differential
//! equations driven by a Brownian motion, a marked point process and an
//! orthogonal martingale, with stochastic Lipschitz coefficients and
//! optional reflection on a lower obstacle.

pub mod bsde;
pub mod drivers;
pub mod error;
pub mod lattice;
pub mod numeric;
pub mod paths;
pub mod rbsde;
pub mod spaces;

pub use error::{Error, Result};
