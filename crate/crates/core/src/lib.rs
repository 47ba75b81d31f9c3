//! Reduced-order dynamic programming for discounted infinite-horizon optimal
//! control.
//!
//! The pipeline builds a proper orthogonal decomposition (POD) basis from
//! trajectory means and time-derivative snapshots, solves the fully discrete
//! semi-Lagrangian HJB scheme on a Kuhn-triangulated box in POD coordinates by
//! value iteration, and turns the nodal argmin controls into a feedback law
//! for the full system. A Riccati solver provides an exact reference for
//! linear-quadratic problems.

pub mod dynamics;
pub mod hjbgrid;
pub mod hjbsolve;
pub mod lqr;
pub mod pipeline;
pub mod pod;
pub mod reduced;
pub mod error;
pub mod inner;

pub use error::{Error, Result};
