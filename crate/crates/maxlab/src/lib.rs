//! Exact experiments around two-weight bounds for the maximal operator.
//!
//! The crate builds everything on piecewise-constant lattice measures so
//! integrals, averages, and cube arithmetic are closed-form. On top of that
//! sit shifted dyadic grids, exact and dyadic maximal-operator evaluation,
//! superlevel-set and stopping-time machinery, and estimators for the
//! embedding, testing, and joint-density constants together with their
//! stability diagnostics.

pub mod constants;
pub mod error;
pub mod exec;
pub mod gen;
pub mod geom;
pub mod grid;
pub mod maximal;
pub mod measure;
pub mod mollify;
pub mod region;
pub mod report;
pub mod rng;
pub mod stopping;
pub mod whitney;

pub use error::{Error, Result};
