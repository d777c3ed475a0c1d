//! Numerical core for pilot point ensemble Kalman filtering.
//!
//! The crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation: the cell grid and state partitioning, geostatistical priors and
//! kriging, the groundwater flow / tracer forward model, the family of Kalman
//! analysis steps and the evaluation metrics. File formats, the command line
//! and experiment orchestration live in the `ppenkf` companion crate.
//!
//! State vectors are always ordered as pilot-point parameters, non-pilot
//! parameters, then dynamic variables (head before concentration, row-major
//! over cells).

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod filters;
pub mod forward;
pub mod geostat;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod state;

pub use error::{Error, Result};
pub use grid::Grid;
pub use linalg::Matrix;
pub use rng::{Purpose, RngSpec};
pub use state::{DynamicKind, Ensemble, StateLayout, StateVector};
