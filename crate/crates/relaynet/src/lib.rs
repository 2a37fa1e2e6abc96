//! Simulation and numerics for capacity-constrained relay networks.
//!
//! Transmitters arrive over time in a compact window and each attaches to a
//! single-capacity relay; a transmitter whose chosen relay is already busy is
//! frustrated forever. This crate provides:
//!
//! - finite-intensity simulators for the relay-choice dynamics, the
//!   equivalent threshold dynamics, and a level-coupled pair of Poisson
//!   configurations ([`sim`]);
//! - representations of measures, measure paths, and the metrics between
//!   them ([`measure`]);
//! - solvers for the limiting integral equation, its explicit solutions, and
//!   the two-step block discretization ([`fluid`]);
//! - spatial discretization machinery: window partitions, kernel
//!   normalization and flattening ([`spatial`]);
//! - relative entropy and the variational rate function for frustration
//!   paths, with finite-intensity slope estimation ([`rate`]);
//! - ready-made inequality campaigns used by the test suite and the CLI
//!   ([`checks`]) and serializers for the file formats ([`io`]).

pub mod checks;
pub mod error;
pub mod fluid;
pub mod io;
pub mod measure;
pub mod rate;
pub mod rng;
pub mod sim;
pub mod spatial;

pub use error::{Error, Result};
