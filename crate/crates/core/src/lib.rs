//! Simulation and estimation for RIS-aided non-line-of-sight OFDM radar.
//!
//! A monostatic base station illuminates a reconfigurable intelligent
//! surface (RIS) which in turn sees one moving target. The crate builds the
//! received delay-Doppler-angle observation, estimates the target from it
//! with a staged GLRT/ML processor, and evaluates Cramer-Rao bounds.

pub mod crb;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod exec;
pub mod forward;
pub mod geometry;
pub mod schedule;
pub mod units;

pub use error::{Error, Result};
