//! Passive time synchronization of multi-sensor driving recordings.
//!
//! Every sensor is reduced to a scalar trace of shared physical events
//! (road vibration, steering), traces are placed on a common grid, and the
//! delay between each sensor pair is read off the peak of their
//! cross-correlation.

pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod flow;
pub mod io;
pub mod report;
pub mod stream;
pub mod sync;
pub mod synthgen;
pub mod xcorr;

pub use error::{Error, Result};
