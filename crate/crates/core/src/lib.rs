//! A-posteriori multi-objective policy optimization by hypervolume maximization.
//!
//! `K` policy heads on a shared backbone are trained jointly so that the
//! hypervolume of their normalized reward-weighted logliks is maximal, which
//! spreads them along the Pareto front. The crate also carries the linear
//! scalarization baseline, Pareto-front evaluation, and the command
//! implementations behind the `hvmax` binary.

pub mod cli;
pub mod error;
pub mod hypervolume;
pub mod objective;
pub mod optim;
pub mod pareto;
pub mod policy;
pub mod svg;

pub use error::{Error, Result};
