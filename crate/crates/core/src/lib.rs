//! Sharp bounds on distributional treatment effects from combined
//! experimental and observational data.

pub mod dataset;
pub mod error;
pub mod identify;
pub mod params;
pub mod bounds_analytic;
pub mod bounds_lp;
pub mod verify;
pub mod cli;

pub use error::{Error, Result};
