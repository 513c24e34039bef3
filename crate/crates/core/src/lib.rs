//! Simulation and estimation toolkit for INS/DVL sensor alignment.

pub mod bench;
pub mod dataset;
pub mod dvl;
pub mod error;
pub mod imu;
pub mod metrics;
pub mod pipeline;
pub mod regressor;
pub mod so3;
pub mod trajgen;
pub mod wahba;

pub use error::{Error, Result};
