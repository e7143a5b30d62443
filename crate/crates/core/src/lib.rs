//! Panel unit-root tests under local-to-unity alternatives.

pub mod asymptotics;
pub mod dgp;
pub mod error;
pub mod factors;
pub mod lan;
pub mod lrv;
pub mod mc;
pub mod normal;
pub mod panel;
pub mod parallel;
pub mod pipeline;
pub mod statistics;
pub mod verify;

pub use error::{Error, Result};
