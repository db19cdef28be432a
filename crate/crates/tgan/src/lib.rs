//! File formats, dataset directories, checkpoints and the `tgan` command
//! line on top of `tgan-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod frames;
pub mod metrics;
pub mod run;
pub mod tnsr;

pub use error::{Error, Result, TnsrError};
