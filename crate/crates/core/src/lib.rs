pub mod cli;
pub mod error;
pub mod harness;
pub mod hvmodels;
pub mod kscheck;
pub mod pmsquare;
pub mod qcore;
pub mod report;

pub use error::{Error, Result};
