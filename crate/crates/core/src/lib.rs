pub mod channel;
pub mod cli;
pub mod dobrushin;
pub mod error;
pub mod mps;
pub mod opalg;
pub mod process;
pub mod rng;

pub use error::{Error, Result};
