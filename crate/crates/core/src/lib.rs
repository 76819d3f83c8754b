pub mod cli;
pub mod data;
pub mod estimators;
pub mod harness;
pub mod error;
pub mod linalg;
pub mod mdp;
pub mod sim;
pub mod stats;
pub mod taylor;
pub mod variance;

pub use error::{Error, Result};
