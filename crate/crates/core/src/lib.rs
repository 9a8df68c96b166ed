pub mod dbn;
pub mod error;
pub mod gp;
pub mod harness;
pub mod policy;
pub mod reward;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
