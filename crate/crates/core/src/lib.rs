pub mod error;
pub mod grid;
pub mod powerflow;
pub mod scenario;
pub mod schedule;
pub mod env;
pub mod rl;
pub mod llm;
pub mod pure_rl;
pub mod harness;

pub use error::{Error, Result};
