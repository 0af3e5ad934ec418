pub mod analysis;
pub mod benchmark;
pub mod da;
pub mod error;
pub mod fixtures;
pub mod pipeline;
pub mod rt;
pub mod scenario;
pub mod settlement;
pub mod solver;
pub mod study;
pub mod system;

pub use error::{Error, Result};
