pub mod bench;
pub mod error;
pub mod evolution;
pub mod fpqs;
pub mod interpolation;
pub mod qcore;
pub mod selective;

pub use error::{Error, Result};
