pub mod cli;
pub mod error;
pub mod functional;
pub mod geometry;
pub mod media;
pub mod recon;
pub mod table;
pub mod transport;

pub use error::{Error, Result};
