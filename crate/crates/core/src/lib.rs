pub mod cli;
pub mod error;
pub mod fuse;
pub mod gan;
pub mod grid;
pub mod metrics;
pub mod morph;
pub mod nn;
pub mod phantom;
pub mod prep;
pub mod tiles;

pub use error::{Error, Result};
