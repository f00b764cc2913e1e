pub mod camera;
pub mod error;
pub mod evalkit;
pub mod harness;
pub mod mapspace;
pub mod net;
pub mod objective;
pub mod synthworld;
pub mod tape;
mod util;

pub use error::{Error, Result};
