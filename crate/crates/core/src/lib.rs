pub mod adversarial;
pub mod archive;
pub mod augment;
pub mod cascade;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod error;
pub mod generator;
pub mod io;
pub mod slices;
pub mod variant;

pub use error::{Error, Result};
