//! Adjustable style transfer: losses, networks, training, randomized
//! stylization and evaluation.

pub mod error;
pub mod eval;
pub mod image_io;
pub mod losses;
pub mod model;
pub mod networks;
pub mod randomizer;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use model::Model;
