pub mod augment;
pub mod boundary;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod optim;
pub mod profile;
pub mod rng;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
