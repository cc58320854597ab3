pub mod error;
pub mod baseline;
pub mod data;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod model;
pub mod saliency;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
