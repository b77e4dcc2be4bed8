pub mod alignment;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
