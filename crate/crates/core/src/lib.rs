pub mod codec;
pub mod data;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod scaler;
pub mod schedules;
pub mod tensor;
pub mod trainer;
pub mod velocity;

pub use error::{Error, ErrorKind, Result};
