pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod explain;
pub mod freq;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod pnm;
pub mod synthdata;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use tensor::Tensor;
