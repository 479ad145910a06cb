pub mod arch;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use tensor::Tensor;
