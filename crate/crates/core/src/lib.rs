//! Visual-recognition toolkit for individual right-whale identification:
//! passport-photo preprocessing, kNN/PCA/LDA baselines, a from-scratch CNN
//! trained with Adam, and occlusion-based interpretation tools.

pub mod baseline;
pub mod datasets;
pub mod error;
pub mod imaging;
pub mod interpret;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Padding, Scalar, Tensor};
