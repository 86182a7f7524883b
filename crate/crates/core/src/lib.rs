//! Very deep 1D convolutional networks on raw audio waveforms: tensors,
//! layer kernels with reverse rules, the model zoo, training, audio
//! ingestion and first-layer kernel analysis.

pub mod analysis;
pub mod audio;
pub mod error;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use rng::{RandomSource, RngState, Stream};
pub use tensor::{num_like::Scalar, Shape, Tensor};
