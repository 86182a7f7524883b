//! Layer kernels (forward and reverse rules) and the differentiation tape.

pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod pool;
pub mod residual;
pub mod tape;

#[cfg(test)]
pub(crate) mod testutil;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormState, BnCache};
pub use conv::{conv1d_backward, conv1d_forward, same_padding, ConvGrads, ConvParams};
pub use dense::{dense_softmax_xent, dense_softmax_xent_backward, linear_backward, linear_forward, softmax};
pub use dropout::dropout;
pub use pool::{global_avg_pool, maxpool1d, MaxPoolOutput};
pub use residual::{pad_channels, residual_block_forward, residual_block_infer, ConvBn, ParamCursor, ResidualBlock};
pub use tape::{Gradients, Tape, Var};

/// Whether batch norm uses batch statistics (and updates running ones) and
/// whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    #[default]
    Infer,
}
