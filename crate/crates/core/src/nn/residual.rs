//! Convolution + optional batch norm units and two-conv residual blocks.
//!
//! A block computes `relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))`.
//! The shortcut is the identity, zero-extended on the channel axis when the
//! block widens, so it carries no parameters.

use crate::error::{Error, Result};
use crate::nn::batchnorm::BatchNormState;
use crate::nn::conv::{conv1d_forward, ConvParams};
use crate::nn::tape::{Tape, Var};
use crate::nn::Mode;
use crate::tensor::{num_like::Scalar, Tensor};

/// Convolution optionally followed by batch norm. Activation is applied by
/// the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T> {
    pub conv: ConvParams<T>,
    pub bn: Option<BatchNormState<T>>,
}

/// Hands out recorded parameter handles in declaration order.
pub struct ParamCursor<'a> {
    vars: std::slice::Iter<'a, Var>,
}

impl<'a> ParamCursor<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        ParamCursor { vars: vars.iter() }
    }

    pub fn next_var(&mut self) -> Var {
        *self
            .vars
            .next()
            .expect("parameter cursor exhausted: declaration and forward order disagree")
    }

    pub fn remaining(&self) -> usize {
        self.vars.len()
    }
}

impl<T: Scalar> ConvBn<T> {
    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels()
    }

    /// Trainable tensors in the order `kernel, bias?, gamma?, beta?`.
    pub fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut v = vec![("kernel", &self.conv.kernel)];
        if let Some(b) = &self.conv.bias {
            v.push(("bias", b));
        }
        if let Some(bn) = &self.bn {
            v.push(("bn.gamma", &bn.gamma));
            v.push(("bn.beta", &bn.beta));
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut v = vec![("kernel", &mut self.conv.kernel)];
        if let Some(b) = &mut self.conv.bias {
            v.push(("bias", b));
        }
        if let Some(bn) = &mut self.bn {
            v.push(("bn.gamma", &mut bn.gamma));
            v.push(("bn.beta", &mut bn.beta));
        }
        v
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = conv1d_forward(x, &self.conv)?;
        match (&mut self.bn, mode) {
            (Some(bn), Mode::Train) => Ok(bn.forward_train(&y)?.0),
            (Some(bn), Mode::Infer) => bn.forward_infer(&y),
            (None, _) => Ok(y),
        }
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = conv1d_forward(x, &self.conv)?;
        match &self.bn {
            Some(bn) => bn.forward_infer(&y),
            None => Ok(y),
        }
    }

    /// Records this unit on `tape`, consuming its parameter handles from
    /// `cursor` in [`Self::params`] order.
    pub fn record(&mut self, tape: &mut Tape<T>, x: Var, cursor: &mut ParamCursor<'_>) -> Result<Var> {
        let kernel = cursor.next_var();
        let bias = self.conv.bias.is_some().then(|| cursor.next_var());
        let y = tape.conv1d(x, kernel, bias, self.conv.stride)?;
        match &mut self.bn {
            Some(bn) => {
                let gamma = cursor.next_var();
                let beta = cursor.next_var();
                tape.batchnorm(y, gamma, beta, bn)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub first: ConvBn<T>,
    pub second: ConvBn<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(first: ConvBn<T>, second: ConvBn<T>) -> Result<Self> {
        let (cin, cout) = (first.in_channels(), second.out_channels());
        if cout < cin {
            return Err(Error::ChannelShrink {
                input: cin,
                output: cout,
            });
        }
        if first.out_channels() != second.in_channels() {
            return Err(Error::ChannelMismatch {
                op: "residual block",
                expected: first.out_channels(),
                actual: second.in_channels(),
            });
        }
        if first.conv.stride != 1 || second.conv.stride != 1 {
            return Err(Error::Config("residual convolutions must have stride 1".into()));
        }
        Ok(ResidualBlock { first, second })
    }

    pub fn in_channels(&self) -> usize {
        self.first.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.second.out_channels()
    }

    pub fn record(&mut self, tape: &mut Tape<T>, x: Var, cursor: &mut ParamCursor<'_>) -> Result<Var> {
        let h = self.first.record(tape, x, cursor)?;
        let h = tape.relu(h)?;
        let h = self.second.record(tape, h, cursor)?;
        let shortcut = if self.out_channels() > self.in_channels() {
            tape.pad_channels(x, self.out_channels())?
        } else {
            x
        };
        let s = tape.add(h, shortcut)?;
        tape.relu(s)
    }
}

/// Zero-extends the last (channel) axis of `x` to `channels`.
pub fn pad_channels<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<Tensor<T>> {
    let cin = *x.dims().last().expect("rank >= 1");
    if channels < cin {
        return Err(Error::ChannelShrink {
            input: cin,
            output: channels,
        });
    }
    let mut dims = x.dims().to_vec();
    *dims.last_mut().expect("rank >= 1") = channels;
    let mut out = Vec::with_capacity(x.len() / cin * channels);
    for row in x.data().chunks_exact(cin) {
        out.extend_from_slice(row);
        out.extend(std::iter::repeat_n(T::ZERO, channels - cin));
    }
    Tensor::from_vec(dims, out)
}

fn relu<T: Scalar>(x: Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Plain (tape-free) residual block forward. Training mode updates the
/// batch-norm running statistics.
pub fn residual_block_forward<T: Scalar>(
    x: &Tensor<T>,
    block: &mut ResidualBlock<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let h = relu(block.first.forward(x, mode)?);
    let mut h = block.second.forward(&h, mode)?;
    let shortcut = pad_channels(x, block.out_channels())?;
    h.add_assign(&shortcut)?;
    Ok(relu(h))
}

/// Inference-only variant that never touches running statistics.
pub fn residual_block_infer<T: Scalar>(x: &Tensor<T>, block: &ResidualBlock<T>) -> Result<Tensor<T>> {
    let h = relu(block.first.forward_infer(x)?);
    let mut h = block.second.forward_infer(&h)?;
    let shortcut = pad_channels(x, block.out_channels())?;
    h.add_assign(&shortcut)?;
    Ok(relu(h))
}
