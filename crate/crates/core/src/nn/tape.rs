//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every op appends a node holding its output and whatever forward values
//! its reverse rule needs. [`Tape::backward`] walks the nodes in exact
//! reverse order; a value consumed by several ops receives the sum of their
//! gradient contributions.

use crate::error::{Error, Result};
use crate::nn::batchnorm::{batchnorm_backward, BatchNormState, BnCache};
use crate::nn::conv::{conv1d, conv1d_grads};
use crate::nn::dense::{linear_backward, linear_forward, softmax_xent, softmax_xent_backward};
use crate::nn::dropout::{dropout, dropout_backward};
use crate::nn::pool::{global_avg_pool, global_avg_pool_backward, maxpool1d, maxpool1d_backward};
use crate::nn::Mode;
use crate::rng::RandomSource;
use crate::tensor::{num_like::Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache<T>,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    PadChannels {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    SoftmaxXent {
        logits: Var,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value recorded on tape");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient is computed for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf whose gradient [`Tape::backward`] reports.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let y = conv1d(
            self.value(x),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
        )?
        .check_finite("conv1d")?;
        let needs = self.needs(x) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            y,
            Op::Conv {
                x,
                kernel,
                bias,
                stride,
            },
            needs,
        ))
    }

    /// Training-mode batch norm. `state` supplies gamma/beta (which must
    /// equal the values recorded under `gamma` and `beta`) and receives the
    /// running-statistics update.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BatchNormState<T>) -> Result<Var> {
        debug_assert!(self.value(gamma) == &state.gamma && self.value(beta) == &state.beta);
        let (y, cache) = state.forward_train(self.value(x))?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| if v > T::ZERO { v } else { T::ZERO });
        let needs = self.needs(x);
        Ok(self.push(y, Op::Relu { x }, needs))
    }

    pub fn maxpool(&mut self, x: Var) -> Result<Var> {
        let out = maxpool1d(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(
            out.values,
            Op::MaxPool {
                x,
                argmax: out.argmax,
            },
            needs,
        ))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = global_avg_pool(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::GlobalAvgPool { x }, needs))
    }

    pub fn reshape(&mut self, x: Var, dims: Vec<usize>) -> Result<Var> {
        let y = self.value(x).clone().reshape(dims)?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::Reshape { x }, needs))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?
            .check_finite("linear")?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(y, Op::Linear { x, w, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b))?;
        let y = y.check_finite("add")?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add { a, b }, needs))
    }

    /// Zero-extends the channel axis to `channels`.
    pub fn pad_channels(&mut self, x: Var, channels: usize) -> Result<Var> {
        let y = crate::nn::residual::pad_channels(self.value(x), channels)?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::PadChannels { x }, needs))
    }

    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RandomSource) -> Result<Var> {
        let (y, mask) = dropout(self.value(x), rate, Mode::Train, rng)?;
        let needs = self.needs(x);
        Ok(match mask {
            Some(mask) => self.push(y, Op::Dropout { x, mask }, needs),
            None => self.push(y, Op::Reshape { x }, needs),
        })
    }

    /// Mean cross-entropy; the recorded value is the loss as a `[1]` tensor.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = softmax_xent(self.value(logits), labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "softmax_xent" });
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::from_vec(vec![1], vec![T::from_f64(loss)])?,
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            needs,
        ))
    }

    /// Softmax probabilities recorded by a [`Tape::softmax_xent`] node.
    pub fn probabilities(&self, loss: Var) -> Option<&Tensor<T>> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Gradients of the scalar `loss` with respect to every recorded value
    /// that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Config("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims().to_vec(), T::ONE)?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv {
                    x,
                    kernel,
                    bias,
                    stride,
                } => {
                    let cg = conv1d_grads(
                        &g,
                        self.value(*x),
                        self.value(*kernel),
                        *stride,
                        bias.is_some(),
                        self.needs(*x),
                    )?;
                    if let Some(gx) = cg.x {
                        self.accumulate(&mut grads, *x, gx)?;
                    }
                    self.accumulate(&mut grads, *kernel, cg.kernel)?;
                    if let (Some(b), Some(gb)) = (bias, cg.bias) {
                        self.accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let bg = batchnorm_backward(&g, cache, self.value(*gamma))?;
                    self.accumulate(&mut grads, *x, bg.x)?;
                    self.accumulate(&mut grads, *gamma, bg.gamma)?;
                    self.accumulate(&mut grads, *beta, bg.beta)?;
                }
                Op::Relu { x } => {
                    let mut gx = g;
                    for (d, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= T::ZERO {
                            *d = T::ZERO;
                        }
                    }
                    self.accumulate(&mut grads, *x, gx)?;
                }
                Op::MaxPool { x, argmax } => {
                    let gx = maxpool1d_backward(&g, argmax, self.value(*x).dims())?;
                    self.accumulate(&mut grads, *x, gx)?;
                }
                Op::GlobalAvgPool { x } => {
                    let gx = global_avg_pool_backward(&g, self.value(*x).dims())?;
                    self.accumulate(&mut grads, *x, gx)?;
                }
                Op::Reshape { x } => {
                    let gx = g.reshape(self.value(*x).dims().to_vec())?;
                    self.accumulate(&mut grads, *x, gx)?;
                }
                Op::Linear { x, w, b } => {
                    let lg = linear_backward(&g, self.value(*x), self.value(*w), b.is_some())?;
                    self.accumulate(&mut grads, *x, lg.x)?;
                    self.accumulate(&mut grads, *w, lg.w)?;
                    if let (Some(b), Some(gb)) = (b, lg.b) {
                        self.accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut grads, *a, g.clone())?;
                    self.accumulate(&mut grads, *b, g)?;
                }
                Op::PadChannels { x } => {
                    let src = self.value(*x);
                    let cin = *src.dims().last().expect("rank >= 1");
                    let cout = *g.dims().last().expect("rank >= 1");
                    let data = g
                        .data()
                        .chunks_exact(cout)
                        .flat_map(|row| row[..cin].iter().copied())
                        .collect();
                    let gx = Tensor::with_shape(src.shape().clone(), data)?;
                    self.accumulate(&mut grads, *x, gx)?;
                }
                Op::Dropout { x, mask } => {
                    let gx = dropout_backward(&g, mask)?;
                    self.accumulate(&mut grads, *x, gx)?;
                }
                Op::SoftmaxXent {
                    logits,
                    probs,
                    labels,
                } => {
                    let gl = softmax_xent_backward(probs, labels, g.data()[0])?;
                    self.accumulate(&mut grads, *logits, gl)?;
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.needs(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Moves the gradient out, or returns zeros shaped like `like` if the
    /// value did not influence the loss.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| like.zeros_like())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{numeric_grad, oracle::relative_error, random_tensor};

    #[test]
    fn fan_out_accumulates() {
        // loss = xent(linear(x + x))  => d/dx doubles
        let mut rng = RandomSource::new(20);
        let x0 = random_tensor::<f64>(&[2, 3], &mut rng);
        let w0 = random_tensor::<f64>(&[3, 4], &mut rng);
        let f = |x: &Tensor<f64>| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let w = tape.param(w0.clone());
            let s = tape.add(xv, xv).unwrap();
            let l = tape.linear(s, w, None).unwrap();
            let loss = tape.softmax_xent(l, &[1, 2]).unwrap();
            (tape.value(loss).data()[0], tape.backward(loss).unwrap().get(xv).unwrap().clone())
        };
        let (_, analytic) = f(&x0);
        let numeric = numeric_grad(&x0, |x| f(x).0);
        assert!(relative_error(analytic.data(), &numeric) < 1e-6);
    }

    #[test]
    fn inputs_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::full(vec![2, 3], 1.0).unwrap());
        let w = tape.param(Tensor::full(vec![3, 2], 0.5).unwrap());
        let l = tape.linear(x, w, None).unwrap();
        let loss = tape.softmax_xent(l, &[0, 1]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).is_none());
        assert!(g.get(w).is_some());
    }

    #[test]
    fn pad_channels_backward_slices() {
        let mut rng = RandomSource::new(21);
        let x0 = random_tensor::<f64>(&[2, 3, 2], &mut rng);
        let w0 = random_tensor::<f64>(&[4, 3], &mut rng);
        let f = |x: &Tensor<f64>| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let p = tape.pad_channels(xv, 4).unwrap();
            let r = tape.relu(p).unwrap();
            let g = tape.global_avg_pool(r).unwrap();
            let g = tape.reshape(g, vec![2, 4]).unwrap();
            let w = tape.input(w0.clone());
            let l = tape.linear(g, w, None).unwrap();
            let loss = tape.softmax_xent(l, &[0, 2]).unwrap();
            (tape.value(loss).data()[0], tape.backward(loss).unwrap().get(xv).unwrap().clone())
        };
        let (_, analytic) = f(&x0);
        let numeric = numeric_grad(&x0, |x| f(x).0);
        assert!(relative_error(analytic.data(), &numeric) < 1e-6);
    }
}
