//! Strided 1D convolution with "same" zero padding.
//!
//! Output length is `ceil(T / stride)`. The total padding needed for that is
//! split as evenly as possible, with the odd sample going to the end.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{num_like::Scalar, Shape, Tensor};

/// Kernel `[rf, in_channels, out_channels]`, optional bias `[out_channels]`
/// and stride. Layers followed by batch norm carry no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Option<Tensor<T>>, stride: usize) -> Result<Self> {
        if kernel.shape().rank() != 3 {
            return Err(Error::Config(format!(
                "conv kernel must be [rf, in, out], got {}",
                kernel.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        if let Some(b) = &bias {
            let out = kernel.dims()[2];
            if b.dims() != [out] {
                return Err(Error::ShapeMismatch {
                    op: "conv bias",
                    left: kernel.shape().clone(),
                    right: b.shape().clone(),
                });
            }
        }
        Ok(ConvParams {
            kernel,
            bias,
            stride,
        })
    }

    pub fn receptive_field(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims()[2]
    }
}

/// Output length and left padding for "same" padding.
pub fn same_padding(time: usize, rf: usize, stride: usize) -> (usize, usize) {
    let out = time.div_ceil(stride);
    let total = ((out - 1) * stride + rf).saturating_sub(time);
    (out, total / 2)
}

pub fn conv1d_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv1d(x, &p.kernel, p.bias.as_ref(), p.stride)
}

fn check_input<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (b, t, c) = x.shape().btc().ok_or_else(|| Error::ShapeMismatch {
        op: "conv1d input",
        left: x.shape().clone(),
        right: kernel.shape().clone(),
    })?;
    let cin = kernel.dims()[1];
    if c != cin {
        return Err(Error::ChannelMismatch {
            op: "conv1d",
            expected: cin,
            actual: c,
        });
    }
    Ok((b, t, c))
}

pub(crate) fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (batch, time, cin) = check_input(x, kernel)?;
    let rf = kernel.dims()[0];
    let cout = kernel.dims()[2];
    let (tout, pad_left) = same_padding(time, rf, stride);
    let xd = x.data();
    let kd = kernel.data();

    let mut out = vec![T::ZERO; batch * tout * cout];
    out.par_chunks_mut(tout * cout)
        .enumerate()
        .for_each(|(b, out_b)| {
            let xb = &xd[b * time * cin..(b + 1) * time * cin];
            for t in 0..tout {
                let row = &mut out_b[t * cout..(t + 1) * cout];
                for r in 0..rf {
                    let pos = (t * stride + r) as isize - pad_left as isize;
                    if pos < 0 || pos >= time as isize {
                        continue;
                    }
                    let pos = pos as usize;
                    let xrow = &xb[pos * cin..(pos + 1) * cin];
                    for (c, &a) in xrow.iter().enumerate() {
                        if a == T::ZERO {
                            continue;
                        }
                        let krow = &kd[(r * cin + c) * cout..(r * cin + c + 1) * cout];
                        for (o, &k) in row.iter_mut().zip(krow) {
                            *o += a * k;
                        }
                    }
                }
                if let Some(bias) = bias {
                    for (o, &bv) in row.iter_mut().zip(bias.data()) {
                        *o += bv;
                    }
                }
            }
        });
    let out = Tensor::with_shape(Shape::new(vec![batch, tout, cout])?, out)?;
    debug_assert!(out.all_finite(), "conv1d produced non-finite output");
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub x: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv1d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    p: &ConvParams<T>,
) -> Result<ConvGrads<T>> {
    conv1d_grads(grad_out, x, &p.kernel, p.stride, p.bias.is_some(), true)
}

/// Number of per-example kernel-gradient partials materialized at once.
/// The partials are always summed in batch order, so the result does not
/// depend on this value or on the thread count.
const PARTIAL_WINDOW: usize = 8;

pub(crate) fn conv1d_grads<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    with_bias: bool,
    need_x: bool,
) -> Result<ConvGrads<T>> {
    let (batch, time, cin) = check_input(x, kernel)?;
    let rf = kernel.dims()[0];
    let cout = kernel.dims()[2];
    let (tout, pad_left) = same_padding(time, rf, stride);
    let expected = Shape::new(vec![batch, tout, cout])?;
    if grad_out.shape() != &expected {
        return Err(Error::ShapeMismatch {
            op: "conv1d_backward",
            left: grad_out.shape().clone(),
            right: expected,
        });
    }
    let xd = x.data();
    let kd = kernel.data();
    let gd = grad_out.data();
    let ksize = kd.len();

    let mut grad_x = need_x.then(|| vec![T::ZERO; xd.len()]);
    if let Some(gx) = grad_x.as_mut() {
        gx.par_chunks_mut(time * cin)
            .enumerate()
            .for_each(|(b, gx_b)| {
                for t in 0..tout {
                    let grow = &gd[(b * tout + t) * cout..(b * tout + t + 1) * cout];
                    for r in 0..rf {
                        let pos = (t * stride + r) as isize - pad_left as isize;
                        if pos < 0 || pos >= time as isize {
                            continue;
                        }
                        let pos = pos as usize;
                        for c in 0..cin {
                            let krow = &kd[(r * cin + c) * cout..(r * cin + c + 1) * cout];
                            let mut acc = T::ZERO;
                            for (&g, &k) in grow.iter().zip(krow) {
                                acc += g * k;
                            }
                            gx_b[pos * cin + c] += acc;
                        }
                    }
                }
            });
    }

    let kernel_partial = |b: usize| -> Vec<T> {
        let mut gk = vec![T::ZERO; ksize];
        let xb = &xd[b * time * cin..(b + 1) * time * cin];
        for t in 0..tout {
            let grow = &gd[(b * tout + t) * cout..(b * tout + t + 1) * cout];
            for r in 0..rf {
                let pos = (t * stride + r) as isize - pad_left as isize;
                if pos < 0 || pos >= time as isize {
                    continue;
                }
                let pos = pos as usize;
                for c in 0..cin {
                    let a = xb[pos * cin + c];
                    if a == T::ZERO {
                        continue;
                    }
                    let dst = &mut gk[(r * cin + c) * cout..(r * cin + c + 1) * cout];
                    for (d, &g) in dst.iter_mut().zip(grow) {
                        *d += a * g;
                    }
                }
            }
        }
        gk
    };

    let mut grad_k = vec![T::ZERO; ksize];
    let mut start = 0;
    while start < batch {
        let end = (start + PARTIAL_WINDOW).min(batch);
        let partials: Vec<Vec<T>> = (start..end).into_par_iter().map(kernel_partial).collect();
        for part in partials {
            for (d, s) in grad_k.iter_mut().zip(part) {
                *d += s;
            }
        }
        start = end;
    }

    let grad_b = with_bias.then(|| {
        let mut gb = vec![T::ZERO; cout];
        for row in gd.chunks_exact(cout) {
            for (d, &g) in gb.iter_mut().zip(row) {
                *d += g;
            }
        }
        gb
    });

    Ok(ConvGrads {
        x: grad_x
            .map(|v| Tensor::with_shape(x.shape().clone(), v))
            .transpose()?,
        kernel: Tensor::with_shape(kernel.shape().clone(), grad_k)?,
        bias: grad_b.map(|v| Tensor::from_vec(vec![cout], v)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{random_tensor, ConvOracle};
    use crate::rng::RandomSource;

    #[test]
    fn hand_computed_same_padding() {
        let x = Tensor::from_vec(vec![1, 4, 1], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::from_vec(vec![3, 1, 1], vec![1.0, 1.0, 1.0]).unwrap();
        let p = ConvParams::new(k, None, 1).unwrap();
        let y = conv1d_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn first_layer_output_length() {
        let x = Tensor::<f32>::zeros(vec![1, 32000, 1]).unwrap();
        let k = Tensor::<f32>::zeros(vec![80, 1, 256]).unwrap();
        let y = conv1d_forward(&x, &ConvParams::new(k, None, 4).unwrap()).unwrap();
        assert_eq!(y.dims(), &[1, 8000, 256]);
        assert_eq!(same_padding(32000, 80, 4), (8000, 38));
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let mut rng = RandomSource::new(1);
        let x = random_tensor::<f64>(&[2, 17, 3], &mut rng);
        let k = Tensor::zeros(vec![3, 3, 5]).unwrap();
        let y = conv1d_forward(&x, &ConvParams::new(k, None, 2).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::<f32>::zeros(vec![1, 10, 2]).unwrap();
        let k = Tensor::<f32>::zeros(vec![3, 3, 4]).unwrap();
        let err = conv1d_forward(&x, &ConvParams::new(k, None, 1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ChannelMismatch { expected: 3, actual: 2, .. }));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = RandomSource::new(2);
        let x = random_tensor::<f64>(&[2, 9, 2], &mut rng);
        let p = ConvParams::new(
            random_tensor(&[3, 2, 4], &mut rng),
            Some(random_tensor(&[4], &mut rng)),
            2,
        )
        .unwrap();
        let g = Tensor::zeros(vec![2, 5, 4]).unwrap();
        let grads = conv1d_backward(&g, &x, &p).unwrap();
        assert!(grads.x.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grads.kernel.data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_kernel_grad_is_outer_product_sum() {
        let mut rng = RandomSource::new(3);
        let x = random_tensor::<f64>(&[2, 6, 3], &mut rng);
        let p = ConvParams::new(random_tensor(&[1, 3, 2], &mut rng), None, 1).unwrap();
        let g = random_tensor::<f64>(&[2, 6, 2], &mut rng);
        let grads = conv1d_backward(&g, &x, &p).unwrap();
        for c in 0..3 {
            for o in 0..2 {
                let mut expect = 0.0;
                for b in 0..2 {
                    for t in 0..6 {
                        expect += x.data()[(b * 6 + t) * 3 + c] * g.data()[(b * 6 + t) * 2 + o];
                    }
                }
                let got = grads.kernel.data()[c * 2 + o];
                assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
            }
        }
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor::<f64>::zeros(vec![1, 8, 1]).unwrap();
        let p = ConvParams::new(Tensor::zeros(vec![3, 1, 2]).unwrap(), None, 2).unwrap();
        let g = Tensor::zeros(vec![1, 8, 2]).unwrap();
        assert!(conv1d_backward(&g, &x, &p).is_err());
    }

    #[test]
    fn matches_naive_oracle_exactly_in_f64() {
        let mut rng = RandomSource::new(4);
        for case in 0..25 {
            let b = 1 + rng.below(4);
            let t = 1 + rng.below(200);
            let cin = 1 + rng.below(8);
            let cout = 1 + rng.below(8);
            let rf = [1, 2, 3, 5, 8][case % 5];
            let stride = 1 + rng.below(4);
            let x = random_tensor::<f64>(&[b, t, cin], &mut rng);
            let k = random_tensor::<f64>(&[rf, cin, cout], &mut rng);
            let bias = random_tensor::<f64>(&[cout], &mut rng);
            let p = ConvParams::new(k, Some(bias), stride).unwrap();
            let fast = conv1d_forward(&x, &p).unwrap();
            let slow = ConvOracle::forward(&x, &p);
            assert_eq!(fast.dims(), slow.dims());
            assert_eq!(fast.data(), slow.data(), "case {case}");
        }
    }
}
