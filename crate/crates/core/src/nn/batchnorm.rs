//! Batch normalization over the channel (last) axis. Statistics pool over
//! every other axis, i.e. batch and time for `[B, T, C]` activations, so the
//! layer's parameters do not depend on the input length.

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{num_like::Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
    stats_ready: bool,
}

/// Values saved by the training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

impl<T: Scalar> BatchNormState<T> {
    /// gamma = 1, beta = 0. Running statistics are uninitialized until a
    /// training step runs or [`Self::init_running_stats`] is called.
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNormState {
            gamma: Tensor::full(vec![channels], T::ONE)?,
            beta: Tensor::zeros(vec![channels])?,
            running_mean: Tensor::zeros(vec![channels])?,
            running_var: Tensor::full(vec![channels], T::ONE)?,
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            stats_ready: false,
        })
    }

    /// Explicitly sets running mean 0 and variance 1 and marks them usable.
    pub fn init_running_stats(&mut self) {
        self.running_mean.data_mut().fill(T::ZERO);
        self.running_var.data_mut().fill(T::ONE);
        self.stats_ready = true;
    }

    /// Marks externally restored running statistics as usable.
    pub fn mark_stats_ready(&mut self) {
        self.stats_ready = true;
    }

    pub fn stats_ready(&self) -> bool {
        self.stats_ready
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_channels(&self, x: &Tensor<T>) -> Result<usize> {
        let c = *x.dims().last().expect("tensors have rank >= 1");
        if c != self.channels() {
            return Err(Error::ChannelMismatch {
                op: "batchnorm",
                expected: self.channels(),
                actual: c,
            });
        }
        Ok(c)
    }

    /// Training mode: normalize with batch statistics and fold them into the
    /// running statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let ch = self.check_channels(x)?;
        let batch = x.dims()[0];
        if x.shape().rank() < 2 || batch < 2 {
            return Err(Error::BatchTooSmall(batch));
        }
        let rows = x.len() / ch;
        let xd = x.data();

        let mut mean = vec![0.0f64; ch];
        for row in xd.chunks_exact(ch) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v.to_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0f64; ch];
        for row in xd.chunks_exact(ch) {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.to_f64() - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);

        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::from_f64(1.0 / (v + self.epsilon).sqrt()))
            .collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();

        let mut x_hat = Vec::with_capacity(xd.len());
        let mut y = Vec::with_capacity(xd.len());
        let (g, b) = (self.gamma.data(), self.beta.data());
        for row in xd.chunks_exact(ch) {
            for c in 0..ch {
                let xh = (row[c] - mean_t[c]) * inv_std[c];
                x_hat.push(xh);
                y.push(g[c] * xh + b[c]);
            }
        }

        let mom = T::from_f64(self.momentum);
        let keep = T::ONE - mom;
        for c in 0..ch {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = keep * *rm + mom * mean_t[c];
            let rv = &mut self.running_var.data_mut()[c];
            *rv = keep * *rv + mom * T::from_f64(var[c]);
        }
        self.stats_ready = true;

        let y = Tensor::with_shape(x.shape().clone(), y)?.check_finite("batchnorm")?;
        Ok((
            y,
            BnCache {
                x_hat: Tensor::with_shape(x.shape().clone(), x_hat)?,
                inv_std,
            },
        ))
    }

    /// Inference mode: normalize with running statistics only.
    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let ch = self.check_channels(x)?;
        if !self.stats_ready {
            return Err(Error::RunningStatsUninitialized);
        }
        let eps = T::from_f64(self.epsilon);
        let scale: Vec<T> = (0..ch)
            .map(|c| self.gamma.data()[c] / (self.running_var.data()[c] + eps).sqrt())
            .collect();
        let mean = self.running_mean.data();
        let beta = self.beta.data();
        let mut y = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(ch) {
            for c in 0..ch {
                y.push((row[c] - mean[c]) * scale[c] + beta[c]);
            }
        }
        Tensor::with_shape(x.shape().clone(), y)?.check_finite("batchnorm")
    }
}

pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    match mode {
        Mode::Train => state.forward_train(x).map(|(y, _)| y),
        Mode::Infer => state.forward_infer(x),
    }
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub x: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Reverse rule of the training-mode forward pass.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
) -> Result<BnGrads<T>> {
    grad_out.expect_same_shape("batchnorm_backward", &cache.x_hat)?;
    let ch = gamma.len();
    let rows = grad_out.len() / ch;
    let gd = grad_out.data();
    let xh = cache.x_hat.data();

    let mut sum_g = vec![T::ZERO; ch];
    let mut sum_gx = vec![T::ZERO; ch];
    for (grow, xrow) in gd.chunks_exact(ch).zip(xh.chunks_exact(ch)) {
        for c in 0..ch {
            sum_g[c] += grow[c];
            sum_gx[c] += grow[c] * xrow[c];
        }
    }
    let n = T::from_usize(rows);
    let coef: Vec<T> = (0..ch)
        .map(|c| gamma.data()[c] * cache.inv_std[c] / n)
        .collect();
    let mut gx = Vec::with_capacity(gd.len());
    for (grow, xrow) in gd.chunks_exact(ch).zip(xh.chunks_exact(ch)) {
        for c in 0..ch {
            gx.push(coef[c] * (n * grow[c] - sum_g[c] - xrow[c] * sum_gx[c]));
        }
    }
    Ok(BnGrads {
        x: Tensor::with_shape(grad_out.shape().clone(), gx)?,
        gamma: Tensor::from_vec(vec![ch], sum_gx)?,
        beta: Tensor::from_vec(vec![ch], sum_g)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{dot, numeric_grad, oracle::relative_error, random_tensor};
    use crate::rng::RandomSource;

    fn channel_stats(y: &Tensor<f64>, ch: usize) -> Vec<(f64, f64)> {
        let rows = y.len() / ch;
        (0..ch)
            .map(|c| {
                let vals: Vec<f64> = y.data().chunks_exact(ch).map(|r| r[c]).collect();
                let m = vals.iter().sum::<f64>() / rows as f64;
                let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / rows as f64;
                (m, v)
            })
            .collect()
    }

    #[test]
    fn train_output_is_normalized() {
        let mut rng = RandomSource::new(10);
        let x = random_tensor::<f64>(&[4, 50, 3], &mut rng).map(|v| 3.0 * v + 2.0);
        let mut bn = BatchNormState::new(3).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        for (m, v) in channel_stats(&y, 3) {
            assert!(m.abs() < 1e-4, "{m}");
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn constant_input_gives_beta() {
        let x = Tensor::<f64>::full(vec![2, 5, 2], 7.0).unwrap();
        let mut bn = BatchNormState::new(2).unwrap();
        bn.beta = Tensor::from_vec(vec![2], vec![0.5, -1.5]).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        for row in y.data().chunks_exact(2) {
            assert_eq!(row, &[0.5, -1.5]);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::from_vec(vec![2, 1, 1], vec![1.0f64, 3.0]).unwrap();
        let mut bn = BatchNormState::new(1).unwrap();
        bn.forward_train(&x).unwrap();
        // mean 2, biased var 1
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infer_requires_initialized_stats() {
        let x = Tensor::<f32>::zeros(vec![1, 4, 2]).unwrap();
        let mut bn = BatchNormState::new(2).unwrap();
        assert!(matches!(bn.forward_infer(&x), Err(Error::RunningStatsUninitialized)));
        bn.init_running_stats();
        assert!(bn.forward_infer(&x).is_ok());
    }

    #[test]
    fn infer_uses_running_stats_only() {
        let mut bn = BatchNormState::<f64>::new(1).unwrap();
        bn.running_mean = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        bn.running_var = Tensor::from_vec(vec![1], vec![4.0 - 1e-5]).unwrap();
        bn.mark_stats_ready();
        let x = Tensor::from_vec(vec![1, 2, 1], vec![3.0, 5.0]).unwrap();
        let y = bn.forward_infer(&x).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn train_rejects_single_row_batches() {
        let x = Tensor::<f32>::zeros(vec![1, 8, 2]).unwrap();
        let mut bn = BatchNormState::new(2).unwrap();
        assert!(matches!(bn.forward_train(&x), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RandomSource::new(11);
        let x = random_tensor::<f64>(&[4, 16, 3], &mut rng);
        let w = random_tensor::<f64>(&[4, 16, 3], &mut rng);
        let mut bn = BatchNormState::new(3).unwrap();
        bn.gamma = random_tensor(&[3], &mut rng);
        bn.beta = random_tensor(&[3], &mut rng);
        let (_, cache) = bn.clone().forward_train(&x).unwrap();
        let grads = batchnorm_backward(&w, &cache, &bn.gamma).unwrap();

        let loss = |bn: &BatchNormState<f64>, x: &Tensor<f64>| {
            let (y, _) = bn.clone().forward_train(x).unwrap();
            dot(&y, &w)
        };
        let nx = numeric_grad(&x, |xp| loss(&bn, xp));
        assert!(relative_error(grads.x.data(), &nx) < 1e-5);
        let ng = numeric_grad(&bn.gamma, |g| {
            let mut b = bn.clone();
            b.gamma = g.clone();
            loss(&b, &x)
        });
        assert!(relative_error(grads.gamma.data(), &ng) < 1e-5);
        let nb = numeric_grad(&bn.beta, |g| {
            let mut b = bn.clone();
            b.beta = g.clone();
            loss(&b, &x)
        });
        assert!(relative_error(grads.beta.data(), &nb) < 1e-5);
    }
}
