//! Tensor-level wrappers around the shared slice oracles.

#[path = "../../tests/oracle/mod.rs"]
pub mod oracle;

use crate::nn::conv::ConvParams;
use crate::rng::RandomSource;
use crate::tensor::{num_like::Scalar, Tensor};

pub fn random_tensor<T: Scalar>(dims: &[usize], rng: &mut RandomSource) -> Tensor<T> {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.uniform(-1.0, 1.0))).collect();
    Tensor::from_vec(dims.to_vec(), data).unwrap()
}

pub struct ConvOracle;

impl ConvOracle {
    pub fn forward(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
        let xd = x.dims();
        let kd = p.kernel.dims();
        let (out, tout) = oracle::naive_conv1d(
            x.data(),
            (xd[0], xd[1], xd[2]),
            p.kernel.data(),
            (kd[0], kd[1], kd[2]),
            p.bias.as_ref().map(|b| b.data()),
            p.stride,
        );
        Tensor::from_vec(vec![xd[0], tout, kd[2]], out).unwrap()
    }
}

pub struct MaxPoolOracle;

impl MaxPoolOracle {
    pub fn forward(x: &Tensor<f64>) -> Tensor<f64> {
        let d = x.dims();
        let (out, tout) = oracle::naive_maxpool4(x.data(), (d[0], d[1], d[2]));
        Tensor::from_vec(vec![d[0], tout, d[2]], out).unwrap()
    }
}

/// Finite-difference gradient of a scalar function of one tensor.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let dims = x.dims().to_vec();
    oracle::central_difference(x.data(), 1e-5, |v| {
        f(&Tensor::from_vec(dims.clone(), v.to_vec()).unwrap())
    })
}

/// Weighted sum `sum(w * y)`: turns a tensor-valued op into a scalar loss
/// whose upstream gradient is `w`.
pub fn dot(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}
