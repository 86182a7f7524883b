//! Inverted dropout: survivors are scaled by `1 / (1 - rate)` at training
//! time so inference is the identity.

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::RandomSource;
use crate::tensor::{num_like::Scalar, Tensor};

/// Output and the multiplicative mask applied (`0` or `1 / (1 - rate)`).
/// The mask is `None` when the op was an identity.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.next_f64() < rate { T::ZERO } else { keep })
        .collect();
    let y = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::with_shape(x.shape().clone(), y)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: &[T]) -> Result<Tensor<T>> {
    let g = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Tensor::with_shape(grad_out.shape().clone(), g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cases() {
        let mut rng = RandomSource::new(1);
        let x = Tensor::from_vec(vec![3], vec![1.0f32, -2.0, 3.0]).unwrap();
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.3, Mode::Infer, &mut rng).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn survival_fraction_and_expectation() {
        let mut rng = RandomSource::new(2);
        let n = 200_000;
        let x = Tensor::<f64>::full(vec![n], 1.0).unwrap();
        let (y, mask) = dropout(&x, 0.3, Mode::Train, &mut rng).unwrap();
        let kept = mask.unwrap().iter().filter(|&&m| m != 0.0).count() as f64 / n as f64;
        assert!((kept - 0.7).abs() < 0.02, "{kept}");
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }
}
