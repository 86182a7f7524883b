//! Max pooling (window 4, stride 4, ceil semantics) and global average
//! pooling over the time axis.

use crate::error::{Error, Result};
use crate::tensor::{num_like::Scalar, Tensor};

pub const POOL_WINDOW: usize = 4;

fn btc<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    x.shape().btc().ok_or_else(|| Error::ShapeMismatch {
        op,
        left: x.shape().clone(),
        right: crate::tensor::Shape::new(vec![1, 1, 1]).expect("static shape"),
    })
}

/// Pooled output plus, for each output element, the absolute time index of
/// the first maximal input in its window.
#[derive(Debug, Clone)]
pub struct MaxPoolOutput<T> {
    pub values: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Window-4 stride-4 max pooling. A trailing partial window pools over the
/// remaining elements, so `T -> ceil(T / 4)`.
pub fn maxpool1d<T: Scalar>(x: &Tensor<T>) -> Result<MaxPoolOutput<T>> {
    let (batch, time, ch) = btc(x, "maxpool1d")?;
    let tout = time.div_ceil(POOL_WINDOW);
    let xd = x.data();
    let mut values = Vec::with_capacity(batch * tout * ch);
    let mut argmax = Vec::with_capacity(batch * tout * ch);
    for b in 0..batch {
        for w in 0..tout {
            let lo = w * POOL_WINDOW;
            let hi = (lo + POOL_WINDOW).min(time);
            for c in 0..ch {
                let mut best = xd[(b * time + lo) * ch + c];
                let mut best_t = lo;
                for t in lo + 1..hi {
                    let v = xd[(b * time + t) * ch + c];
                    if v > best {
                        best = v;
                        best_t = t;
                    }
                }
                values.push(best);
                argmax.push(best_t);
            }
        }
    }
    Ok(MaxPoolOutput {
        values: Tensor::from_vec(vec![batch, tout, ch], values)?,
        argmax,
    })
}

/// Routes each upstream gradient to the recorded argmax position.
pub fn maxpool1d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_dims: &[usize],
) -> Result<Tensor<T>> {
    let [batch, time, ch] = input_dims else {
        return Err(Error::Config("maxpool1d_backward expects a rank-3 input".into()));
    };
    let (batch, time, ch) = (*batch, *time, *ch);
    let tout = time.div_ceil(POOL_WINDOW);
    if grad_out.dims() != [batch, tout, ch] || argmax.len() != grad_out.len() {
        return Err(Error::ShapeMismatch {
            op: "maxpool1d_backward",
            left: grad_out.shape().clone(),
            right: crate::tensor::Shape::new(vec![batch, tout, ch])?,
        });
    }
    let mut gx = Tensor::zeros(input_dims.to_vec())?;
    let gxd = gx.data_mut();
    let gd = grad_out.data();
    for b in 0..batch {
        for w in 0..tout {
            for c in 0..ch {
                let i = (b * tout + w) * ch + c;
                gxd[(b * time + argmax[i]) * ch + c] += gd[i];
            }
        }
    }
    Ok(gx)
}

/// Mean over the time axis: `[B, T, C] -> [B, 1, C]`, for any `T >= 1`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, time, ch) = btc(x, "global_avg_pool")?;
    let xd = x.data();
    let scale = T::ONE / T::from_usize(time);
    let mut out = vec![T::ZERO; batch * ch];
    for b in 0..batch {
        let acc = &mut out[b * ch..(b + 1) * ch];
        for t in 0..time {
            for (a, &v) in acc.iter_mut().zip(&xd[(b * time + t) * ch..(b * time + t + 1) * ch]) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a *= scale;
        }
    }
    Tensor::from_vec(vec![batch, 1, ch], out)
}

pub fn global_avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, input_dims: &[usize]) -> Result<Tensor<T>> {
    let [batch, time, ch] = input_dims else {
        return Err(Error::Config("global_avg_pool_backward expects a rank-3 input".into()));
    };
    let (batch, time, ch) = (*batch, *time, *ch);
    if grad_out.len() != batch * ch {
        return Err(Error::ShapeMismatch {
            op: "global_avg_pool_backward",
            left: grad_out.shape().clone(),
            right: crate::tensor::Shape::new(vec![batch, 1, ch])?,
        });
    }
    let scale = T::ONE / T::from_usize(time);
    let gd = grad_out.data();
    let mut gx = Vec::with_capacity(batch * time * ch);
    for b in 0..batch {
        for _ in 0..time {
            gx.extend(gd[b * ch..(b + 1) * ch].iter().map(|&g| g * scale));
        }
    }
    Tensor::from_vec(input_dims.to_vec(), gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{random_tensor, MaxPoolOracle};
    use crate::rng::RandomSource;

    #[test]
    fn partial_last_window() {
        let x = Tensor::from_vec(vec![1, 6, 1], vec![1.0f64, 3.0, 2.0, 0.0, 5.0, 4.0]).unwrap();
        let out = maxpool1d(&x).unwrap();
        assert_eq!(out.values.data(), &[3.0, 5.0]);
        assert_eq!(out.argmax, vec![1, 4]);
    }

    #[test]
    fn pooled_lengths_follow_ceil_law() {
        for (t, expect) in [(8000, 2000), (125, 32), (1, 1), (4, 1), (5, 2)] {
            let x = Tensor::<f32>::zeros(vec![1, t, 2]).unwrap();
            assert_eq!(maxpool1d(&x).unwrap().values.dims(), &[1, expect, 2]);
        }
    }

    #[test]
    fn ties_route_to_first_index() {
        let x = Tensor::from_vec(vec![1, 4, 1], vec![2.0f64, 2.0, 2.0, 1.0]).unwrap();
        let out = maxpool1d(&x).unwrap();
        let g = Tensor::from_vec(vec![1, 1, 1], vec![1.0]).unwrap();
        let gx = maxpool1d_backward(&g, &out.argmax, x.dims()).unwrap();
        assert_eq!(gx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gap_examples() {
        let x = Tensor::<f32>::zeros(vec![1, 32, 512]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().dims(), &[1, 1, 512]);

        let c = Tensor::<f64>::full(vec![2, 7, 3], 1.25).unwrap();
        assert!(global_avg_pool(&c).unwrap().data().iter().all(|&v| v == 1.25));

        let mut rng = RandomSource::new(5);
        let one = random_tensor::<f64>(&[2, 1, 3], &mut rng);
        assert_eq!(global_avg_pool(&one).unwrap().data(), one.data());
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = RandomSource::new(6);
        for _ in 0..50 {
            let dims = [1 + rng.below(4), 1 + rng.below(200), 1 + rng.below(8)];
            let x = random_tensor::<f64>(&dims, &mut rng);
            let fast = maxpool1d(&x).unwrap();
            let slow = MaxPoolOracle::forward(&x);
            assert_eq!(fast.values.data(), slow.data());
        }
    }
}
