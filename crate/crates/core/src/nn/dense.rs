//! Fully connected layers and the softmax cross-entropy head.

use crate::error::{Error, Result};
use crate::tensor::{num_like::Scalar, Shape, Tensor};

fn matrix_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (x.dims(), w.dims()) {
        ([b, c], [c2, k]) if c == c2 => Ok((*b, *c, *k)),
        _ => Err(Error::ShapeMismatch {
            op: "linear",
            left: x.shape().clone(),
            right: w.shape().clone(),
        }),
    }
}

/// `x [B, C] . w [C, K] + b [K]`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (batch, cin, k) = matrix_dims(x, w)?;
    let wd = w.data();
    let mut out = vec![T::ZERO; batch * k];
    for (row, xrow) in out.chunks_exact_mut(k).zip(x.data().chunks_exact(cin)) {
        for (c, &a) in xrow.iter().enumerate() {
            if a == T::ZERO {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&wd[c * k..(c + 1) * k]) {
                *o += a * wv;
            }
        }
        if let Some(b) = b {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Tensor::from_vec(vec![batch, k], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
}

pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
) -> Result<LinearGrads<T>> {
    let (batch, cin, k) = matrix_dims(x, w)?;
    if grad_out.dims() != [batch, k] {
        return Err(Error::ShapeMismatch {
            op: "linear_backward",
            left: grad_out.shape().clone(),
            right: Shape::new(vec![batch, k])?,
        });
    }
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let mut gx = vec![T::ZERO; batch * cin];
    let mut gw = vec![T::ZERO; cin * k];
    for b in 0..batch {
        let grow = &gd[b * k..(b + 1) * k];
        for c in 0..cin {
            let wrow = &wd[c * k..(c + 1) * k];
            let mut acc = T::ZERO;
            for (&g, &wv) in grow.iter().zip(wrow) {
                acc += g * wv;
            }
            gx[b * cin + c] = acc;
            let a = xd[b * cin + c];
            for (d, &g) in gw[c * k..(c + 1) * k].iter_mut().zip(grow) {
                *d += a * g;
            }
        }
    }
    let gb = with_bias.then(|| {
        let mut gb = vec![T::ZERO; k];
        for row in gd.chunks_exact(k) {
            for (d, &g) in gb.iter_mut().zip(row) {
                *d += g;
            }
        }
        gb
    });
    Ok(LinearGrads {
        x: Tensor::from_vec(vec![batch, cin], gx)?,
        w: Tensor::from_vec(vec![cin, k], gw)?,
        b: gb.map(|v| Tensor::from_vec(vec![k], v)).transpose()?,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let k = *logits.dims().last().expect("rank >= 1");
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::from_f64(e / z)));
    }
    Tensor::with_shape(logits.shape().clone(), out)?.check_finite("softmax")
}

/// Mean cross-entropy of `logits [B, K]` against integer labels, together
/// with the softmax probabilities. Computed as `logsumexp - logit[label]`
/// so a very confident correct logit neither overflows nor takes `ln 0`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (batch, k) = match logits.dims() {
        [b, k] => (*b, *k),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "softmax_xent",
                left: logits.shape().clone(),
                right: Shape::new(vec![labels.len().max(1), 1])?,
            })
        }
    };
    if labels.len() != batch {
        return Err(Error::Config(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_f64()));
        let lse = m + row.iter().map(|v| (v.to_f64() - m).exp()).sum::<f64>().ln();
        loss += lse - row[label].to_f64();
    }
    Ok((loss / batch as f64, probs))
}

/// Gradient of the mean cross-entropy with respect to the logits.
pub fn softmax_xent_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize], upstream: T) -> Result<Tensor<T>> {
    let k = *probs.dims().last().expect("rank >= 1");
    let scale = upstream / T::from_usize(labels.len());
    let mut g = Vec::with_capacity(probs.len());
    for (row, &label) in probs.data().chunks_exact(k).zip(labels) {
        for (j, &p) in row.iter().enumerate() {
            let target = if j == label { T::ONE } else { T::ZERO };
            g.push((p - target) * scale);
        }
    }
    Tensor::with_shape(probs.shape().clone(), g)
}

/// Dense layer followed by softmax cross-entropy.
pub fn dense_softmax_xent<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let logits = linear_forward(x, w, Some(b))?;
    softmax_xent(&logits, labels)
}

pub fn dense_softmax_xent_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    probs: &Tensor<T>,
    labels: &[usize],
) -> Result<LinearGrads<T>> {
    let g = softmax_xent_backward(probs, labels, T::ONE)?;
    linear_backward(&g, x, w, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{numeric_grad, oracle::relative_error, random_tensor};
    use crate::rng::RandomSource;

    #[test]
    fn uniform_logits() {
        let x = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        let w = Tensor::zeros(vec![3, 10]).unwrap();
        let b = Tensor::zeros(vec![10]).unwrap();
        let (loss, p) = dense_softmax_xent(&x, &w, &b, &[0, 7]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!(p.data().iter().all(|&v| (v - 0.1).abs() < 1e-12));
    }

    #[test]
    fn huge_logit_is_stable() {
        let mut logits = vec![0.0f32; 10];
        logits[3] = 1000.0;
        let t = Tensor::from_vec(vec![1, 10], logits).unwrap();
        let (loss, p) = softmax_xent(&t, &[3]).unwrap();
        assert!(loss.abs() < 1e-6 && loss >= 0.0);
        assert!((p.data()[3] - 1.0).abs() < 1e-6);
        let (wrong, _) = softmax_xent(&t, &[2]).unwrap();
        assert!((wrong - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn label_out_of_range() {
        let t = Tensor::<f32>::zeros(vec![1, 4]).unwrap();
        assert!(matches!(
            softmax_xent(&t, &[4]),
            Err(Error::LabelOutOfRange { label: 4, classes: 4 })
        ));
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = RandomSource::new(12);
        let logits = random_tensor::<f64>(&[5, 7], &mut rng).map(|v| 20.0 * v);
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks_exact(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn grads_match_finite_differences() {
        let mut rng = RandomSource::new(13);
        let x = random_tensor::<f64>(&[3, 5], &mut rng);
        let w = random_tensor::<f64>(&[5, 4], &mut rng);
        let b = random_tensor::<f64>(&[4], &mut rng);
        let labels = [0, 3, 1];
        let (_, p) = dense_softmax_xent(&x, &w, &b, &labels).unwrap();
        let g = dense_softmax_xent_backward(&x, &w, &p, &labels).unwrap();
        let nx = numeric_grad(&x, |v| dense_softmax_xent(v, &w, &b, &labels).unwrap().0);
        let nw = numeric_grad(&w, |v| dense_softmax_xent(&x, v, &b, &labels).unwrap().0);
        let nb = numeric_grad(&b, |v| dense_softmax_xent(&x, &w, v, &labels).unwrap().0);
        assert!(relative_error(g.x.data(), &nx) < 1e-5);
        assert!(relative_error(g.w.data(), &nw) < 1e-5);
        assert!(relative_error(g.b.unwrap().data(), &nb) < 1e-5);
    }
}
