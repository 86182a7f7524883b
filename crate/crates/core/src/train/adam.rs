//! Adam with bias correction, plus the ℓ2 gradient term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{num_like::Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one pair per parameter tensor, and the step
/// counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self
    where
        T: 'a,
    {
        let m: Vec<Tensor<T>> = params.into_iter().map(Tensor::zeros_like).collect();
        AdamState {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One Adam update. `grads` must already contain any ℓ2 term.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Config(format!(
            "adam_step: {} params, {} grads, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        p.expect_same_shape("adam_step", g)?;
        p.expect_same_shape("adam_step", m)?;
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j].to_f64();
            let mj = beta1 * m[j].to_f64() + (1.0 - beta1) * gj;
            let vj = beta2 * v[j].to_f64() + (1.0 - beta2) * gj * gj;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let step = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
            *w = T::from_f64(w.to_f64() - step);
        }
    }
    Ok(())
}

/// Adds `coeff * 2 * param` to each gradient whose `include` flag is set.
pub fn apply_l2<T: Scalar>(grads: &mut [Tensor<T>], params: &[&Tensor<T>], include: &[bool], coeff: f64) -> Result<()> {
    if coeff == 0.0 {
        return Ok(());
    }
    for ((g, p), &inc) in grads.iter_mut().zip(params).zip(include) {
        if !inc {
            continue;
        }
        g.expect_same_shape("apply_l2", p)?;
        for (gj, pj) in g.data_mut().iter_mut().zip(p.data()) {
            *gj = T::from_f64(gj.to_f64() + coeff * 2.0 * pj.to_f64());
        }
    }
    Ok(())
}

/// Σ coeff·‖θ‖² over the included tensors.
pub fn l2_penalty<T: Scalar>(params: &[&Tensor<T>], include: &[bool], coeff: f64) -> f64 {
    params
        .iter()
        .zip(include)
        .filter(|(_, &inc)| inc)
        .map(|(p, _)| coeff * p.sum_of_squares())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default(), [&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros_like(&before)], &mut s).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(AdamConfig::default(), [&p]);
        adam_step(&mut [&mut p], &[scalar(1.0)], &mut s).unwrap();
        assert!((p.data()[0] + 0.001).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut p = scalar(1.0);
        let config = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(config, [&p]);
        for _ in 0..100 {
            let g = scalar(2.0 * p.data()[0]);
            adam_step(&mut [&mut p], &[g], &mut s).unwrap();
        }
        assert!(p.data()[0].abs() < 0.05, "{}", p.data()[0]);
    }

    #[test]
    fn l2_shrinks_every_weight() {
        let mut p = Tensor::<f64>::from_vec(vec![4], vec![0.3, -0.7, 2.0, -0.01]).unwrap();
        let before = p.clone();
        let mut g = vec![Tensor::zeros_like(&p)];
        apply_l2(&mut g, &[&p], &[true], 1e-4).unwrap();
        let mut s = AdamState::new(AdamConfig::default(), [&p]);
        adam_step(&mut [&mut p], &g, &mut s).unwrap();
        for (a, b) in p.data().iter().zip(before.data()) {
            assert!(a.abs() < b.abs());
        }
    }

    #[test]
    fn l2_respects_exclusion() {
        let p = scalar(3.0);
        let mut g = vec![scalar(0.0)];
        apply_l2(&mut g, &[&p], &[false], 1e-4).unwrap();
        assert_eq!(g[0].data()[0], 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(AdamConfig::default(), [&p]);
        let bad = Tensor::zeros(vec![2]).unwrap();
        assert!(adam_step(&mut [&mut p], &[bad], &mut s).is_err());
    }
}
