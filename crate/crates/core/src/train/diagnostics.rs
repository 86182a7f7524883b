//! Gradient-norm diagnostics across depth.

use crate::error::Result;
use crate::rng::RandomSource;
use crate::tensor::{num_like::Scalar, Tensor};
use crate::zoo::ModelGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub loss: f64,
    /// `(parameter name, L2 norm of its gradient)` in canonical order.
    pub norms: Vec<(String, f64)>,
    /// Norm for the first convolution's kernel.
    pub first: f64,
    /// Norm for the softmax dense weight.
    pub last: f64,
}

impl GradientReport {
    /// First-layer over last-layer gradient norm.
    pub fn ratio(&self) -> f64 {
        self.first / self.last
    }

    /// True when the ratio leaves `[1/bound, bound]` or is not finite.
    pub fn is_degenerate(&self, bound: f64) -> bool {
        let r = self.ratio();
        !r.is_finite() || !(1.0 / bound..=bound).contains(&r)
    }
}

/// One training-mode forward and backward pass on a clone of `model`.
pub fn gradient_norms<T: Scalar>(
    model: &ModelGraph<T>,
    x: &Tensor<T>,
    labels: &[usize],
    rng: &mut RandomSource,
) -> Result<GradientReport> {
    let mut m = model.clone();
    let pass = m.forward_train(x, labels, rng)?;
    let loss = pass.loss();
    let grads = pass.backward()?;
    let norms: Vec<(String, f64)> = model.param_names().into_iter().zip(&grads).map(|(n, g)| (n, g.l2_norm())).collect();
    let find = |name: &str| norms.iter().find(|(n, _)| n == name).map_or(f64::NAN, |e| e.1);
    Ok(GradientReport {
        loss,
        first: find("conv1.kernel"),
        last: find("dense.weight"),
        norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::ArchitectureSpec;

    #[test]
    fn reports_every_parameter() {
        let spec = ArchitectureSpec::from_name("m5", 2).unwrap().with_width(0.0625).unwrap();
        let mut rng = RandomSource::new(1);
        let model: ModelGraph<f32> = ModelGraph::from_spec(spec, &mut rng).unwrap();
        let x = Tensor::from_vec(vec![2, 400, 1], (0..800).map(|i| ((i * 7919) % 13) as f32 - 6.0).collect()).unwrap();
        let r = gradient_norms(&model, &x, &[0, 1], &mut rng).unwrap();
        assert_eq!(r.norms.len(), model.param_names().len());
        assert!(r.first > 0.0 && r.last > 0.0);
        assert!(!r.is_degenerate(1e4));
    }
}
