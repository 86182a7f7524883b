//! Standardization and fixed-length framing.

use serde::{Deserialize, Serialize};

/// Lower bound on the standard deviation used as divisor.
pub const STD_FLOOR: f64 = 1e-8;

/// How clips are brought to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    /// Each clip uses its own mean and standard deviation.
    #[default]
    PerClip,
    /// Every clip uses the same statistics, typically from the training split.
    Corpus { mean: f64, std: f64 },
}

/// Mean and population standard deviation, accumulated in f64.
pub fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pooled moments over several clips.
pub fn corpus_moments<'a>(clips: impl IntoIterator<Item = &'a [f64]>) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
    for c in clips {
        n += c.len();
        sum += c.iter().sum::<f64>();
        sq += c.iter().map(|v| v * v).sum::<f64>();
    }
    let n = n.max(1) as f64;
    let mean = sum / n;
    (mean, (sq / n - mean * mean).max(0.0).sqrt())
}

/// `(x - μ) / max(σ, 1e-8)` with per-clip statistics.
pub fn standardize(samples: &[f64]) -> Vec<f32> {
    let (mean, std) = moments(samples);
    apply(samples, mean, std)
}

pub fn standardize_with(samples: &[f64], mode: Standardization) -> Vec<f32> {
    match mode {
        Standardization::PerClip => standardize(samples),
        Standardization::Corpus { mean, std } => apply(samples, mean, std),
    }
}

fn apply(samples: &[f64], mean: f64, std: f64) -> Vec<f32> {
    let d = std.max(STD_FLOOR);
    samples.iter().map(|v| ((v - mean) / d) as f32).collect()
}

/// Keeps the first `target` samples, zero-padding at the end if shorter.
pub fn fix_length(mut samples: Vec<f32>, target: usize) -> Vec<f32> {
    samples.resize(target, 0.0);
    samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn constant_clip_becomes_zero() {
        assert_eq!(standardize(&[3.0; 5]), vec![0.0; 5]);
    }

    #[test]
    fn two_point_clip() {
        assert_eq!(standardize(&[0.0, 2.0]), vec![-1.0, 1.0]);
    }

    #[test]
    fn random_clip_moments() {
        let mut rng = RandomSource::new(11);
        let x: Vec<f64> = (0..32000).map(|_| 0.3 * rng.normal() + 0.7).collect();
        let y: Vec<f64> = standardize(&x).into_iter().map(f64::from).collect();
        let (m, s) = moments(&y);
        assert!(m.abs() < 1e-5);
        assert!((s * s - 1.0).abs() < 1e-4);
    }

    #[test]
    fn fixed_length_rules() {
        let x: Vec<f32> = (0..8000).map(|i| i as f32 + 1.0).collect();
        let y = fix_length(x.clone(), 32000);
        assert_eq!(&y[..8000], &x[..]);
        assert!(y[8000..].iter().all(|&v| v == 0.0));
        let long: Vec<f32> = (0..40000).map(|i| i as f32).collect();
        assert_eq!(fix_length(long.clone(), 32000), long[..32000].to_vec());
        assert_eq!(fix_length(y.clone(), 32000), y);
    }

    #[test]
    fn corpus_moments_match_concatenation() {
        let a = [1.0, 2.0, 3.0];
        let b = [4.0, 5.0];
        let (m, s) = corpus_moments([&a[..], &b[..]]);
        let (m2, s2) = moments(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((m - m2).abs() < 1e-12 && (s - s2).abs() < 1e-12);
    }
}
