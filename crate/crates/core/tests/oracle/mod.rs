//! Reference implementations used only by tests. Everything here works on
//! plain slices and is written as directly as possible, independent of the
//! library's kernels, so it can be shared between unit, integration and
//! acceptance tests.
#![allow(dead_code)]

/// Naive strided convolution with explicit zero padding.
/// `x` is `[b, t, cin]`, `k` is `[rf, cin, cout]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv1d(
    x: &[f64],
    (b, t, cin): (usize, usize, usize),
    k: &[f64],
    (rf, _, cout): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
) -> (Vec<f64>, usize) {
    // smallest output length covering every input sample
    let mut tout = 0;
    while tout * stride < t {
        tout += 1;
    }
    let needed = (tout - 1) * stride + rf;
    let total_pad = needed.saturating_sub(t);
    let left = total_pad / 2;
    let padded_len = t + total_pad;
    let mut padded = vec![0.0; b * padded_len * cin];
    for bi in 0..b {
        for ti in 0..t {
            for c in 0..cin {
                padded[(bi * padded_len + ti + left) * cin + c] = x[(bi * t + ti) * cin + c];
            }
        }
    }
    let mut out = vec![0.0; b * tout * cout];
    for bi in 0..b {
        for to in 0..tout {
            for o in 0..cout {
                let mut acc = 0.0;
                for r in 0..rf {
                    for c in 0..cin {
                        let xv = padded[(bi * padded_len + to * stride + r) * cin + c];
                        acc += xv * k[(r * cin + c) * cout + o];
                    }
                }
                if let Some(bias) = bias {
                    acc += bias[o];
                }
                out[(bi * tout + to) * cout + o] = acc;
            }
        }
    }
    (out, tout)
}

/// Naive window-4 stride-4 max pool with a partial trailing window.
pub fn naive_maxpool4(x: &[f64], (b, t, c): (usize, usize, usize)) -> (Vec<f64>, usize) {
    let tout = t.div_ceil(4);
    let mut out = Vec::new();
    for bi in 0..b {
        for w in 0..tout {
            for ci in 0..c {
                let mut m = f64::NEG_INFINITY;
                for ti in w * 4..(w * 4 + 4).min(t) {
                    m = m.max(x[(bi * t + ti) * c + ci]);
                }
                out.push(m);
            }
        }
    }
    (out, tout)
}

/// |DFT| of a real sequence for bins `0..=n/2`, by the O(n^2) definition.
pub fn naive_dft_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error `|a - b| / max(|a|, |b|)` over whole vectors, with an
/// absolute floor so exactly-zero gradients compare cleanly.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Closed-form trainable parameter count of a plain conv stack.
///
/// `convs` lists `(rf, in, out)` for each convolution. With batch norm each
/// conv contributes `rf*in*out + 2*out` (gamma and beta, no bias); without
/// it, `rf*in*out + out` (bias). The softmax head adds `last*classes +
/// classes`.
pub fn closed_form_params(convs: &[(usize, usize, usize)], with_bn: bool, classes: usize) -> usize {
    let mut total = 0;
    for &(rf, cin, cout) in convs {
        total += rf * cin * cout + if with_bn { 2 * cout } else { cout };
    }
    let last = convs.last().map(|c| c.2).unwrap_or(1);
    total + last * classes + classes
}

/// `(rf, in, out)` for every convolution of the five base models, written
/// out by hand: first layer rf 80, then rf-3 stacks.
pub fn base_conv_table(name: &str) -> Vec<(usize, usize, usize)> {
    fn stacks(first: usize, groups: &[(usize, usize)]) -> Vec<(usize, usize, usize)> {
        let mut v = vec![(80, 1, first)];
        let mut cin = first;
        for &(width, n) in groups {
            for _ in 0..n {
                v.push((3, cin, width));
                cin = width;
            }
        }
        v
    }
    match name {
        "m3" => stacks(256, &[(256, 1)]),
        "m5" => stacks(128, &[(128, 1), (256, 1), (512, 1)]),
        "m11" => stacks(64, &[(64, 2), (128, 2), (256, 3), (512, 2)]),
        "m18" => stacks(64, &[(64, 4), (128, 4), (256, 4), (512, 4)]),
        // each residual block holds two convs
        "m34-res" => stacks(48, &[(48, 6), (96, 8), (192, 12), (384, 6)]),
        other => panic!("no table entry for {other}"),
    }
}
