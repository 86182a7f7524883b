//! Band-limited downsampling to 8 kHz.
//!
//! Each output sample is a dot product of the input with a Kaiser-windowed
//! sinc low-pass centred on the output instant. When the rate ratio L/M
//! (reduced by the gcd) has at most [`MAX_TABLE_PHASES`] phases, the taps
//! for every phase are precomputed; otherwise they are evaluated per
//! output sample.

use crate::error::{Error, Result};

pub const TARGET_RATE: u32 = 8000;
/// Low-pass cutoff in Hz: the Nyquist frequency of the output.
pub const CUTOFF_HZ: f64 = 4000.0;
/// Zero crossings of the sinc kept on each side of the centre.
const ZERO_CROSSINGS: f64 = 128.0;
/// Kaiser shape parameter for roughly 60 dB of stopband attenuation.
const KAISER_BETA: f64 = 5.653;
const MAX_TABLE_PHASES: u64 = 1024;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut sum, mut term, mut k) = (1.0, 1.0, 1.0);
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

#[derive(Debug, Clone)]
pub struct Resampler {
    in_rate: u32,
    up: u64,
    down: u64,
    half_width: f64,
    nu: f64,
    i0_beta: f64,
    table: Option<Vec<Vec<f64>>>,
    taps: usize,
}

impl Resampler {
    pub fn new(in_rate: u32, out_rate: u32) -> Result<Self> {
        if out_rate == 0 || in_rate < out_rate {
            return Err(Error::Audio(format!(
                "cannot resample {in_rate} Hz to {out_rate} Hz: only downsampling is supported"
            )));
        }
        let g = gcd(in_rate as u64, out_rate as u64);
        let (up, down) = (out_rate as u64 / g, in_rate as u64 / g);
        let cutoff = CUTOFF_HZ.min(out_rate as f64 / 2.0);
        let nu = cutoff / in_rate as f64;
        let half_width = ZERO_CROSSINGS / (2.0 * nu);
        let taps = 2 * half_width.ceil() as usize + 2;
        let mut r = Resampler {
            in_rate,
            up,
            down,
            half_width,
            nu,
            i0_beta: bessel_i0(KAISER_BETA),
            table: None,
            taps,
        };
        if up <= MAX_TABLE_PHASES {
            r.table = Some((0..up).map(|p| r.phase_taps(p as f64 / up as f64)).collect());
        }
        Ok(r)
    }

    pub fn in_rate(&self) -> u32 {
        self.in_rate
    }

    fn kernel(&self, tau: f64) -> f64 {
        let r = tau / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = 2.0 * self.nu * tau;
        let sinc = if arg == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
        };
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        2.0 * self.nu * sinc * window
    }

    /// Taps for an output instant `frac` input samples past an integer
    /// index, normalized to unit DC gain. Tap `j` multiplies input sample
    /// `base - taps/2 + 1 + j`.
    fn phase_taps(&self, frac: f64) -> Vec<f64> {
        let start = 1 - (self.taps / 2) as i64;
        let mut h: Vec<f64> = (0..self.taps).map(|j| self.kernel(frac - (start + j as i64) as f64)).collect();
        let sum: f64 = h.iter().sum();
        for v in &mut h {
            *v /= sum;
        }
        h
    }

    /// Output length is `ceil(len * L / M)`.
    pub fn output_len(&self, len: usize) -> usize {
        ((len as u64 * self.up).div_ceil(self.down)) as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.up == self.down {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let start = 1 - (self.taps / 2) as i64;
        let mut out = Vec::with_capacity(n_out);
        let mut scratch;
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as i64;
            let phase = (pos % self.up) as usize;
            let taps: &[f64] = match &self.table {
                Some(t) => &t[phase],
                None => {
                    scratch = self.phase_taps(phase as f64 / self.up as f64);
                    &scratch
                }
            };
            let first = base + start;
            let lo = (-first).max(0) as usize;
            let hi = ((input.len() as i64 - first).max(0) as usize).min(taps.len());
            let mut acc = 0.0;
            for j in lo..hi {
                acc += taps[j] * input[(first + j as i64) as usize];
            }
            out.push(acc);
        }
        out
    }
}

/// Averages channels to mono and resamples to 8 kHz. 8 kHz input passes
/// through unchanged.
pub fn to_mono_8k(channels: &[Vec<f64>], rate: u32) -> Result<Vec<f64>> {
    if rate < TARGET_RATE {
        return Err(Error::Audio(format!(
            "sample rate {rate} Hz is below {TARGET_RATE} Hz; upsampling is not supported"
        )));
    }
    let n = channels.first().map_or(0, Vec::len);
    if channels.is_empty() || channels.iter().any(|c| c.len() != n) {
        return Err(Error::Audio("channels are missing or differ in length".into()));
    }
    let k = channels.len() as f64;
    let mono: Vec<f64> = (0..n).map(|i| channels.iter().map(|c| c[i]).sum::<f64>() / k).collect();
    Ok(Resampler::new(rate, TARGET_RATE)?.process(&mono))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// RMS amplitude away from the edges, relative to a unit sine.
    fn gain(freq: f64, rate: u32) -> f64 {
        let y = to_mono_8k(&[sine(freq, rate as f64, rate as usize * 2)], rate).unwrap();
        rms(&y[2000..14000]) * 2f64.sqrt()
    }

    #[test]
    fn identity_at_8k() {
        let x = vec![0.1, -0.2, 0.3];
        assert_eq!(to_mono_8k(std::slice::from_ref(&x), 8000).unwrap(), x);
    }

    #[test]
    fn refuses_upsampling() {
        assert!(to_mono_8k(&[vec![0.0; 10]], 7999).is_err());
    }

    #[test]
    fn duration_arithmetic() {
        let y = to_mono_8k(&[vec![0.0; 4 * 44100]], 44100).unwrap();
        assert!((y.len() as i64 - 32000).abs() <= 1);
        assert_eq!(Resampler::new(44100, 8000).unwrap().output_len(44101), 8001);
    }

    #[test]
    fn matches_analytic_sine() {
        let y = to_mono_8k(&[sine(1000.0, 44100.0, 4 * 44100)], 44100).unwrap();
        let r = sine(1000.0, 8000.0, y.len());
        let dot: f64 = y.iter().zip(&r).map(|(a, b)| a * b).sum();
        let corr = dot / (rms(&y) * rms(&r) * y.len() as f64);
        assert!(corr > 0.999, "{corr}");
    }

    #[test]
    fn passband_and_stopband() {
        for rate in [44100, 48000, 22050, 16000, 11025] {
            assert!(gain(3900.0, rate) >= 0.9, "{rate}: {}", gain(3900.0, rate));
            if rate > 10000 {
                assert!(gain(5000.0, rate) <= 0.05, "{rate}: {}", gain(5000.0, rate));
            }
        }
    }

    #[test]
    fn direct_taps_agree_with_table() {
        let r = Resampler::new(44100, 8000).unwrap();
        let mut direct = r.clone();
        direct.table = None;
        let x = sine(440.0, 44100.0, 5000);
        let (a, b) = (r.process(&x), direct.process(&x));
        assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-12));
        let odd = Resampler::new(44101, 8000).unwrap();
        assert!(odd.table.is_none());
        assert_eq!(odd.process(&x).len(), odd.output_len(x.len()));
    }
}
