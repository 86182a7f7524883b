//! Magnitude spectra of the first convolution's kernels, sorted by peak
//! frequency, with CSV and PGM writers.

use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::resample::TARGET_RATE;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::checkpoint::{Checkpoint, CheckpointError};

/// Row-normalized magnitude spectra, one row per kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumMatrix {
    pub receptive_field: usize,
    /// Original kernel index of each row.
    pub kernel_order: Vec<usize>,
    /// `rows[i][k]` is the magnitude at bin `k`, scaled so the row maximum
    /// is 1 (all-zero kernels stay zero).
    pub rows: Vec<Vec<f64>>,
}

impl SpectrumMatrix {
    pub fn bins(&self) -> usize {
        self.receptive_field / 2 + 1
    }

    /// Frequency in Hz of bin `k` at 8 kHz sampling.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * TARGET_RATE as f64 / self.receptive_field as f64
    }

    pub fn peak_bin(row: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }

    /// Header of bin frequencies, then one row per kernel. LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.bins()).map(|k| format_num(self.bin_hz(k))).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary P5 image: one pixel per cell, rows top to bottom, values
    /// scaled to 0..=255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut header = String::new();
        write!(header, "P5\n{} {}\n255\n", self.bins(), self.rows.len()).expect("string write");
        out.extend_from_slice(header.as_bytes());
        for row in &self.rows {
            out.extend(row.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        out
    }
}

fn format_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// Spectra of a `[rf, 1, n]` kernel tensor.
pub fn spectrum_matrix<T: crate::tensor::num_like::Scalar>(kernel: &Tensor<T>) -> Result<SpectrumMatrix> {
    let dims = kernel.dims();
    if dims.len() != 3 {
        return Err(Error::Config(format!("first-layer kernel must be rank 3, got {dims:?}")));
    }
    let (rf, cin, n) = (dims[0], dims[1], dims[2]);
    if cin != 1 {
        return Err(Error::ChannelMismatch {
            op: "kernel_spectra",
            expected: 1,
            actual: cin,
        });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(rf);
    let bins = rf / 2 + 1;
    let data = kernel.data();
    let mut spectra: Vec<(usize, Vec<f64>)> = (0..n)
        .map(|o| {
            let mut buf: Vec<Complex<f64>> = (0..rf).map(|r| Complex::new(data[r * n + o].to_f64(), 0.0)).collect();
            fft.process(&mut buf);
            let mut mag: Vec<f64> = buf[..bins].iter().map(|c| c.norm()).collect();
            let max = mag.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                for v in &mut mag {
                    *v /= max;
                }
            }
            (o, mag)
        })
        .collect();
    spectra.sort_by_key(|(o, row)| (SpectrumMatrix::peak_bin(row), *o));
    Ok(SpectrumMatrix {
        receptive_field: rf,
        kernel_order: spectra.iter().map(|(o, _)| *o).collect(),
        rows: spectra.into_iter().map(|(_, r)| r).collect(),
    })
}

/// Spectra of `conv1.kernel` from a checkpoint file.
pub fn kernel_spectra(path: &Path) -> Result<SpectrumMatrix> {
    let ck = Checkpoint::load(path)?;
    let kernel = ck
        .params
        .iter()
        .find(|(n, _)| n == "conv1.kernel")
        .map(|(_, t)| t)
        .ok_or_else(|| CheckpointError::MissingTensor("conv1.kernel".into()))?;
    spectrum_matrix(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::oracle::{naive_dft_magnitude, relative_error};
    use crate::nn::testutil::random_tensor;
    use crate::rng::RandomSource;
    use std::f64::consts::PI;

    fn kernel_from_columns(cols: &[Vec<f64>]) -> Tensor<f64> {
        let rf = cols[0].len();
        let n = cols.len();
        let mut data = vec![0.0; rf * n];
        for (o, c) in cols.iter().enumerate() {
            for r in 0..rf {
                data[r * n + o] = c[r];
            }
        }
        Tensor::from_vec(vec![rf, 1, n], data).unwrap()
    }

    #[test]
    fn cosine_peaks_at_its_bin_and_sorts() {
        let cos = |bin: f64| (0..80).map(|r| (2.0 * PI * bin * r as f64 / 80.0).cos()).collect::<Vec<_>>();
        let m = spectrum_matrix(&kernel_from_columns(&[cos(7.0), vec![1.0; 80], cos(3.0)])).unwrap();
        assert_eq!(m.kernel_order, vec![1, 2, 0]);
        assert_eq!(SpectrumMatrix::peak_bin(&m.rows[2]), 7);
        assert_eq!(m.rows[0][0], 1.0);
        assert!(m.rows[0][1..].iter().all(|&v| v < 1e-12));
        assert_eq!(m.bins(), 41);
    }

    #[test]
    fn ties_keep_kernel_order() {
        let m = spectrum_matrix(&kernel_from_columns(&[vec![1.0; 8], vec![2.0; 8]])).unwrap();
        assert_eq!(m.kernel_order, vec![0, 1]);
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = RandomSource::new(12);
        for rf in [8, 80, 320, 81] {
            let k = random_tensor::<f64>(&[rf, 1, 6], &mut rng);
            let m = spectrum_matrix(&k).unwrap();
            for (row, &o) in m.rows.iter().zip(&m.kernel_order) {
                let col: Vec<f64> = (0..rf).map(|r| k.data()[r * 6 + o]).collect();
                let mut naive = naive_dft_magnitude(&col)[..rf / 2 + 1].to_vec();
                let max = naive.iter().cloned().fold(0.0, f64::max);
                naive.iter_mut().for_each(|v| *v /= max);
                assert!(relative_error(row, &naive) < 1e-10);
            }
        }
    }

    #[test]
    fn axis_labels() {
        let m = |rf| SpectrumMatrix {
            receptive_field: rf,
            kernel_order: vec![],
            rows: vec![],
        };
        assert_eq!(m(80).bin_hz(1), 100.0);
        assert_eq!(m(8).bin_hz(1), 1000.0);
        assert_eq!(m(320).bin_hz(1), 25.0);
        assert!(m(80).to_csv().starts_with("0,100,200,"));
        assert!(m(80).to_csv().trim_end().ends_with(",4000"));
    }

    #[test]
    fn rejects_multichannel_kernels() {
        let k = Tensor::<f64>::zeros(vec![3, 2, 4]).unwrap();
        assert!(matches!(spectrum_matrix(&k), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn pgm_layout() {
        let m = spectrum_matrix(&kernel_from_columns(&[vec![1.0; 8]])).unwrap();
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n5 1\n255\n"));
        assert_eq!(&pgm[pgm.len() - 5..], &[255, 0, 0, 0, 0]);
    }
}
