//! First-layer kernel analysis.

pub mod spectrum;

pub use spectrum::{kernel_spectra, spectrum_matrix, SpectrumMatrix};
