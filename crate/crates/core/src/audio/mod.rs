//! Audio ingestion: WAV decoding, resampling to 8 kHz, standardization,
//! fixed-length batching and fold-based dataset management.

pub mod batch;
pub mod cache;
pub mod dataset;
pub mod preprocess;
pub mod resample;
pub mod synthetic;
pub mod wav;

pub use batch::{assemble, make_batches, Batch};
pub use dataset::{ClipRecord, ClipSet, DatasetIndex, LoadOptions, Splits};
pub use preprocess::{fix_length, standardize, Standardization};
pub use resample::{to_mono_8k, Resampler, TARGET_RATE};
pub use wav::{decode_wav, encode_wav, DecodedWav, SampleFormat, WavError};
