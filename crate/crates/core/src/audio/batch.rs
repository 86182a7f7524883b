//! Seeded batching of an in-memory clip set.

use crate::audio::dataset::ClipSet;
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

/// Smallest batch batch norm can train on.
pub const MIN_BATCH: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, T, 1]`.
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Splits a seeded permutation of `0..n` into batches of `batch_size`.
/// A final short batch is kept when it has at least two rows and dropped
/// (with a warning) otherwise.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut RandomSource) -> Result<Vec<Vec<usize>>> {
    if batch_size < MIN_BATCH {
        return Err(Error::Config(format!("batch size {batch_size} is below {MIN_BATCH}")));
    }
    if n == 0 {
        return Err(Error::EmptySplit);
    }
    let order = rng.permutation(n);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if let Some(dropped) = batches.pop_if(|b| b.len() < MIN_BATCH) {
        log::warn!("dropping a final batch of {} clip(s); batch norm needs {MIN_BATCH}", dropped.len());
    }
    Ok(batches)
}

/// Stacks the selected clips into a `[B, T, 1]` tensor, truncating or
/// zero-padding each row to `samples`.
pub fn assemble(set: &ClipSet, indices: &[usize], samples: usize) -> Result<Batch> {
    let mut data = vec![0.0f32; indices.len() * samples];
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &i) in indices.iter().enumerate() {
        let clip = set
            .samples
            .get(i)
            .ok_or_else(|| Error::Config(format!("clip index {i} out of range")))?;
        let n = clip.len().min(samples);
        data[row * samples..row * samples + n].copy_from_slice(&clip[..n]);
        labels.push(set.labels[i]);
    }
    Ok(Batch {
        x: Tensor::from_vec(vec![indices.len().max(1), samples, 1], data)?,
        labels,
        indices: indices.to_vec(),
    })
}
