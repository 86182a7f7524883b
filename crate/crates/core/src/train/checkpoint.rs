//! Checkpoint container.
//!
//! Layout: the 8-byte magic `WCNNCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! the tensor payloads as little-endian `f32` in manifest order. Each
//! manifest entry records its byte offset relative to the payload start.
//!
//! Tensor groups are distinguished by name: trainable parameters use the
//! model's names, running statistics end in `.running_mean` /
//! `.running_var`, and optimizer moments are prefixed `adam.m/` and
//! `adam.v/`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};
use crate::train::adam::{AdamConfig, AdamState};
use crate::train::engine::TrainConfig;
use crate::zoo::{ArchitectureSpec, ModelGraph};

pub const MAGIC: &[u8; 8] = b"WCNNCKPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
/// Upper bound on the manifest size accepted by the parser.
const MAX_MANIFEST: u64 = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic at byte 0")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: need {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint lacks tensor `{0}`")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("checkpoint holds architecture `{found}`, expected `{expected}`")]
    ArchMismatch { expected: String, found: String },
}

type CkResult<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    arch: String,
    num_classes: usize,
    width: f64,
    input_samples: usize,
    epoch: usize,
    adam: Option<AdamMeta>,
    rng: RngState,
    config: Option<TrainConfig>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AdamMeta {
    config: AdamConfig,
    t: u64,
}

/// Everything needed to rebuild a model and resume its training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub num_classes: usize,
    pub width: f64,
    pub input_samples: usize,
    pub epoch: usize,
    pub params: Vec<(String, Tensor<f32>)>,
    pub running_stats: Vec<(String, Tensor<f32>)>,
    pub adam: Option<AdamState<f32>>,
    pub rng: RngState,
    pub config: Option<TrainConfig>,
}

impl Checkpoint {
    /// Snapshot of `model`, optionally with optimizer state.
    pub fn capture(
        model: &ModelGraph<f32>,
        adam: Option<&AdamState<f32>>,
        epoch: usize,
        rng: RngState,
        config: Option<&TrainConfig>,
    ) -> Self {
        let spec = model.spec();
        Checkpoint {
            arch: spec.name.clone(),
            num_classes: spec.num_classes,
            width: spec.width,
            input_samples: spec.input_samples,
            epoch,
            params: model.params().into_iter().map(|(n, t)| (n, t.clone())).collect(),
            running_stats: model.running_stats().into_iter().map(|(n, t)| (n, t.clone())).collect(),
            adam: adam.cloned(),
            rng,
            config: config.cloned(),
        }
    }

    /// The architecture this checkpoint was taken from.
    pub fn spec(&self) -> crate::Result<ArchitectureSpec> {
        let mut spec = ArchitectureSpec::from_name(&self.arch, self.num_classes)?;
        if self.width != 1.0 {
            spec = spec.with_width(self.width)?;
        }
        Ok(spec.with_input_samples(self.input_samples))
    }

    /// Rebuilds the model. Weights come from the checkpoint, not from `rng`.
    pub fn to_model(&self) -> crate::Result<ModelGraph<f32>> {
        let mut rng = crate::rng::RandomSource::new(0);
        let mut model = ModelGraph::from_spec(self.spec()?, &mut rng)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    /// Copies parameters and running statistics into `model`, checking
    /// names and shapes in canonical order. The first disagreement is
    /// reported.
    pub fn restore_into(&self, model: &mut ModelGraph<f32>) -> CkResult<()> {
        check_group(&self.params, model.params())?;
        check_group(&self.running_stats, model.running_stats())?;
        for ((_, dst), (_, src)) in model.params_mut().into_iter().zip(&self.params) {
            dst.data_mut().copy_from_slice(src.data());
        }
        let mut stats = self.running_stats.iter();
        for (_, bn) in model.batchnorms_mut() {
            let mean = &stats.next().expect("checked").1;
            let var = &stats.next().expect("checked").1;
            bn.running_mean.data_mut().copy_from_slice(mean.data());
            bn.running_var.data_mut().copy_from_slice(var.data());
            bn.mark_stats_ready();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        let mut push = |name: String, t: &Tensor<f32>, tensors: &mut Vec<(TensorEntry, Vec<f32>)>| {
            tensors.push((
                TensorEntry {
                    name,
                    shape: t.dims().to_vec(),
                    offset,
                },
                t.data().to_vec(),
            ));
            offset += 4 * t.len() as u64;
        };
        for (n, t) in self.params.iter().chain(&self.running_stats) {
            push(n.clone(), t, &mut tensors);
        }
        if let Some(adam) = &self.adam {
            for ((n, _), m) in self.params.iter().zip(&adam.m) {
                push(format!("adam.m/{n}"), m, &mut tensors);
            }
            for ((n, _), v) in self.params.iter().zip(&adam.v) {
                push(format!("adam.v/{n}"), v, &mut tensors);
            }
        }
        let manifest = Manifest {
            version: FORMAT_VERSION,
            arch: self.arch.clone(),
            num_classes: self.num_classes,
            width: self.width,
            input_samples: self.input_samples,
            epoch: self.epoch,
            adam: self.adam.as_ref().map(|a| AdamMeta { config: a.config, t: a.t }),
            rng: self.rng,
            config: self.config.clone(),
            tensors: tensors.iter().map(|(e, _)| e.clone()).collect(),
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, data) in &tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CkResult<Self> {
        let len = bytes.len();
        let take = |offset: usize, needed: usize| -> CkResult<&[u8]> {
            offset
                .checked_add(needed)
                .filter(|&end| end <= len)
                .map(|end| &bytes[offset..end])
                .ok_or(CheckpointError::Truncated { offset, needed, len })
        };
        if take(0, 8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let manifest_len = u64::from_le_bytes(take(12, 8)?.try_into().expect("8 bytes"));
        if manifest_len > MAX_MANIFEST {
            return Err(CheckpointError::Manifest(format!("manifest length {manifest_len} is implausible")));
        }
        let json = take(HEADER_LEN, manifest_len as usize)?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        if manifest.version != version {
            return Err(CheckpointError::Manifest(format!(
                "manifest version {} disagrees with header version {version}",
                manifest.version
            )));
        }
        let payload_start = HEADER_LEN + manifest_len as usize;

        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let shape = Shape::new(entry.shape.clone())
                .map_err(|_| CheckpointError::Manifest(format!("tensor `{}` has an empty extent", entry.name)))?;
            if entry.offset != expected_offset {
                return Err(CheckpointError::Manifest(format!(
                    "tensor `{}` at offset {}, expected {expected_offset}",
                    entry.name, entry.offset
                )));
            }
            let numel = entry
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
            let (numel, nbytes) = numel.ok_or_else(|| CheckpointError::Manifest(format!("tensor `{}` is too large", entry.name)))?;
            let start = usize::try_from(entry.offset)
                .ok()
                .and_then(|o| o.checked_add(payload_start))
                .ok_or(CheckpointError::Truncated {
                    offset: usize::MAX,
                    needed: nbytes,
                    len,
                })?;
            let raw = take(start, nbytes)?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            debug_assert_eq!(data.len(), numel);
            let t = Tensor::with_shape(shape, data).expect("length checked");
            tensors.push((entry.name.clone(), t));
            expected_offset += nbytes as u64;
        }
        let end = payload_start as u64 + expected_offset;
        if (len as u64) != end {
            return Err(CheckpointError::Manifest(format!(
                "{} trailing bytes after the last tensor",
                len as u64 - end.min(len as u64)
            )));
        }

        let mut params = Vec::new();
        let mut running_stats = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in tensors {
            if let Some(rest) = name.strip_prefix("adam.m/") {
                m.push((rest.to_string(), t));
            } else if let Some(rest) = name.strip_prefix("adam.v/") {
                v.push((rest.to_string(), t));
            } else if name.ends_with(".running_mean") || name.ends_with(".running_var") {
                running_stats.push((name, t));
            } else {
                params.push((name, t));
            }
        }
        let adam = match manifest.adam {
            None if m.is_empty() && v.is_empty() => None,
            None => return Err(CheckpointError::UnexpectedTensor(m.first().or(v.first()).map(|e| e.0.clone()).unwrap_or_default())),
            Some(meta) => {
                for moments in [&m, &v] {
                    check_group(moments, params.iter().map(|(n, t)| (n.clone(), t)).collect())?;
                }
                Some(AdamState {
                    config: meta.config,
                    m: m.into_iter().map(|(_, t)| t).collect(),
                    v: v.into_iter().map(|(_, t)| t).collect(),
                    t: meta.t,
                })
            }
        };
        Ok(Checkpoint {
            arch: manifest.arch,
            num_classes: manifest.num_classes,
            width: manifest.width,
            input_samples: manifest.input_samples,
            epoch: manifest.epoch,
            params,
            running_stats,
            adam,
            rng: manifest.rng,
            config: manifest.config,
        })
    }

    /// Writes atomically: a sibling temporary file is renamed over `path`.
    pub fn save(&self, path: &Path) -> crate::Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        Ok(Self::from_bytes(&fs::read(path)?)?)
    }
}

fn check_group(stored: &[(String, Tensor<f32>)], expected: Vec<(String, &Tensor<f32>)>) -> CkResult<()> {
    for (i, (name, t)) in expected.iter().enumerate() {
        match stored.get(i) {
            None => return Err(CheckpointError::MissingTensor(name.clone())),
            Some((sname, st)) => {
                if sname != name {
                    return Err(if stored.iter().any(|(n, _)| n == name) {
                        CheckpointError::Manifest(format!("tensor `{sname}` out of order, expected `{name}`"))
                    } else {
                        CheckpointError::MissingTensor(name.clone())
                    });
                }
                if st.dims() != t.dims() {
                    return Err(CheckpointError::ShapeMismatch {
                        name: name.clone(),
                        expected: t.dims().to_vec(),
                        found: st.dims().to_vec(),
                    });
                }
            }
        }
    }
    if let Some((extra, _)) = stored.get(expected.len()) {
        return Err(CheckpointError::UnexpectedTensor(extra.clone()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use crate::zoo::build;

    fn small(name: &str, seed: u64) -> ModelGraph<f32> {
        let spec = ArchitectureSpec::from_name(name, 4).unwrap().with_width(0.125).unwrap();
        ModelGraph::from_spec(spec, &mut RandomSource::new(seed)).unwrap()
    }

    fn with_adam(model: &ModelGraph<f32>) -> Checkpoint {
        let mut adam = AdamState::new(AdamConfig::default(), model.params().into_iter().map(|(_, t)| t));
        adam.t = 7;
        adam.m[0].data_mut()[0] = 0.25;
        Checkpoint::capture(model, Some(&adam), 3, RandomSource::new(5).state(), None)
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        let model = small("m5", 1);
        let ck = with_adam(&model);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let rebuilt = back.to_model().unwrap();
        assert_eq!(rebuilt.state_digest(), model.state_digest());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = with_adam(&small("m34-res", 2));
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn distinct_errors() {
        let bytes = with_adam(&small("m3", 3)).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"RIFF0000"), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&v2),
            Err(CheckpointError::VersionMismatch { found: 2, expected: 1 })
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(CheckpointError::Truncated { .. })));
    }

    #[test]
    fn wrong_architecture_names_first_tensor() {
        let m18 = build::<f32>("m18", 10, &mut RandomSource::new(4)).unwrap();
        let ck = Checkpoint::capture(&m18, None, 0, RandomSource::new(0).state(), None);
        let mut m5 = build::<f32>("m5", 10, &mut RandomSource::new(4)).unwrap();
        match ck.restore_into(&mut m5) {
            Err(CheckpointError::ShapeMismatch { name, .. }) => assert_eq!(name, "conv1.kernel"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn restored_stats_are_ready() {
        let model = small("m3", 6);
        let ck = Checkpoint::capture(&model, None, 0, RandomSource::new(0).state(), None);
        let rebuilt = ck.to_model().unwrap();
        assert!(rebuilt.batchnorms().iter().all(|(_, bn)| bn.stats_ready()));
    }
}
