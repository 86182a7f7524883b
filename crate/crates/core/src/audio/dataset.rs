//! Fold-organized clip catalog read from a metadata CSV, and loading of
//! clips into memory.
//!
//! The CSV must have a header containing `slice_file_name`, `fold` and
//! `classID`; the optional `class`, `start` and `end` columns supply class
//! names and durations, and any other column is ignored. Audio for a row
//! is looked up at `<data>/fold<k>/<file>` and then at `<data>/<file>`.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::cache::ClipCache;
use crate::audio::preprocess::{fix_length, moments, standardize_with, Standardization};
use crate::audio::resample::to_mono_8k;
use crate::audio::wav::decode_wav;
use crate::error::{Error, Result};
use crate::zoo::INPUT_SAMPLES;

pub const FOLDS: std::ops::RangeInclusive<u8> = 1..=10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub file: String,
    pub fold: u8,
    pub label: usize,
    /// Seconds, when the metadata gives start and end times.
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    pub records: Vec<ClipRecord>,
    pub class_names: BTreeMap<usize, String>,
}

/// Record indices per role. Disjoint; together they cover the index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Decoded clips held in memory, each already standardized and framed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipSet {
    pub samples: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl ClipSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Rows whose label is in `keep`, relabelled to their position in it.
    pub fn restrict_classes(&self, keep: &[usize]) -> ClipSet {
        let mut out = ClipSet::default();
        for i in 0..self.len() {
            if let Some(pos) = keep.iter().position(|&k| k == self.labels[i]) {
                out.samples.push(self.samples[i].clone());
                out.labels.push(pos);
                out.ids.push(self.ids[i].clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    #[default]
    PerClip,
    /// Statistics pooled over the training split.
    Corpus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub data_dir: PathBuf,
    pub samples: usize,
    pub standardize: StandardizeMode,
    /// Only consulted in per-clip mode.
    pub cache_dir: Option<PathBuf>,
}

impl LoadOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        LoadOptions {
            data_dir: data_dir.into(),
            samples: INPUT_SAMPLES,
            standardize: StandardizeMode::PerClip,
            cache_dir: None,
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

impl DatasetIndex {
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let need = |name: &str| column(&headers, name).ok_or_else(|| Error::Metadata(format!("missing column `{name}`")));
        let (file_col, fold_col, label_col) = (need("slice_file_name")?, need("fold")?, need("classID")?);
        let class_col = column(&headers, "class");
        let (start_col, end_col) = (column(&headers, "start"), column(&headers, "end"));

        let mut index = DatasetIndex::default();
        let mut seen = HashSet::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = row + 2;
            let field = |col: usize| {
                rec.get(col)
                    .map(str::trim)
                    .ok_or_else(|| Error::Metadata(format!("line {line}: missing field {}", col + 1)))
            };
            let file = field(file_col)?.to_string();
            if file.is_empty() || file.contains(['/', '\\']) || file == ".." {
                return Err(Error::Metadata(format!("line {line}: invalid file name `{file}`")));
            }
            let fold: u8 = field(fold_col)?
                .parse()
                .ok()
                .filter(|f| FOLDS.contains(f))
                .ok_or_else(|| Error::Metadata(format!("line {line}: fold must be an integer in 1..=10")))?;
            let label: usize = field(label_col)?
                .parse()
                .ok()
                .filter(|&l| l < 1000)
                .ok_or_else(|| Error::Metadata(format!("line {line}: classID must be a small non-negative integer")))?;
            if !seen.insert(file.clone()) {
                return Err(Error::Metadata(format!("line {line}: duplicate file `{file}`")));
            }
            if let Some(name) = class_col.and_then(|c| rec.get(c)) {
                index.class_names.entry(label).or_insert_with(|| name.trim().to_string());
            }
            let num = |c: Option<usize>| c.and_then(|c| rec.get(c)).and_then(|s| s.trim().parse::<f64>().ok());
            let duration = match (num(start_col), num(end_col)) {
                (Some(s), Some(e)) if e >= s => Some(e - s),
                _ => None,
            };
            index.records.push(ClipRecord {
                file,
                fold,
                label,
                duration,
            });
        }
        Ok(index)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Metadata(format!("{}: {e}", path.display())))?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.records.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }

    /// Test split is exactly `test_fold`; validation is `val_fold` when
    /// given and different from the test fold; everything else trains.
    pub fn split(&self, test_fold: u8, val_fold: Option<u8>) -> Splits {
        let val_fold = val_fold.filter(|&v| v != test_fold);
        let mut s = Splits::default();
        for (i, r) in self.records.iter().enumerate() {
            if r.fold == test_fold {
                s.test.push(i);
            } else if Some(r.fold) == val_fold {
                s.val.push(i);
            } else {
                s.train.push(i);
            }
        }
        s
    }

    pub fn resolve(&self, data_dir: &Path, i: usize) -> PathBuf {
        let r = &self.records[i];
        let nested = data_dir.join(format!("fold{}", r.fold)).join(&r.file);
        if nested.exists() {
            nested
        } else {
            data_dir.join(&r.file)
        }
    }

    fn decode_mono(&self, opts: &LoadOptions, i: usize) -> Result<(Vec<u8>, Vec<f64>)> {
        let path = self.resolve(&opts.data_dir, i);
        let bytes = std::fs::read(&path).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        let wav = decode_wav(&bytes).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        let mono = to_mono_8k(&wav.channels, wav.sample_rate).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        if mono.is_empty() {
            return Err(Error::Audio(format!("{}: no samples", path.display())));
        }
        Ok((bytes, mono))
    }

    /// Decodes, resamples, standardizes and frames the given records in
    /// parallel. Output order follows `indices`.
    pub fn load(&self, indices: &[usize], opts: &LoadOptions, mode: Standardization) -> Result<ClipSet> {
        let cache = match (&opts.cache_dir, mode) {
            (Some(d), Standardization::PerClip) => Some(ClipCache::new(d)?),
            _ => None,
        };
        let clips: Vec<Vec<f32>> = indices
            .par_iter()
            .map(|&i| -> Result<Vec<f32>> {
                if let Some(cache) = &cache {
                    let path = self.resolve(&opts.data_dir, i);
                    let bytes = std::fs::read(&path).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
                    let key = ClipCache::key(&bytes, opts.samples);
                    if let Some(hit) = cache.get(&key, opts.samples) {
                        return Ok(hit);
                    }
                    let (_, mono) = self.decode_mono(opts, i)?;
                    let clip = fix_length(standardize_with(&mono, mode), opts.samples);
                    cache.put(&key, &clip)?;
                    return Ok(clip);
                }
                let (_, mono) = self.decode_mono(opts, i)?;
                Ok(fix_length(standardize_with(&mono, mode), opts.samples))
            })
            .collect::<Result<_>>()?;
        Ok(ClipSet {
            samples: clips,
            labels: indices.iter().map(|&i| self.records[i].label).collect(),
            ids: indices.iter().map(|&i| self.records[i].file.clone()).collect(),
        })
    }

    /// Standardization for a run: per clip, or pooled statistics over the
    /// training records (computed in a separate decoding pass).
    pub fn standardization(&self, train: &[usize], opts: &LoadOptions) -> Result<Standardization> {
        match opts.standardize {
            StandardizeMode::PerClip => Ok(Standardization::PerClip),
            StandardizeMode::Corpus => {
                let per_clip: Vec<(usize, f64, f64)> = train
                    .par_iter()
                    .map(|&i| {
                        let (_, mono) = self.decode_mono(opts, i)?;
                        let (m, s) = moments(&mono);
                        Ok((mono.len(), m, s))
                    })
                    .collect::<Result<_>>()?;
                let (n, sum, sq) = per_clip.iter().fold((0.0, 0.0, 0.0), |(n, sum, sq), &(k, m, s)| {
                    let k = k as f64;
                    (n + k, sum + k * m, sq + k * (s * s + m * m))
                });
                let mean = sum / n.max(1.0);
                let std = (sq / n.max(1.0) - mean * mean).max(0.0).sqrt();
                Ok(Standardization::Corpus { mean, std })
            }
        }
    }
}

/// Parses metadata from raw bytes.
pub fn parse_metadata(bytes: &[u8]) -> Result<DatasetIndex> {
    DatasetIndex::from_reader(bytes)
}
