//! Replays the checked-in fuzz corpus through the parser entry points with
//! the same invariants the fuzz targets assert.

use std::fs;
use std::path::PathBuf;

use wavecnn_core::audio::dataset::parse_metadata;
use wavecnn_core::audio::{decode_wav, SampleFormat};
use wavecnn_core::train::Checkpoint;
use wavecnn_core::zoo::ArchitectureSpec;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn wav_seeds() {
    let mut accepted = 0;
    for (name, bytes) in seeds("decode_wav") {
        match decode_wav(&bytes) {
            Ok(wav) => {
                accepted += 1;
                let n = wav.channels.first().map_or(0, Vec::len);
                assert!(wav.channels.iter().all(|c| c.len() == n), "{name}");
                if !matches!(wav.format, SampleFormat::Float32 | SampleFormat::Float64) {
                    assert!(wav.channels.iter().flatten().all(|v| (-1.0..=1.0).contains(v)), "{name}");
                }
            }
            Err(_) => assert!(name.starts_with("truncated"), "{name} was rejected"),
        }
    }
    assert!(accepted >= 7);
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("parse_checkpoint") {
        let ck = Checkpoint::from_bytes(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ck.to_bytes(), bytes, "{name} does not re-encode identically");
        ck.to_model().unwrap();
    }
}

#[test]
fn metadata_seeds() {
    for (name, bytes) in seeds("parse_metadata") {
        match parse_metadata(&bytes) {
            Ok(index) => {
                for fold in 1..=10 {
                    let s = index.split(fold, Some(fold % 10 + 1));
                    assert_eq!(s.train.len() + s.val.len() + s.test.len(), index.len());
                }
            }
            Err(_) => assert!(name.starts_with("bad"), "{name} was rejected"),
        }
    }
}

#[test]
fn arch_name_seeds() {
    for (name, bytes) in seeds("parse_arch_name") {
        let text = std::str::from_utf8(&bytes).unwrap();
        match ArchitectureSpec::from_name(text, 10) {
            Ok(spec) => {
                assert_eq!(ArchitectureSpec::from_name(&spec.name, 10).unwrap(), spec);
                spec.shape_trace(32000).unwrap();
            }
            Err(_) => assert_eq!(name, "unknown"),
        }
    }
}
