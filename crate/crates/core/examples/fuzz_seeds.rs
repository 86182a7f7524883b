//! Writes the checked-in fuzz corpus seeds.
//!
//! cargo run -p wavecnn-core --example fuzz_seeds -- fuzz/corpus

use std::fs;
use std::path::{Path, PathBuf};

use wavecnn_core::audio::{encode_wav, SampleFormat};
use wavecnn_core::train::{AdamConfig, AdamState, Checkpoint};
use wavecnn_core::zoo::{supported_names, ArchitectureSpec, ModelGraph};
use wavecnn_core::RandomSource;

fn put(dir: &Path, name: &str, bytes: &[u8]) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fuzz/corpus".into()));

    let wav = root.join("decode_wav");
    let tone: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin() * 0.8).collect();
    for (name, format) in [
        ("pcm8", SampleFormat::Pcm8),
        ("pcm16", SampleFormat::Pcm16),
        ("pcm24", SampleFormat::Pcm24),
        ("pcm32", SampleFormat::Pcm32),
        ("float32", SampleFormat::Float32),
        ("float64", SampleFormat::Float64),
    ] {
        put(&wav, &format!("{name}_mono.wav"), &encode_wav(std::slice::from_ref(&tone), 16000, format));
    }
    let stereo = encode_wav(&[tone.clone(), tone.iter().map(|v| -v).collect()], 44100, SampleFormat::Pcm16);
    put(&wav, "pcm16_stereo.wav", &stereo);
    put(&wav, "truncated.wav", &stereo[..stereo.len() / 2]);
    put(&wav, "empty_data.wav", &encode_wav(&[vec![]], 8000, SampleFormat::Pcm16));

    let ck = root.join("parse_checkpoint");
    let spec = ArchitectureSpec::from_name("m3", 2).unwrap().with_width(1.0 / 64.0).unwrap();
    let model: ModelGraph<f32> = ModelGraph::from_spec(spec, &mut RandomSource::new(0)).unwrap();
    let rng = RandomSource::new(1).state();
    put(&ck, "m3_narrow.ckpt", &Checkpoint::capture(&model, None, 0, rng, None).to_bytes());
    let adam = AdamState::new(AdamConfig::default(), model.params().into_iter().map(|(_, t)| t));
    put(&ck, "m3_narrow_adam.ckpt", &Checkpoint::capture(&model, Some(&adam), 3, rng, None).to_bytes());

    let meta = root.join("parse_metadata");
    put(
        &meta,
        "urbansound.csv",
        b"slice_file_name,fsID,start,end,salience,fold,classID,class\n\
          100032-3-0-0.wav,100032,0.0,0.317551,1,5,3,dog_bark\n\
          100263-2-0-117.wav,100263,58.5,62.5,1,5,2,children_playing\n\
          101415-3-0-2.wav,101415,1.0,5.0,1,1,3,dog_bark\n",
    );
    put(&meta, "minimal.csv", b"slice_file_name,fold,classID\na.wav,1,0\nb.wav,10,1\n");
    put(&meta, "bad_fold.csv", b"slice_file_name,fold,classID\na.wav,11,0\n");

    let arch = root.join("parse_arch_name");
    for name in supported_names() {
        put(&arch, &name, name.as_bytes());
    }
    put(&arch, "upper_padded", b"  M34-RES ");
    put(&arch, "unknown", b"m7-fc");
}
