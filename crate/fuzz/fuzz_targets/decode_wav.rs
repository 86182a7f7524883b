#![no_main]
use libfuzzer_sys::fuzz_target;
use wavecnn_core::audio::{decode_wav, SampleFormat};

fuzz_target!(|data: &[u8]| {
    if let Ok(wav) = decode_wav(data) {
        let n = wav.channels.first().map_or(0, Vec::len);
        assert!(wav.channels.iter().all(|c| c.len() == n));
        if !matches!(wav.format, SampleFormat::Float32 | SampleFormat::Float64) {
            assert!(wav.channels.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
});
