#![no_main]
use libfuzzer_sys::fuzz_target;
use wavecnn_core::audio::dataset::parse_metadata;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = parse_metadata(data) {
        for fold in 1..=10 {
            let s = index.split(fold, Some(fold % 10 + 1));
            assert_eq!(s.train.len() + s.val.len() + s.test.len(), index.len());
        }
    }
});
