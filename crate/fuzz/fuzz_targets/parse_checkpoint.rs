#![no_main]
use libfuzzer_sys::fuzz_target;
use wavecnn_core::train::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        // anything accepted must survive a re-encode unchanged
        let again = Checkpoint::from_bytes(&ck.to_bytes()).expect("re-encoded checkpoint parses");
        assert_eq!(again.to_bytes(), ck.to_bytes());
        let _ = ck.to_model();
    }
});
