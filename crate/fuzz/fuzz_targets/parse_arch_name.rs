#![no_main]
use libfuzzer_sys::fuzz_target;
use wavecnn_core::zoo::ArchitectureSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(name) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = ArchitectureSpec::from_name(name, 10) {
        let again = ArchitectureSpec::from_name(&spec.name, 10).expect("canonical name parses");
        assert_eq!(again, spec);
        let _ = spec.shape_trace(32000);
    }
});
