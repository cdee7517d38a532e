#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = cunet::training::parse_checkpoint(data) {
        // accepted files are canonical
        assert_eq!(ckpt.to_bytes(), data);
    }
});
