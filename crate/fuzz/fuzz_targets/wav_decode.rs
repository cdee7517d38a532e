#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(sig) = cunet::audio::decode_wav(data) {
        assert!(sig.sample_rate > 0);
        assert!(sig.samples.iter().all(|s| s.is_finite()));
    }
});
