#![no_main]

use cunet::training::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse(text) {
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }
});
