#![no_main]

use libfuzzer_sys::fuzz_target;
use murmurscope::segmentation::parse_mask;
use murmurscope::Envelope;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_mask(text) {
        if let Ok(e) = Envelope::new(vec![0.0; m.bits.len()], 100.0, 0.0) {
            let _ = m.align(&e);
        }
    }
});
