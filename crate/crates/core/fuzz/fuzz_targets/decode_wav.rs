#![no_main]

use libfuzzer_sys::fuzz_target;
use murmurscope::signal::{decode_wav, envelope};

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = decode_wav(data) {
        let w = &d.waveform;
        assert!(w.samples().iter().all(|s| s.is_finite()));
        let _ = envelope(w, 5.0, 100.0);
    }
});
