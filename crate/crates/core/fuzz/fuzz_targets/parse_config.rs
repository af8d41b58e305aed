#![no_main]

use libfuzzer_sys::fuzz_target;
use murmurscope::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = Config::from_toml_str(text) {
        // Anything accepted must survive a round trip unchanged.
        let back = Config::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }
});
