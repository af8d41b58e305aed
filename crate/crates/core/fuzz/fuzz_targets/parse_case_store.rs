#![no_main]

use libfuzzer_sys::fuzz_target;
use murmurscope::explain::parse_case_lines;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (records, bad) = parse_case_lines(text);
    assert!(bad.iter().all(|&l| l >= 1));
    assert!(records.len() + bad.len() <= text.lines().count());
});
