#![no_main]

use libfuzzer_sys::fuzz_target;
use murmurscope::shapes::{eval_shape_series, vertices};
use murmurscope::ShapeParams;

fuzz_target!(|data: &[u8]| {
    let Ok(p) = serde_json::from_slice::<ShapeParams>(data) else { return };
    if p.check().is_ok() {
        let grid: Vec<f64> = (0..100).map(|k| k as f64 / 100.0).collect();
        let s = eval_shape_series(&p, &grid).unwrap();
        assert_eq!(s.values.len(), grid.len());
        let _ = vertices(&p);
    }
});
