#![no_main]

use libfuzzer_sys::fuzz_target;
use murmurscope::explain::{contrastive, counterfactual, Explanation};
use murmurscope::render::{render_abductive, render_contrastive, render_counterfactual, DiagramStyle};
use murmurscope::{CaseReport, Diagnosis};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(r) = CaseReport::from_json(text) else { return };
    // A report that validates must render without panicking.
    let style = DiagramStyle::default();
    let _ = render_abductive(&r, &style);
    let _ = render_contrastive(&r, &style);
    let _ = contrastive(&r);
    for y in Diagnosis::ALL {
        if let Ok(Explanation::Counterfactual(x)) = counterfactual(&r, y) {
            let _ = render_counterfactual(&x, &style);
        }
    }
});
