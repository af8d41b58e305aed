use crate::error::{Error, Result};
use crate::segmentation::Segment;
use crate::shapes::{Diagnosis, ShapeParams};
use crate::signal::Envelope;

use super::Priors;

#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub params: ShapeParams,
    pub warnings: Vec<String>,
}

/// Grid points of `e` inside the segment, as `(index, time)`.
pub(crate) fn segment_points(e: &Envelope, seg: &Segment) -> Vec<(usize, f64)> {
    seg.grid_range(e).map(|k| (k, e.time_at(k))).collect()
}

/// Heuristic starting parameters for hypothesis `y` over `seg`.
///
/// Breakpoints come from the segment bounds, the in-segment envelope maximum
/// and the MS spacing priors; intercepts and slopes are read off the
/// envelope at those breakpoints.
pub fn init_params(y: Diagnosis, e: &Envelope, seg: &Segment, priors: &Priors) -> Result<Initialization> {
    if y == Diagnosis::N {
        return Err(Error::Contract("N has no shape parameters to initialize".into()));
    }
    let pts = segment_points(e, seg);
    if pts.is_empty() || !(seg.start_s < seg.end_s) {
        return Err(Error::Contract(format!(
            "segment [{}, {}) holds no envelope points",
            seg.start_s, seg.end_s
        )));
    }
    let (t1, tl) = (seg.start_s, seg.end_s);
    let mut warnings = Vec::new();
    let clamp = |t: f64, lo: f64| t.clamp(lo, tl);
    let argmax_t = || {
        let mut best = pts[0];
        for &(k, t) in &pts[1..] {
            if e.values()[k] > e.values()[best.0] {
                best = (k, t);
            }
        }
        best.1
    };
    let slope = |rise: f64, run: f64, what: &str, warnings: &mut Vec<String>| {
        if run > 0.0 {
            rise / run
        } else {
            warnings.push(format!("{y}: degenerate {what}, slope initialized to 0"));
            0.0
        }
    };
    let pi0 = e.at(t1);

    let params = match y {
        Diagnosis::N => unreachable!(),
        Diagnosis::MR => {
            let mean = pts.iter().map(|&(k, _)| e.values()[k]).sum::<f64>() / pts.len() as f64;
            ShapeParams::new(y, vec![t1, tl], vec![mean])?
        }
        Diagnosis::AS => {
            let t2 = argmax_t();
            let p1 = slope(e.at(t2) - pi0, t2 - t1, "dtau12", &mut warnings);
            ShapeParams::new(y, vec![t1, t2, tl], vec![pi0, p1, p1])?
        }
        Diagnosis::MVP => {
            let t2 = argmax_t();
            let t3 = clamp(t1 + 2.0 * (t2 - t1), t2);
            let p1 = slope(e.at(t2) - pi0, t2 - t1, "dtau12", &mut warnings);
            ShapeParams::new(y, vec![t1, t2, t3, tl], vec![pi0, p1])?
        }
        Diagnosis::MS => {
            let t2 = clamp(t1 + priors.ms_median_dtau12_s, t1);
            let t3 = clamp(t1 + 2.0 * (t2 - t1), t2);
            let t4 = clamp(tl - priors.ms_median_dtau4l_s, t3);
            let p1 = slope(e.at(t2) - pi0, t2 - t1, "dtau12", &mut warnings);
            // tau_L is exclusive; the last in-segment point stands in for a(tau_L).
            let a_end = e.values()[pts[pts.len() - 1].0];
            let p2 = slope(a_end - e.at(t4), tl - t4, "dtau4L", &mut warnings);
            ShapeParams::new(y, vec![t1, t2, t3, t4, tl], vec![pi0, p1, p2])?
        }
    };
    Ok(Initialization { params, warnings })
}
