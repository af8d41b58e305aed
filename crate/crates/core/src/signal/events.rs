use serde::{Deserialize, Serialize};

use super::{Envelope, HeartEvents, Interval, Phase};
use crate::segmentation::Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventConfig {
    /// Minimum peak prominence as a fraction of the envelope maximum.
    pub peak_min_prominence: f64,
    pub min_peak_separation_s: f64,
    /// Inter-peak gaps up to this long are read as systole.
    pub systole_max_s: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig {
            peak_min_prominence: 0.4,
            min_peak_separation_s: 0.2,
            systole_max_s: 0.45,
        }
    }
}

/// Topographic prominence of every strict local maximum, as `(index, prominence)`.
fn peak_prominences(v: &[f64]) -> Vec<(usize, f64)> {
    let n = v.len();
    let mut out = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(v[i] > v[i - 1] && v[i] >= v[i + 1]) {
            continue;
        }
        let mut left_min = v[i];
        for &x in v[..i].iter().rev() {
            if x > v[i] {
                break;
            }
            left_min = left_min.min(x);
        }
        let mut right_min = v[i];
        for &x in &v[i + 1..] {
            if x > v[i] {
                break;
            }
            right_min = right_min.min(x);
        }
        out.push((i, v[i] - left_min.max(right_min)));
    }
    out
}

/// Pick the two most prominent, well-separated envelope peaks as S1/S2.
///
/// A gap of at most `systole_max_s` is systole (first peak S1); a longer gap
/// is diastole (first peak S2). The phase after the second peak runs to the
/// end of the instance.
pub fn detect_s1_s2(e: &Envelope, cfg: &EventConfig) -> HeartEvents {
    let max = e.values().iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return HeartEvents::default();
    }
    let mut peaks: Vec<(usize, f64)> = peak_prominences(e.values())
        .into_iter()
        .filter(|&(_, p)| p >= cfg.peak_min_prominence * max)
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let min_sep_steps = cfg.min_peak_separation_s * e.grid_hz() - 1e-9;
    let mut chosen: Vec<usize> = Vec::with_capacity(2);
    for (i, _) in peaks {
        if chosen.iter().all(|&j| (i.abs_diff(j) as f64) >= min_sep_steps) {
            chosen.push(i);
            if chosen.len() == 2 {
                break;
            }
        }
    }
    if chosen.len() < 2 {
        return HeartEvents::default();
    }
    chosen.sort_unstable();
    let (a, b) = (e.time_at(chosen[0]), e.time_at(chosen[1]));
    let end = e.t0_s() + e.duration_s();
    let first_gap = Interval { start_s: a, end_s: b };
    let tail = Interval { start_s: b, end_s: end };
    if b - a <= cfg.systole_max_s {
        HeartEvents {
            s1_time_s: Some(a),
            s2_time_s: Some(b),
            systole_interval: Some(first_gap),
            diastole_interval: Some(tail),
        }
    } else {
        HeartEvents {
            s1_time_s: Some(b),
            s2_time_s: Some(a),
            systole_interval: Some(tail),
            diastole_interval: Some(first_gap),
        }
    }
}

/// Heart phase of a murmur segment, judged by its midpoint.
pub fn classify_phase(segment: &Segment, ev: &HeartEvents) -> Phase {
    let mid = 0.5 * (segment.start_s + segment.end_s);
    if ev.systole_interval.is_some_and(|iv| iv.contains(mid)) {
        Phase::Systolic
    } else if ev.diastole_interval.is_some_and(|iv| iv.contains(mid)) {
        Phase::Diastolic
    } else {
        Phase::Unknown
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bumps(at: &[f64]) -> Envelope {
        let v = (0..100)
            .map(|k| {
                let t = k as f64 / 100.0;
                at.iter()
                    .map(|c| (-(t - c).powi(2) / (2.0 * 0.015f64.powi(2))).exp())
                    .sum::<f64>()
            })
            .collect();
        Envelope::new(v, 100.0, 0.0).unwrap()
    }

    #[test]
    fn short_gap_is_systole() {
        let ev = detect_s1_s2(&bumps(&[0.10, 0.40]), &EventConfig::default());
        let sys = ev.systole_interval.unwrap();
        assert!((sys.start_s - 0.10).abs() <= 0.01 + 1e-12);
        assert!((sys.end_s - 0.40).abs() <= 0.01 + 1e-12);
        assert_eq!(ev.s1_time_s, Some(sys.start_s));
        let dia = ev.diastole_interval.unwrap();
        assert_eq!(dia.start_s, sys.end_s);
        assert!((dia.end_s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn long_gap_is_diastole() {
        let ev = detect_s1_s2(&bumps(&[0.20, 0.80]), &EventConfig::default());
        assert!((ev.s2_time_s.unwrap() - 0.20).abs() < 1e-9);
        assert!((ev.s1_time_s.unwrap() - 0.80).abs() < 1e-9);
        let dia = ev.diastole_interval.unwrap();
        assert!((dia.start_s - 0.2).abs() < 1e-9 && (dia.end_s - 0.8).abs() < 1e-9);
    }

    #[test]
    fn flat_envelope_has_no_events() {
        let flat = Envelope::new(vec![0.5; 100], 100.0, 0.0).unwrap();
        assert_eq!(detect_s1_s2(&flat, &EventConfig::default()), HeartEvents::default());
        let zero = Envelope::new(vec![0.0; 100], 100.0, 0.0).unwrap();
        assert_eq!(detect_s1_s2(&zero, &EventConfig::default()), HeartEvents::default());
    }

    #[test]
    fn close_peaks_are_not_both_taken() {
        let ev = detect_s1_s2(&bumps(&[0.30, 0.40]), &EventConfig::default());
        assert_eq!(ev, HeartEvents::default());
    }

    #[test]
    fn event_times_lie_on_grid() {
        let e = bumps(&[0.123, 0.487]);
        let ev = detect_s1_s2(&e, &EventConfig::default());
        for t in ev.event_times() {
            let k = t * 100.0;
            assert!((k - k.round()).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&t));
        }
    }

    #[test]
    fn phase_by_midpoint() {
        let ev = HeartEvents {
            s1_time_s: Some(0.1),
            s2_time_s: Some(0.4),
            systole_interval: Some(Interval { start_s: 0.1, end_s: 0.4 }),
            diastole_interval: None,
        };
        let seg = Segment { start_s: 0.2, end_s: 0.3 };
        assert_eq!(classify_phase(&seg, &ev), Phase::Systolic);
        let late = Segment { start_s: 0.6, end_s: 0.8 };
        assert_eq!(classify_phase(&late, &ev), Phase::Unknown);
    }
}
