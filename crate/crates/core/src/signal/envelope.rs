use super::{Envelope, Waveform};
use crate::error::{Error, Result};

/// Cut a recording into fixed-length instances.
///
/// Instance `k` starts at sample `k * round(stride_s * rate)`; a trailing
/// partial window is dropped, so a recording shorter than one window yields
/// no instances.
pub fn window(w: &Waveform, length_s: f64, stride_s: f64) -> Result<Vec<Waveform>> {
    let rate = w.sample_rate_hz() as f64;
    let len = (length_s * rate).round();
    let stride = (stride_s * rate).round();
    if !(len.is_finite() && len >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "window of {length_s} s is shorter than one sample"
        )));
    }
    if !(stride_s.is_finite() && stride_s > 0.0 && stride >= 1.0) {
        return Err(Error::InvalidInput(format!("window stride {stride_s} s")));
    }
    let (len, stride) = (len as usize, stride as usize);
    if w.len() < len {
        return Ok(Vec::new());
    }
    let count = (w.len() - len) / stride + 1;
    Ok((0..count).map(|k| w.slice(k * stride, len)).collect())
}

/// Moving-RMS amplitude envelope sampled on a uniform grid and
/// peak-normalized to 1.
///
/// Grid point `k` sits at sample `c = round(k * rate / grid)` and summarizes
/// samples `[c - W/2, c - W/2 + W)`, clipped to the recording.
pub fn envelope(w: &Waveform, rms_window_ms: f64, out_grid_hz: f64) -> Result<Envelope> {
    let rate = w.sample_rate_hz() as f64;
    if !(rms_window_ms.is_finite() && rms_window_ms > 0.0) {
        return Err(Error::InvalidInput(format!("RMS window {rms_window_ms} ms")));
    }
    if !(out_grid_hz.is_finite() && out_grid_hz > 0.0 && out_grid_hz <= rate) {
        return Err(Error::InvalidInput(format!(
            "envelope grid {out_grid_hz} Hz must be in (0, {rate}]"
        )));
    }
    let win = ((rms_window_ms * rate / 1000.0).round() as usize).max(1);
    let half = win / 2;
    let x = w.samples();
    let n_out = (x.len() as f64 * out_grid_hz / rate).floor() as usize;

    let mut values: Vec<f64> = (0..n_out)
        .map(|k| {
            let c = (k as f64 * rate / out_grid_hz).round() as usize;
            let lo = c.saturating_sub(half);
            let hi = (c + win - half).min(x.len());
            if hi <= lo {
                return 0.0;
            }
            let power = x[lo..hi].iter().map(|s| s * s).sum::<f64>() / (hi - lo) as f64;
            power.sqrt()
        })
        .collect();

    let peak = values.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v /= peak);
    }
    Envelope::new(values, out_grid_hz, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 8000).unwrap()
    }

    #[test]
    fn window_counts() {
        let w = wave(vec![0.0; 24000]);
        assert_eq!(window(&w, 1.0, 0.1).unwrap().len(), 21);
        assert_eq!(window(&wave(vec![0.0; 8000]), 1.0, 0.1).unwrap().len(), 1);
        assert!(window(&wave(vec![0.0; 7200]), 1.0, 0.1).unwrap().is_empty());
    }

    #[test]
    fn window_rejects_bad_arguments() {
        let w = wave(vec![0.0; 100]);
        assert!(window(&w, 0.00001, 0.1).is_err());
        assert!(window(&w, 0.001, 0.0).is_err());
    }

    #[test]
    fn window_tiles_prefix_when_stride_equals_length() {
        let x: Vec<f64> = (0..2500).map(|i| (i as f64 * 0.01).sin()).collect();
        let w = wave(x.clone());
        let parts = window(&w, 0.1, 0.1).unwrap();
        assert_eq!(parts.len(), 3);
        let joined: Vec<f64> = parts.iter().flat_map(|p| p.samples().to_vec()).collect();
        assert_eq!(&joined[..], &x[..2400]);
    }

    #[test]
    fn stationary_tone_is_flat() {
        // 200 Hz tone with a 5 ms window spans exactly one period.
        let w = wave((0..8000).map(|i| 0.5 * (2.0 * std::f64::consts::PI * 200.0 * i as f64 / 8000.0).sin()).collect());
        let e = envelope(&w, 5.0, 100.0).unwrap();
        assert_eq!(e.len(), 100);
        for v in &e.values()[1..] {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn silence_is_all_zero() {
        let e = envelope(&wave(vec![0.0; 8000]), 5.0, 100.0).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_grid_above_sample_rate() {
        assert!(envelope(&wave(vec![0.0; 10]), 5.0, 9000.0).is_err());
        assert!(envelope(&wave(vec![0.0; 10]), 0.0, 100.0).is_err());
    }

    proptest! {
        #[test]
        fn sign_flip_and_scale_invariance(
            xs in proptest::collection::vec(-0.5f64..0.5, 800..1600),
            alpha in 0.1f64..2.0,
        ) {
            let w = wave(xs.clone());
            let flipped = wave(xs.iter().map(|s| -s).collect());
            let scaled = wave(xs.iter().map(|s| s * alpha).collect());
            let e = envelope(&w, 5.0, 100.0).unwrap();
            prop_assert_eq!(&e, &envelope(&flipped, 5.0, 100.0).unwrap());
            let es = envelope(&scaled, 5.0, 100.0).unwrap();
            for (a, b) in e.values().iter().zip(es.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
