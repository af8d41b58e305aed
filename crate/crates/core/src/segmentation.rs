//! Deterministic murmur segmentation on the amplitude envelope.
//!
//! Grid points whose envelope rises above a multiple of the background level
//! are marked, S1/S2 neighbourhoods are excluded, short gaps are bridged and
//! short runs dropped. When several runs survive, the longest one is taken
//! as the murmur.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::signal::{Envelope, HeartEvents};

/// Thresholds never drop below this, so a perfectly silent background does
/// not turn quantization dust into a murmur.
const THRESHOLD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    /// Multiple of the background RMS a point must exceed.
    pub threshold_factor: f64,
    pub exclusion_halfwidth_ms: f64,
    pub min_duration_ms: f64,
    pub max_gap_ms: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            threshold_factor: 2.0,
            exclusion_halfwidth_ms: 60.0,
            min_duration_ms: 50.0,
            max_gap_ms: 40.0,
        }
    }
}

/// Boolean mask on an envelope grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub bits: Vec<bool>,
    pub grid_hz: f64,
    #[serde(default)]
    pub t0_s: f64,
}

/// Murmur segment `[start_s, end_s)` in instance seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn midpoint_s(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }

    /// Indices of the grid points of `e` inside `[start_s, end_s)`.
    ///
    /// Bounds within a millionth of a step of a grid point count as on it, so
    /// an end computed as `last + step` never admits the next point.
    pub fn grid_range(&self, e: &Envelope) -> std::ops::Range<usize> {
        let g = e.grid_hz();
        let idx = |t: f64| ((t - e.t0_s()) * g - GRID_SNAP).ceil().clamp(0.0, e.len() as f64) as usize;
        let (a, b) = (idx(self.start_s), idx(self.end_s));
        a..b.max(a)
    }
}

/// Fraction of a grid step treated as rounding noise.
const GRID_SNAP: f64 = 1e-6;

impl Mask {
    pub fn empty_for(e: &Envelope) -> Mask {
        Mask {
            bits: vec![false; e.len()],
            grid_hz: e.grid_hz(),
            t0_s: e.t0_s(),
        }
    }

    /// Grid points of `e` inside the closed-open segment.
    pub fn from_segment(e: &Envelope, seg: &Segment) -> Mask {
        let r = seg.grid_range(e);
        let bits = (0..e.len()).map(|k| r.contains(&k)).collect();
        Mask {
            bits,
            grid_hz: e.grid_hz(),
            t0_s: e.t0_s(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    /// Half-open index ranges of the true runs, in order.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        runs_of(&self.bits)
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0_s + k as f64 / self.grid_hz
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub(crate) fn check_aligned(&self, e: &Envelope) -> Result<()> {
        if self.bits.len() != e.len() {
            return Err(Error::Alignment(format!(
                "mask has {} points, envelope has {}",
                self.bits.len(),
                e.len()
            )));
        }
        if (self.grid_hz - e.grid_hz()).abs() > 1e-9 * e.grid_hz() {
            return Err(Error::Alignment(format!(
                "mask grid {} Hz differs from envelope grid {} Hz",
                self.grid_hz,
                e.grid_hz()
            )));
        }
        Ok(())
    }
}

fn runs_of(bits: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bits.len() {
        if bits[i] {
            let j = i + bits[i..].iter().take_while(|&&b| b).count();
            out.push((i, j));
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// RMS of the lowest quarter of the envelope values.
pub fn background_rms(e: &Envelope) -> f64 {
    let mut v = e.values().to_vec();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let q = (v.len() / 4).max(1);
    (v[..q].iter().map(|x| x * x).sum::<f64>() / q as f64).sqrt()
}

fn excluded_points(e: &Envelope, ev: &HeartEvents, cfg: &SegmentConfig) -> Vec<bool> {
    let hw = cfg.exclusion_halfwidth_ms / 1000.0 + 1e-9;
    let events = ev.event_times();
    e.times()
        .into_iter()
        .map(|t| events.iter().any(|&s| (t - s).abs() <= hw))
        .collect()
}

/// Points above threshold with the S1/S2 windows removed, before gap filling
/// and run pruning.
pub fn threshold_mask(e: &Envelope, ev: &HeartEvents, cfg: &SegmentConfig) -> Vec<bool> {
    let thr = (cfg.threshold_factor * background_rms(e)).max(THRESHOLD_FLOOR);
    let excl = excluded_points(e, ev, cfg);
    e.values()
        .iter()
        .zip(&excl)
        .map(|(&v, &x)| v > thr && !x)
        .collect()
}

pub fn segment_murmur(e: &Envelope, ev: &HeartEvents, cfg: &SegmentConfig) -> Mask {
    let excl = excluded_points(e, ev, cfg);
    let mut bits = threshold_mask(e, ev, cfg);
    let step_ms = 1000.0 / e.grid_hz();

    // Bridge short gaps that do not cross an exclusion window.
    let runs = runs_of(&bits);
    for pair in runs.windows(2) {
        let (gap_lo, gap_hi) = (pair[0].1, pair[1].0);
        let gap_ms = (gap_hi - gap_lo) as f64 * step_ms;
        if gap_ms < cfg.max_gap_ms - 1e-9 && !excl[gap_lo..gap_hi].iter().any(|&x| x) {
            bits[gap_lo..gap_hi].iter_mut().for_each(|b| *b = true);
        }
    }
    for (a, b) in runs_of(&bits) {
        if ((b - a) as f64 * step_ms) < cfg.min_duration_ms - 1e-9 {
            bits[a..b].iter_mut().for_each(|b| *b = false);
        }
    }
    Mask {
        bits,
        grid_hz: e.grid_hz(),
        t0_s: e.t0_s(),
    }
}

/// Longest true run as a segment; ties go to the earliest run.
pub fn longest_segment(m: &Mask) -> Option<Segment> {
    let mut best: Option<(usize, usize)> = None;
    for (a, b) in m.runs() {
        if best.is_none_or(|(ba, bb)| b - a > bb - ba) {
            best = Some((a, b));
        }
    }
    best.map(|(a, b)| Segment {
        start_s: m.time_at(a),
        end_s: m.time_at(b),
    })
}

/// A mask read from disk, not yet bound to an envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMask {
    pub bits: Vec<bool>,
    pub grid_hz: Option<f64>,
    pub t0_s: Option<f64>,
}

impl LoadedMask {
    /// Bind to an envelope grid, checking length and any declared grid rate.
    pub fn align(&self, e: &Envelope) -> Result<Mask> {
        let m = Mask {
            bits: self.bits.clone(),
            grid_hz: self.grid_hz.unwrap_or(e.grid_hz()),
            t0_s: self.t0_s.unwrap_or(e.t0_s()),
        };
        m.check_aligned(e)?;
        Ok(m)
    }
}

fn bit(v: &Value, i: usize) -> Result<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        _ => Err(Error::InvalidInput(format!("mask entry {i} is {v}, expected 0/1"))),
    }
}

fn bit_array(v: &Value) -> Result<Vec<bool>> {
    match v {
        Value::Array(a) => a.iter().enumerate().map(|(i, x)| bit(x, i)).collect(),
        _ => Err(Error::InvalidInput("mask bits must be an array".into())),
    }
}

fn opt_f64(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| Error::InvalidInput(format!("mask field '{key}' must be a number"))),
    }
}

/// Parse a mask document: a bare 0/1 (or boolean) array, `{bits, grid_hz?}`,
/// or run-length `{runs: [[start, end), ...], len, grid_hz?}`.
pub fn parse_mask(text: &str) -> Result<LoadedMask> {
    let v: Value = serde_json::from_str(text)?;
    let obj = match &v {
        Value::Array(_) => {
            return Ok(LoadedMask {
                bits: bit_array(&v)?,
                grid_hz: None,
                t0_s: None,
            })
        }
        Value::Object(o) => o,
        _ => return Err(Error::InvalidInput("mask must be an array or object".into())),
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "bits" | "runs" | "len" | "grid_hz" | "t0_s") {
            return Err(Error::InvalidInput(format!("unknown mask field '{key}'")));
        }
    }
    let grid_hz = opt_f64(obj, "grid_hz")?;
    if grid_hz.is_some_and(|g| g <= 0.0) {
        return Err(Error::InvalidInput("mask grid_hz must be positive".into()));
    }
    let t0_s = opt_f64(obj, "t0_s")?;
    let bits = match (obj.get("bits"), obj.get("runs")) {
        (Some(b), None) => bit_array(b)?,
        (None, Some(runs)) => {
            let len = obj
                .get("len")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::InvalidInput("run-length mask needs integer 'len'".into()))?;
            let len = usize::try_from(len)
                .ok()
                .filter(|&l| l <= 1 << 24)
                .ok_or_else(|| Error::InvalidInput(format!("mask len {len} too large")))?;
            let mut bits = vec![false; len];
            let runs = runs
                .as_array()
                .ok_or_else(|| Error::InvalidInput("'runs' must be an array".into()))?;
            for (i, r) in runs.iter().enumerate() {
                let pair = r.as_array().filter(|p| p.len() == 2).and_then(|p| {
                    Some((p[0].as_u64()? as usize, p[1].as_u64()? as usize))
                });
                match pair {
                    Some((a, b)) if a <= b && b <= len => {
                        bits[a..b].iter_mut().for_each(|x| *x = true)
                    }
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "run {i} must be [start, end] with start <= end <= {len}"
                        )))
                    }
                }
            }
            bits
        }
        _ => {
            return Err(Error::InvalidInput(
                "mask object needs exactly one of 'bits' or 'runs'".into(),
            ))
        }
    };
    Ok(LoadedMask {
        bits,
        grid_hz,
        t0_s,
    })
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<LoadedMask> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mask(&text)
}
