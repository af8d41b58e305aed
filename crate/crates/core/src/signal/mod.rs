//! Audio ingestion, fixed-length instances, amplitude envelopes and S1/S2
//! heart-event detection.

mod envelope;
mod events;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use envelope::{envelope, window};
pub use events::{classify_phase, detect_s1_s2, EventConfig};
pub use wav::{decode_wav, encode_wav16, read_wav, write_wav, DecodedWav};

/// Mono displacement samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidInput(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Snap every sample onto the signed 16-bit PCM lattice (`q / 32768`).
    pub fn quantized_16bit(&self) -> Waveform {
        let samples = self
            .samples
            .iter()
            .map(|&s| quantize_i16(s) as f64 / 32768.0)
            .collect();
        Waveform {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub(crate) fn slice(&self, start: usize, len: usize) -> Waveform {
        Waveform {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

pub(crate) fn quantize_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Non-negative amplitude series on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvelopeRepr", into = "EnvelopeRepr")]
pub struct Envelope {
    values: Vec<f64>,
    grid_hz: f64,
    t0_s: f64,
}

#[derive(Serialize, Deserialize)]
struct EnvelopeRepr {
    values: Vec<f64>,
    grid_hz: f64,
    t0_s: f64,
}

impl TryFrom<EnvelopeRepr> for Envelope {
    type Error = Error;

    fn try_from(r: EnvelopeRepr) -> Result<Self> {
        Envelope::new(r.values, r.grid_hz, r.t0_s)
    }
}

impl From<Envelope> for EnvelopeRepr {
    fn from(e: Envelope) -> Self {
        EnvelopeRepr {
            values: e.values,
            grid_hz: e.grid_hz,
            t0_s: e.t0_s,
        }
    }
}

impl Envelope {
    pub fn new(values: Vec<f64>, grid_hz: f64, t0_s: f64) -> Result<Self> {
        if !(grid_hz.is_finite() && grid_hz > 0.0) {
            return Err(Error::InvalidInput(format!("envelope grid {grid_hz} Hz")));
        }
        if !t0_s.is_finite() {
            return Err(Error::InvalidInput("envelope offset must be finite".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "envelope value {i} is {}",
                values[i]
            )));
        }
        Ok(Envelope {
            values,
            grid_hz,
            t0_s,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid_hz(&self) -> f64 {
        self.grid_hz
    }

    pub fn t0_s(&self) -> f64 {
        self.t0_s
    }

    pub fn step_s(&self) -> f64 {
        1.0 / self.grid_hz
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.grid_hz
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0_s + k as f64 / self.grid_hz
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| self.time_at(k)).collect()
    }

    /// Index of the grid point nearest to `t`, clamped to the series.
    pub fn nearest_index(&self, t: f64) -> usize {
        if self.values.is_empty() {
            return 0;
        }
        let k = ((t - self.t0_s) * self.grid_hz).round();
        k.clamp(0.0, (self.values.len() - 1) as f64) as usize
    }

    /// Linear interpolation between grid points, held constant past the ends.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.values.len();
        match n {
            0 => 0.0,
            1 => self.values[0],
            _ => {
                let x = ((t - self.t0_s) * self.grid_hz).clamp(0.0, (n - 1) as f64);
                let i = (x.floor() as usize).min(n - 2);
                let frac = x - i as f64;
                self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
            }
        }
    }
}

/// Closed-open time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

impl Interval {
    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

/// Detected S1/S2 heart sounds and the phase intervals they bound.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeartEvents {
    pub s1_time_s: Option<f64>,
    pub s2_time_s: Option<f64>,
    pub systole_interval: Option<Interval>,
    pub diastole_interval: Option<Interval>,
}

impl HeartEvents {
    pub fn event_times(&self) -> Vec<f64> {
        self.s1_time_s.iter().chain(&self.s2_time_s).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Systolic,
    Diastolic,
    Unknown,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Systolic => "systolic",
            Phase::Diastolic => "diastolic",
            Phase::Unknown => "unknown",
        })
    }
}
