//! Pipeline configuration: one TOML document with a section per module.
//!
//! ```toml
//! [signal]
//! rms_window_ms = 5.0
//!
//! [hypothesis]
//! parsimony_rho = 0.05
//! ```
//!
//! Unknown keys are rejected. Any key can be overridden with a dotted
//! `section.key=value` assignment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::HypothesisConfig;
use crate::render::DiagramStyle;
use crate::segmentation::SegmentConfig;
use crate::signal::EventConfig;
use crate::synth::SynthConfig;

pub const CONFIG_ENV: &str = "MURMURSCOPE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub rms_window_ms: f64,
    pub grid_hz: f64,
    pub peak_min_prominence: f64,
    pub min_peak_separation_s: f64,
    pub systole_max_s: f64,
    pub window_s: f64,
    pub stride_s: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        let ev = EventConfig::default();
        SignalConfig {
            rms_window_ms: 5.0,
            grid_hz: 100.0,
            peak_min_prominence: ev.peak_min_prominence,
            min_peak_separation_s: ev.min_peak_separation_s,
            systole_max_s: ev.systole_max_s,
            window_s: 1.0,
            stride_s: 0.1,
        }
    }
}

impl SignalConfig {
    pub fn events(&self) -> EventConfig {
        EventConfig {
            peak_min_prominence: self.peak_min_prominence,
            min_peak_separation_s: self.min_peak_separation_s,
            systole_max_s: self.systole_max_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Segment error charged, in seconds², when a murmur segment is missed.
    pub missing_segment_penalty: f64,
    pub write_svg: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            missing_segment_penalty: 0.25,
            write_svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub signal: SignalConfig,
    pub segmentation: SegmentConfig,
    pub hypothesis: HypothesisConfig,
    pub render: DiagramStyle,
    pub synth: SynthConfig,
    pub evaluate: EvaluateConfig,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Load `explicit`, else the file named by `MURMURSCOPE_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Config> {
        let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(p) => Config::load(p),
            None => Ok(Config::default()),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply a `section.key=value` override; the value is read as a TOML
    /// literal, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut doc = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("bad override key '{key}'")));
        }
        let mut node = &mut doc;
        for part in &parts[..parts.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("'{key}' descends into a non-table")))?;
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        node.as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{key}' descends into a non-table")))?
            .insert(parts[parts.len() - 1].to_string(), value);
        let updated: Config = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override '{key}': {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.signal;
        positive("signal.rms_window_ms", s.rms_window_ms)?;
        positive("signal.grid_hz", s.grid_hz)?;
        positive("signal.min_peak_separation_s", s.min_peak_separation_s)?;
        positive("signal.systole_max_s", s.systole_max_s)?;
        positive("signal.window_s", s.window_s)?;
        positive("signal.stride_s", s.stride_s)?;
        if !(s.peak_min_prominence.is_finite() && (0.0..=1.0).contains(&s.peak_min_prominence)) {
            return Err(Error::Config("signal.peak_min_prominence must be in [0, 1]".into()));
        }
        let g = &self.segmentation;
        positive("segmentation.threshold_factor", g.threshold_factor)?;
        for (name, v) in [
            ("segmentation.exclusion_halfwidth_ms", g.exclusion_halfwidth_ms),
            ("segmentation.min_duration_ms", g.min_duration_ms),
            ("segmentation.max_gap_ms", g.max_gap_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        self.hypothesis
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.render.validate()?;
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.evaluate.missing_segment_penalty.is_finite() && self.evaluate.missing_segment_penalty >= 0.0) {
            return Err(Error::Config("evaluate.missing_segment_penalty must be non-negative".into()));
        }
        Ok(())
    }
}
