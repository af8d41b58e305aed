//! End-to-end analysis of one instance into a [`CaseReport`].

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::explain::{abductive, Explanation};
use crate::hypothesis::{fit_all, rank_hypotheses, resolve_diagnosis, FittedHypothesis, HypothesisRanking, MurmurEvidence};
use crate::segmentation::{background_rms, longest_segment, segment_murmur, LoadedMask, Mask, Segment};
use crate::shapes::Diagnosis;
use crate::signal::{classify_phase, detect_s1_s2, envelope, window, Envelope, HeartEvents, Phase, Waveform};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Waveform traces kept in reports are decimated to at most this many points.
pub const MAX_TRACE_POINTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    Segmenter,
    Loaded,
}

/// Decimated waveform kept for rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformTrace {
    pub rate_hz: f64,
    pub samples: Vec<f64>,
}

impl WaveformTrace {
    pub fn from_waveform(w: &Waveform) -> WaveformTrace {
        let stride = w.len().div_ceil(MAX_TRACE_POINTS).max(1);
        WaveformTrace {
            rate_hz: w.sample_rate_hz() as f64 / stride as f64,
            samples: w.samples().iter().step_by(stride).copied().collect(),
        }
    }
}

/// Full analysis of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub schema_version: u32,
    pub instance_id: String,
    pub source_path: Option<String>,
    pub window_offset_s: f64,
    pub trace: WaveformTrace,
    pub envelope: Envelope,
    /// Murmur mask after the longest-segment rule.
    pub mask: Mask,
    pub mask_source: MaskSource,
    /// Number of runs in the mask before the longest one was kept.
    pub raw_mask_runs: usize,
    pub segment: Option<Segment>,
    pub heart_events: HeartEvents,
    pub phase: Phase,
    pub evidence: MurmurEvidence,
    pub hypotheses: Vec<FittedHypothesis>,
    pub ranking: HypothesisRanking,
    pub resolved: Diagnosis,
    pub explanations: Vec<Explanation>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CaseReport {
    pub fn hypothesis(&self, y: Diagnosis) -> &FittedHypothesis {
        self.hypotheses
            .iter()
            .find(|h| h.diagnosis == y)
            .expect("reports carry all five hypotheses")
    }

    pub fn resolved_hypothesis(&self) -> &FittedHypothesis {
        self.hypothesis(self.resolved)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parse a report written by [`CaseReport::to_json`] and check that its
    /// parts fit together, so downstream rendering can index freely.
    pub fn from_json(text: &str) -> Result<CaseReport> {
        let r: CaseReport = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("report {}: {m}", self.instance_id)));
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return bad(format!("schema {} (expected {REPORT_SCHEMA_VERSION})", self.schema_version));
        }
        self.mask.check_aligned(&self.envelope)?;
        let n = self.envelope.len();
        for y in Diagnosis::ALL {
            let count = self.hypotheses.iter().filter(|h| h.diagnosis == y).count();
            if count != 1 {
                return bad(format!("{count} hypotheses for {y}"));
            }
            if !self.ranking.order.contains(&y) {
                return bad(format!("ranking omits {y}"));
            }
        }
        if self.hypotheses.len() != Diagnosis::ALL.len() || self.ranking.order.len() != Diagnosis::ALL.len() {
            return bad("expected exactly five hypotheses".into());
        }
        for h in &self.hypotheses {
            for p in [&h.params, &h.init_params].into_iter().flatten() {
                if p.diagnosis != h.diagnosis {
                    return bad(format!("{} hypothesis carries {} parameters", h.diagnosis, p.diagnosis));
                }
                p.check()?;
            }
            if let Some(s) = &h.shape {
                if s.values.len() != n || s.diagnosis != h.diagnosis {
                    return bad(format!("{} shape has {} points, envelope {n}", h.diagnosis, s.values.len()));
                }
            }
        }
        if self.ranking.resolved != self.resolved {
            return bad("ranking and report disagree on the diagnosis".into());
        }
        for x in &self.explanations {
            if let Explanation::Counterfactual(c) = x {
                if c.mask.len() != c.envelope.len() || c.delta.len() != c.envelope.len() {
                    return bad("counterfactual series lengths differ".into());
                }
                c.target_params.check()?;
            }
        }
        Ok(())
    }
}

/// One instance to analyze.
#[derive(Debug, Clone)]
pub struct AnalysisInput<'a> {
    pub waveform: &'a Waveform,
    pub instance_id: String,
    pub source_path: Option<String>,
    pub window_offset_s: f64,
    /// Externally supplied segmentation, replacing the segmenter.
    pub mask: Option<&'a LoadedMask>,
    /// Optional class probabilities blended into the scores.
    pub external_probs: Option<&'a BTreeMap<Diagnosis, f64>>,
}

impl<'a> AnalysisInput<'a> {
    pub fn new(waveform: &'a Waveform, instance_id: impl Into<String>) -> Self {
        AnalysisInput {
            waveform,
            instance_id: instance_id.into(),
            source_path: None,
            window_offset_s: 0.0,
            mask: None,
            external_probs: None,
        }
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Run envelope extraction, heart-sound detection, segmentation, fitting,
/// ranking and the abductive explanation on one instance.
pub fn analyze_instance(input: &AnalysisInput<'_>, cfg: &Config) -> Result<CaseReport> {
    let mut timings = BTreeMap::new();
    let mut warnings = Vec::new();
    let w = input.waveform;

    let t = Instant::now();
    let env = envelope(w, cfg.signal.rms_window_ms, cfg.signal.grid_hz)?;
    timings.insert("envelope".to_string(), elapsed_ms(t));
    if env.values().iter().all(|&v| v == 0.0) {
        warnings.push("silent instance".to_string());
    }

    let t = Instant::now();
    let events = if env.is_empty() {
        HeartEvents::default()
    } else {
        detect_s1_s2(&env, &cfg.signal.events())
    };
    if events.s1_time_s.is_none() {
        warnings.push("S1/S2 not detected; heart phase unknown".to_string());
    }
    timings.insert("events".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let (raw_mask, mask_source) = match input.mask {
        Some(m) => (m.align(&env)?, MaskSource::Loaded),
        None => (segment_murmur(&env, &events, &cfg.segmentation), MaskSource::Segmenter),
    };
    let raw_mask_runs = raw_mask.runs().len();
    let segment = longest_segment(&raw_mask);
    let mask = match &segment {
        Some(s) => Mask::from_segment(&env, s),
        None => Mask::empty_for(&env),
    };
    let phase = segment
        .as_ref()
        .map_or(Phase::Unknown, |s| classify_phase(s, &events));
    timings.insert("segmentation".to_string(), elapsed_ms(t));

    let bg = background_rms(&env);
    let n_in = mask.count();
    let segment_rms = if n_in > 0 {
        (mask.indices().map(|k| env.values()[k].powi(2)).sum::<f64>() / n_in as f64).sqrt()
    } else {
        0.0
    };
    let window_samples = (cfg.signal.rms_window_ms * w.sample_rate_hz() as f64 / 1000.0)
        .round()
        .max(1.0);
    let evidence = MurmurEvidence {
        segment_present: segment.is_some(),
        segment_rms,
        background_rms: bg,
        noise_variance: bg * bg / window_samples,
    };

    let t = Instant::now();
    let hypotheses = fit_all(&env, segment.as_ref(), phase, &cfg.hypothesis)?;
    timings.insert("fit".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let ranking = rank_hypotheses(&hypotheses, phase, &evidence, &cfg.hypothesis)?;
    timings.insert("rank".to_string(), elapsed_ms(t));
    for h in &hypotheses {
        warnings.extend(h.warnings.iter().filter(|_| h.evaluated()).cloned());
    }

    let mut report = CaseReport {
        schema_version: REPORT_SCHEMA_VERSION,
        instance_id: input.instance_id.clone(),
        source_path: input.source_path.clone(),
        window_offset_s: input.window_offset_s,
        trace: WaveformTrace::from_waveform(w),
        envelope: env,
        mask,
        mask_source,
        raw_mask_runs,
        segment,
        heart_events: events,
        phase,
        evidence,
        resolved: ranking.resolved,
        hypotheses,
        ranking,
        explanations: Vec::new(),
        timings_ms: timings,
        warnings,
    };
    let expl = abductive(&report);
    report.explanations.push(expl);
    if let Some(ext) = input.external_probs {
        apply_external_probs(&mut report, ext, cfg.hypothesis.blend_weight)?;
    }
    Ok(report)
}

/// Blend external class probabilities into a report's scores and move the
/// decision if the blend prefers another diagnosis.
pub fn apply_external_probs(report: &mut CaseReport, ext: &BTreeMap<Diagnosis, f64>, weight: f64) -> Result<()> {
    let (y, scores) = resolve_diagnosis(&report.ranking, Some(ext), weight)?;
    let ranking = &mut report.ranking;
    if y != ranking.resolved {
        ranking.reason = format!("{}; external probabilities moved the decision to {y}", ranking.reason);
        ranking.order.retain(|&d| d != y);
        ranking.order.insert(0, y);
    }
    ranking.resolved = y;
    ranking.scores = scores;
    report.resolved = y;
    report.explanations.retain(|e| !matches!(e, Explanation::Abductive(_)));
    let expl = abductive(report);
    report.explanations.insert(0, expl);
    Ok(())
}

/// Window a recording and analyze every instance; ids are `<stem>_w<k>`.
///
/// A recording shorter than one window is analyzed as a single instance.
pub fn analyze_recording(
    w: &Waveform,
    stem: &str,
    source_path: Option<&str>,
    mask: Option<&LoadedMask>,
    cfg: &Config,
) -> Result<Vec<CaseReport>> {
    let mut windows = window(w, cfg.signal.window_s, cfg.signal.stride_s)?;
    let short = windows.is_empty() && !w.is_empty();
    if short {
        windows.push(w.clone());
    }
    let stride = (cfg.signal.stride_s * w.sample_rate_hz() as f64).round() / w.sample_rate_hz() as f64;
    windows
        .iter()
        .enumerate()
        .map(|(k, inst)| {
            let input = AnalysisInput {
                waveform: inst,
                instance_id: format!("{stem}_w{k}"),
                source_path: source_path.map(str::to_string),
                window_offset_s: k as f64 * stride,
                mask,
                external_probs: None,
            };
            let mut r = analyze_instance(&input, cfg)?;
            if short {
                r.warnings.push(format!(
                    "recording of {:.3} s is shorter than one {} s window; analyzed whole",
                    w.duration_s(),
                    cfg.signal.window_s
                ));
            }
            Ok(r)
        })
        .collect()
}
