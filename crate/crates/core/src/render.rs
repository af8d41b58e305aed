//! Murmur-diagram SVGs: PCG trace, envelope, S1/S2 bars and the fitted
//! murmur shape filled red (systolic) or dark red (diastolic).
//!
//! Output is plain SVG 1.1 with coordinates printed at fixed precision, so
//! the same report and style always give the same bytes.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::CounterfactualPayload;
use crate::hypothesis::FittedHypothesis;
use crate::report::{CaseReport, WaveformTrace};
use crate::shapes::{vertices, Diagnosis, ShapeParams};
use crate::signal::{Envelope, HeartEvents, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagramStyle {
    pub width_px: u32,
    /// Height of one panel; contrastive diagrams stack five.
    pub height_px: u32,
    pub systolic_fill: String,
    pub diastolic_fill: String,
    pub s1s2_fill: String,
    pub trace_stroke: String,
    pub envelope_stroke: String,
    pub delta_up_fill: String,
    pub delta_down_fill: String,
    pub background: String,
    pub text_fill: String,
    pub show_envelope: bool,
    pub show_waveform: bool,
}

impl Default for DiagramStyle {
    fn default() -> Self {
        DiagramStyle {
            width_px: 900,
            height_px: 300,
            systolic_fill: "#d62728".into(),
            diastolic_fill: "#8b0000".into(),
            s1s2_fill: "#7f7f7f".into(),
            trace_stroke: "#9a9a9a".into(),
            envelope_stroke: "#1f1f1f".into(),
            delta_up_fill: "#2ca02c".into(),
            delta_down_fill: "#1f77b4".into(),
            background: "#ffffff".into(),
            text_fill: "#000000".into(),
            show_envelope: true,
            show_waveform: true,
        }
    }
}

const NAMED_COLORS: &[&str] = &[
    "none", "black", "white", "red", "darkred", "green", "blue", "gray", "grey", "orange", "yellow", "purple",
];

fn valid_color(c: &str) -> bool {
    if let Some(hex) = c.strip_prefix('#') {
        matches!(hex.len(), 3 | 6) && hex.bytes().all(|b| b.is_ascii_hexdigit())
    } else {
        NAMED_COLORS.contains(&c)
    }
}

impl DiagramStyle {
    pub fn validate(&self) -> Result<()> {
        if self.width_px < 100 || self.height_px < 60 {
            return Err(Error::Config(format!(
                "render size {}x{} px is too small (min 100x60)",
                self.width_px, self.height_px
            )));
        }
        let colors = [
            ("systolic_fill", &self.systolic_fill),
            ("diastolic_fill", &self.diastolic_fill),
            ("s1s2_fill", &self.s1s2_fill),
            ("trace_stroke", &self.trace_stroke),
            ("envelope_stroke", &self.envelope_stroke),
            ("delta_up_fill", &self.delta_up_fill),
            ("delta_down_fill", &self.delta_down_fill),
            ("background", &self.background),
            ("text_fill", &self.text_fill),
        ];
        for (key, c) in colors {
            if !valid_color(c) {
                return Err(Error::Config(format!("render.{key}: invalid color {c:?}")));
            }
        }
        Ok(())
    }

    pub fn murmur_fill(&self, y: Diagnosis) -> &str {
        match y.murmur_phase() {
            Some(Phase::Diastolic) => &self.diastolic_fill,
            _ => &self.systolic_fill,
        }
    }
}

/// Fixed two-decimal coordinates; never prints `-0.00`.
fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" { "0.00".into() } else { s }
}

const MARGIN_LEFT: f64 = 40.0;
const MARGIN_RIGHT: f64 = 12.0;
const MARGIN_TOP: f64 = 26.0;
const MARGIN_BOTTOM: f64 = 18.0;
/// Half-width of an S1/S2 bar.
const EVENT_HALF_WIDTH_S: f64 = 0.015;

/// Maps time and amplitude into one panel.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub t0: f64,
    pub t1: f64,
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
    pub amp_max: f64,
}

impl Frame {
    fn new(style: &DiagramStyle, t0: f64, t1: f64, amp_max: f64, y_offset: f64) -> Frame {
        Frame {
            t0,
            t1: if t1 > t0 { t1 } else { t0 + 1.0 },
            left: MARGIN_LEFT,
            right: style.width_px as f64 - MARGIN_RIGHT,
            top: y_offset + MARGIN_TOP,
            bottom: y_offset + style.height_px as f64 - MARGIN_BOTTOM,
            amp_max: if amp_max > 0.0 { amp_max } else { 1.0 },
        }
    }

    pub fn x(&self, t: f64) -> f64 {
        self.left + (t - self.t0) / (self.t1 - self.t0) * (self.right - self.left)
    }

    pub fn y(&self, a: f64) -> f64 {
        self.bottom - a / self.amp_max * (self.bottom - self.top)
    }

    fn mid(&self) -> f64 {
        0.5 * (self.top + self.bottom)
    }
}

fn header(out: &mut String, style: &DiagramStyle, height: u32, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{height}" viewBox="0 0 {w} {height}">"#,
        w = style.width_px
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(
        out,
        r#"<rect class="background" x="0" y="0" width="{}" height="{height}" fill="{}"/>"#,
        style.width_px, style.background
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn polyline(out: &mut String, class: &str, stroke: &str, width: f64, pts: impl Iterator<Item = (f64, f64)>) {
    let mut d = String::new();
    for (i, (x, y)) in pts.enumerate() {
        if i > 0 {
            d.push(' ');
        }
        d.push_str(&num(x));
        d.push(',');
        d.push_str(&num(y));
    }
    if d.is_empty() {
        return;
    }
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" fill="none" stroke="{stroke}" stroke-width="{}" points="{d}"/>"#,
        num(width)
    );
}

fn polygon(out: &mut String, class: &str, fill: &str, opacity: f64, pts: &[(f64, f64)]) {
    let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", num(x), num(y))).collect();
    let _ = writeln!(
        out,
        r#"<polygon class="{class}" fill="{fill}" fill-opacity="{}" stroke="none" points="{}"/>"#,
        num(opacity),
        d.join(" ")
    );
}

fn text(out: &mut String, class: &str, fill: &str, x: f64, y: f64, s: &str) {
    let _ = writeln!(
        out,
        r#"<text class="{class}" x="{}" y="{}" font-family="sans-serif" font-size="13" fill="{fill}">{}</text>"#,
        num(x),
        num(y),
        escape(s)
    );
}

fn draw_axes(out: &mut String, f: &Frame, style: &DiagramStyle) {
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="{c}" stroke-width="1"/>"#,
        l = num(f.left),
        r = num(f.right),
        b = num(f.bottom),
        c = style.text_fill
    );
}

fn draw_events(out: &mut String, f: &Frame, ev: &HeartEvents, style: &DiagramStyle) {
    let marks = [("S1", ev.s1_time_s), ("S2", ev.s2_time_s)];
    for (label, t) in marks {
        let Some(t) = t else { continue };
        let x0 = f.x((t - EVENT_HALF_WIDTH_S).max(f.t0));
        let x1 = f.x((t + EVENT_HALF_WIDTH_S).min(f.t1));
        let _ = writeln!(
            out,
            r#"<rect class="event {}" x="{}" y="{}" width="{}" height="{}" fill="{}" fill-opacity="0.55"/>"#,
            label.to_lowercase(),
            num(x0),
            num(f.top),
            num(x1 - x0),
            num(f.bottom - f.top),
            style.s1s2_fill
        );
        text(out, "event-label", &style.text_fill, x0, f.top - 4.0, label);
    }
}

fn draw_trace(out: &mut String, f: &Frame, trace: &WaveformTrace, style: &DiagramStyle) {
    if !style.show_waveform || trace.samples.is_empty() {
        return;
    }
    let peak = trace.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let scale = if peak > 0.0 { 0.5 * (f.bottom - f.top) / peak } else { 0.0 };
    let mid = f.mid();
    let pts = trace
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (f.x(f.t0 + i as f64 / trace.rate_hz), mid - s * scale));
    polyline(out, "waveform", &style.trace_stroke, 0.6, pts);
}

fn draw_envelope(out: &mut String, f: &Frame, e: &Envelope, style: &DiagramStyle) {
    if !style.show_envelope {
        return;
    }
    let pts = e.values().iter().enumerate().map(|(k, &v)| (f.x(e.time_at(k)), f.y(v)));
    polyline(out, "envelope", &style.envelope_stroke, 1.2, pts);
}

/// Closed polygon under a shape, from the baseline at `tau_1` to the
/// baseline at `tau_L`.
pub fn shape_polygon(f: &Frame, p: &ShapeParams) -> Vec<(f64, f64)> {
    let vs = vertices(p);
    let (Some(first), Some(last)) = (vs.first(), vs.last()) else {
        return Vec::new();
    };
    let mut pts = Vec::with_capacity(vs.len() + 2);
    pts.push((f.x(first.0), f.y(0.0)));
    pts.extend(vs.iter().map(|&(t, a)| (f.x(t), f.y(a))));
    pts.push((f.x(last.0), f.y(0.0)));
    pts
}

fn shape_peak(h: &FittedHypothesis) -> f64 {
    h.params
        .as_ref()
        .map_or(0.0, |p| vertices(p).iter().fold(0.0, |m, v| m.max(v.1)))
}

fn time_span(e: &Envelope) -> (f64, f64) {
    (e.t0_s(), e.t0_s() + e.duration_s())
}

fn panel(
    out: &mut String,
    report: &CaseReport,
    h: Option<&FittedHypothesis>,
    style: &DiagramStyle,
    y_offset: f64,
    amp_max: f64,
) -> Frame {
    let (t0, t1) = time_span(&report.envelope);
    let f = Frame::new(style, t0, t1, amp_max, y_offset);
    draw_axes(out, &f, style);
    draw_trace(out, &f, &report.trace, style);
    draw_events(out, &f, &report.heart_events, style);
    if let Some(p) = h.and_then(|h| h.params.as_ref()) {
        let pts = shape_polygon(&f, p);
        if !pts.is_empty() {
            polygon(out, "shape", style.murmur_fill(p.diagnosis), 0.6, &pts);
        }
    }
    draw_envelope(out, &f, &report.envelope, style);
    f
}

fn fmt_d(d: Option<f64>) -> String {
    d.map_or_else(|| "n/a".to_string(), |d| format!("{d:.3e}"))
}

/// The resolved diagnosis' shape over the PCG; N gets no polygon.
pub fn render_abductive(report: &CaseReport, style: &DiagramStyle) -> String {
    let mut out = String::new();
    header(&mut out, style, style.height_px, &format!("{} abductive", report.instance_id));
    let h = (report.resolved != Diagnosis::N).then(|| report.resolved_hypothesis());
    let amp = h.map_or(0.0, shape_peak).max(1.0);
    let f = panel(&mut out, report, h, style, 0.0, amp);
    let label = match h {
        Some(h) => format!("{} ({}) d={}", report.resolved, report.phase, fmt_d(h.lack_of_fit)),
        None => format!("{} (no murmur)", report.resolved),
    };
    text(&mut out, "label", &style.text_fill, f.left, 16.0, &label);
    out.push_str("</svg>\n");
    out
}

/// One panel per diagnosis in ranking order; phase-incompatible panels get
/// a dashed frame and a note.
pub fn render_contrastive(report: &CaseReport, style: &DiagramStyle) -> String {
    let n = report.ranking.order.len() as u32;
    let mut out = String::new();
    header(&mut out, style, style.height_px * n, &format!("{} contrastive", report.instance_id));
    let amp = report.hypotheses.iter().map(shape_peak).fold(1.0, f64::max);
    for (k, &y) in report.ranking.order.iter().enumerate() {
        let h = report.hypothesis(y);
        let y_off = k as f64 * style.height_px as f64;
        let _ = writeln!(out, r#"<g class="panel" data-diagnosis="{y}">"#);
        let f = panel(&mut out, report, Some(h), style, y_off, amp);
        let mut label = format!("{y} d={}", fmt_d(h.lack_of_fit));
        if y == report.resolved {
            label.push_str(" [resolved]");
        }
        text(&mut out, "label", &style.text_fill, f.left, y_off + 16.0, &label);
        if !h.phase_compatible {
            let _ = writeln!(
                out,
                r#"<rect class="incompatible" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{}" stroke-width="2" stroke-dasharray="6,4"/>"#,
                num(f.left),
                num(f.top),
                num(f.right - f.left),
                num(f.bottom - f.top),
                style.systolic_fill
            );
            let wants = y.murmur_phase().map_or(String::new(), |p| p.to_string());
            text(
                &mut out,
                "incompatible-note",
                &style.systolic_fill,
                f.right - 300.0,
                y_off + 16.0,
                &format!("phase-incompatible: {y} is {wants}, murmur is {}", report.phase),
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// Envelope with the delta to the target shape shaded: above the envelope
/// where it should be louder, below where it should be quieter.
pub fn render_counterfactual(x: &CounterfactualPayload, style: &DiagramStyle) -> String {
    let mut out = String::new();
    header(&mut out, style, style.height_px, &format!("counterfactual {}", x.target));
    let e = &x.envelope;
    let peak = e
        .values()
        .iter()
        .zip(&x.delta)
        .fold(1.0f64, |m, (v, d)| m.max(v + d));
    let (t0, t1) = time_span(e);
    let f = Frame::new(style, t0, t1, peak, 0.0);
    draw_axes(&mut out, &f, style);
    if !x.is_zero {
        let step = e.step_s();
        let mut k = 0;
        while k < x.delta.len() {
            let sign = x.delta[k].signum();
            if !x.mask[k] || x.delta[k] == 0.0 {
                k += 1;
                continue;
            }
            let start = k;
            while k < x.delta.len() && x.mask[k] && x.delta[k] != 0.0 && x.delta[k].signum() == sign {
                k += 1;
            }
            let mut pts = Vec::with_capacity(4 * (k - start));
            for j in start..k {
                let t = e.time_at(j);
                let target = e.values()[j] + x.delta[j];
                pts.push((f.x(t), f.y(target)));
                pts.push((f.x(t + step), f.y(target)));
            }
            for j in (start..k).rev() {
                let t = e.time_at(j);
                pts.push((f.x(t + step), f.y(e.values()[j])));
                pts.push((f.x(t), f.y(e.values()[j])));
            }
            let (class, fill) = if sign > 0.0 {
                ("delta-up", &style.delta_up_fill)
            } else {
                ("delta-down", &style.delta_down_fill)
            };
            polygon(&mut out, class, fill, 0.7, &pts);
        }
    }
    let outline = shape_polygon(&f, &x.target_params);
    if !outline.is_empty() {
        let d: Vec<String> = outline.iter().map(|&(a, b)| format!("{},{}", num(a), num(b))).collect();
        let _ = writeln!(
            out,
            r#"<polygon class="target-shape" fill="none" stroke="{}" stroke-width="1.5" stroke-dasharray="4,3" points="{}"/>"#,
            style.murmur_fill(x.target),
            d.join(" ")
        );
    }
    let env_pts = e.values().iter().enumerate().map(|(k, &v)| (f.x(e.time_at(k)), f.y(v)));
    polyline(&mut out, "envelope", &style.envelope_stroke, 1.2, env_pts);
    let label = if x.is_zero {
        format!("{} -> {}: no change needed", x.resolved, x.target)
    } else {
        format!("{} -> {}: green louder, blue quieter", x.resolved, x.target)
    };
    text(&mut out, "label", &style.text_fill, f.left, 16.0, &label);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::explain::{counterfactual, Explanation};
    use crate::report::{analyze_instance, AnalysisInput};
    use crate::synth::generate;

    fn report(y: Diagnosis, seed: u64) -> CaseReport {
        let c = generate(y, None, None, seed).unwrap();
        analyze_instance(&AnalysisInput::new(&c.waveform, format!("{y}")), &Config::default()).unwrap()
    }

    fn count(svg: &str, needle: &str) -> usize {
        svg.matches(needle).count()
    }

    #[test]
    fn style_validation() {
        assert!(DiagramStyle::default().validate().is_ok());
        let mut s = DiagramStyle::default();
        s.systolic_fill = "#12345".into();
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = DiagramStyle::default();
        s.width_px = 0;
        assert!(s.validate().is_err());
        s = DiagramStyle::default();
        s.background = "black".into();
        assert!(s.validate().is_ok());
    }

    #[test]
    fn abductive_polygons() {
        let r = report(Diagnosis::AS, 1);
        let svg = render_abductive(&r, &DiagramStyle::default());
        assert_eq!(count(&svg, r#"class="shape""#), 1);
        assert!(svg.contains("#d62728"));
        assert_eq!(count(&svg, r#"class="event s"#), 2);
        let n = report(Diagnosis::N, 1);
        let svg = render_abductive(&n, &DiagramStyle::default());
        assert_eq!(count(&svg, r#"class="shape""#), 0);
        assert!(svg.contains("no murmur"));
        let ms = report(Diagnosis::MS, 2);
        assert!(render_abductive(&ms, &DiagramStyle::default()).contains("#8b0000"));
    }

    #[test]
    fn polygon_extent_matches_breakpoints() {
        let r = report(Diagnosis::MVP, 3);
        let style = DiagramStyle::default();
        let p = r.resolved_hypothesis().params.clone().unwrap();
        let (t0, t1) = time_span(&r.envelope);
        let f = Frame::new(&style, t0, t1, 1.0, 0.0);
        let pts = shape_polygon(&f, &p);
        let xs: Vec<f64> = pts.iter().map(|q| q.0).collect();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, f.x(p.tau[0]));
        assert_eq!(hi, f.x(*p.tau.last().unwrap()));
    }

    #[test]
    fn contrastive_has_five_panels() {
        let r = report(Diagnosis::MVP, 3);
        let svg = render_contrastive(&r, &DiagramStyle::default());
        assert_eq!(count(&svg, r#"<g class="panel""#), 5);
        assert_eq!(count(&svg, r#"class="incompatible""#), 1);
        assert!(svg.contains(r#"data-diagnosis="MS""#));
    }

    #[test]
    fn counterfactual_shading() {
        let r = report(Diagnosis::MVP, 4);
        let Explanation::Counterfactual(x) = counterfactual(&r, Diagnosis::AS).unwrap() else { panic!() };
        let svg = render_counterfactual(&x, &DiagramStyle::default());
        assert!(count(&svg, "delta-up") + count(&svg, "delta-down") > 0);
        let mut zero = (*x).clone();
        zero.delta.iter_mut().for_each(|d| *d = 0.0);
        zero.is_zero = true;
        let svg = render_counterfactual(&zero, &DiagramStyle::default());
        assert_eq!(count(&svg, "delta-up") + count(&svg, "delta-down"), 0);
    }

    #[test]
    fn rendering_is_deterministic() {
        let r = report(Diagnosis::AS, 9);
        let s = DiagramStyle::default();
        assert_eq!(render_abductive(&r, &s), render_abductive(&r, &s));
        assert_eq!(render_contrastive(&r, &s), render_contrastive(&r, &s));
        assert!(!render_abductive(&r, &s).contains("-0.00"));
    }

    #[test]
    fn num_formatting() {
        assert_eq!(num(-0.0001), "0.00");
        assert_eq!(num(1.005), "1.00");
        assert_eq!(num(12.3456), "12.35");
    }
}
