//! Synthetic ground-truth PCG instances for every diagnosis family.
//!
//! Each case is a one-second instance: two heart-sound bumps at sampled
//! positions, the murmur shape of the requested family inside the correct
//! phase interval, and a carrier tone modulated by that envelope. Every
//! random draw comes from a seed, so a case is reproducible from
//! `(diagnosis, seed, snr_db)` alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::Mask;
use crate::shapes::{eval_unchecked, param_count, validate_params, Diagnosis, ShapeParams};
use crate::signal::{write_wav, Envelope, HeartEvents, Interval, Phase, Waveform};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Distance kept between a heart sound and the murmur, matching the default
/// segmentation exclusion window.
const EVENT_GUARD_S: f64 = 0.06;
const BUMP_FLAT_S: f64 = 0.005;
const BUMP_SIGMA_S: f64 = 0.008;
const CARRIER_HZ: [f64; 2] = [200.0, 400.0];
const PEAK_LEVEL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    /// Grid onto which heart sounds and mask edges are snapped.
    pub grid_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate_hz: 8000,
            duration_s: 1.0,
            grid_hz: 100.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 || !(self.duration_s.is_finite() && self.duration_s >= 0.5) {
            return Err(Error::Validation(
                "synth needs a positive sample rate and at least 0.5 s".into(),
            ));
        }
        if !(self.grid_hz.is_finite() && self.grid_hz > 0.0 && self.grid_hz <= self.sample_rate_hz as f64) {
            return Err(Error::Validation(format!("synth grid {} Hz", self.grid_hz)));
        }
        Ok(())
    }
}

/// Optional fixed values replacing sampled ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOverrides {
    pub tau: Option<Vec<f64>>,
    pub pi: Option<Vec<f64>>,
    pub s1_time_s: Option<f64>,
    pub s2_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub waveform: Waveform,
    /// Noise-free envelope on the analysis grid, peak 1.
    pub true_envelope: Envelope,
    pub true_mask: Mask,
    pub true_params: ShapeParams,
    pub true_diagnosis: Diagnosis,
    pub true_phase: Phase,
    pub true_events: HeartEvents,
    pub seed: u64,
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    /// SNR measured on the generated signal before quantization.
    pub measured_snr_db: Option<f64>,
}

fn snap(t: f64, grid: f64) -> f64 {
    (t * grid).round() / grid
}

/// Smallest half-grid point `(k + 1/2) / grid` at or after `t`.
fn half_grid_ceil(t: f64, grid: f64) -> f64 {
    ((t * grid - 0.5).ceil() + 0.5) / grid
}

/// Largest half-grid point at or before `t`.
fn half_grid_floor(t: f64, grid: f64) -> f64 {
    ((t * grid - 0.5).floor() + 0.5) / grid
}

/// Flat-topped heart-sound bump: 1 within `BUMP_FLAT_S` of the center,
/// Gaussian flanks, exactly 0 beyond four sigma.
fn bump(t: f64, center: f64) -> f64 {
    let d = (t - center).abs() - BUMP_FLAT_S;
    if d <= 0.0 {
        1.0
    } else if d > 4.0 * BUMP_SIGMA_S {
        0.0
    } else {
        (-d * d / (2.0 * BUMP_SIGMA_S * BUMP_SIGMA_S)).exp()
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn sample_params(y: Diagnosis, lo: f64, hi: f64, grid: f64, rng: &mut ChaCha8Rng) -> ShapeParams {
    let mut u = |a: f64, b: f64| rng.random_range(a..b);
    let len = hi - lo;
    let occ = u(0.6, 0.95) * len;
    let start = lo + u(0.0, len - occ);
    let t1 = half_grid_ceil(start, grid);
    let tl = half_grid_floor(start + occ, grid);
    let pi0 = u(0.05, 0.3);
    // Interior breakpoints also sit on the half-grid lattice, so no analysis
    // window straddles a corner (which would round off short clicks).
    let step = 1.0 / grid;
    let steps = |d: f64| (d * grid).round().max(1.0) * step;
    let steps_floor = |d: f64| (d * grid + 1e-9).floor().max(1.0) * step;
    let (tau, pi) = match y {
        Diagnosis::N => (vec![], vec![]),
        Diagnosis::MR => (vec![t1, tl], vec![pi0]),
        Diagnosis::AS => {
            let t2 = t1 + steps(u(0.35, 0.65) * (tl - t1));
            let peak = pi0 + u(0.15, 0.5);
            let end = u(0.0, 0.8) * pi0;
            (vec![t1, t2, tl], vec![pi0, (peak - pi0) / (t2 - t1), (peak - end) / (tl - t2)])
        }
        Diagnosis::MVP => {
            let d12 = steps(u(0.03, 0.06)).min(steps_floor((tl - t1 - 0.04) / 2.0));
            let h = u(0.1, 0.3);
            (vec![t1, t1 + d12, t1 + 2.0 * d12, tl], vec![pi0, h / d12])
        }
        Diagnosis::MS => {
            let d12 = steps(u(0.04, 0.08));
            let t3 = t1 + 2.0 * d12;
            let h = u(0.1, 0.3);
            let d4 = steps(u(0.06, 0.14)).min(steps_floor(tl - t3 - 0.03));
            let rise = u(0.1, 0.3);
            (vec![t1, t1 + d12, t3, tl - d4, tl], vec![pi0, h / d12, rise / d4])
        }
    };
    ShapeParams {
        diagnosis: y,
        tau,
        pi,
    }
}

/// Generate one case with the default layout.
pub fn generate(y: Diagnosis, overrides: Option<&SynthOverrides>, snr_db: Option<f64>, seed: u64) -> Result<SyntheticCase> {
    generate_with(&SynthConfig::default(), y, overrides, snr_db, seed)
}

pub fn generate_with(
    cfg: &SynthConfig,
    y: Diagnosis,
    overrides: Option<&SynthOverrides>,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<SyntheticCase> {
    cfg.validate()?;
    if snr_db.is_some_and(|s| !s.is_finite()) {
        return Err(Error::Validation("snr_db must be finite (use None for noiseless)".into()));
    }
    let ov = overrides.cloned().unwrap_or_default();
    let g = cfg.grid_hz;
    let dur = cfg.duration_s;
    let mut prng = rng_stream(seed, 0);

    // Phase layout: MS sits in diastole (S2 first), everything else in systole.
    let diastolic = y == Diagnosis::MS;
    let (first, gap) = if diastolic {
        (prng.random_range(0.08..0.15), prng.random_range(0.50..0.75))
    } else {
        (prng.random_range(0.08..0.20), prng.random_range(0.25..0.40))
    };
    let first = snap(first, g);
    let second = snap(first + gap, g);
    let (mut s1, mut s2) = if diastolic { (second, first) } else { (first, second) };
    if let Some(t) = ov.s1_time_s {
        s1 = t;
    }
    if let Some(t) = ov.s2_time_s {
        s2 = t;
    }
    for (name, t) in [("s1_time_s", s1), ("s2_time_s", s2)] {
        if !(t.is_finite() && 0.0 <= t && t < dur) {
            return Err(Error::Validation(format!("{name} = {t} outside the instance")));
        }
    }
    let (a, b) = if diastolic { (s2, s1) } else { (s1, s2) };
    if !(a < b) {
        return Err(Error::Validation(format!(
            "{y} needs {} before {}",
            if diastolic { "S2" } else { "S1" },
            if diastolic { "S1" } else { "S2" }
        )));
    }
    let (lo, hi) = (a + EVENT_GUARD_S, b - EVENT_GUARD_S);
    if hi - lo < 0.1 {
        return Err(Error::Validation("heart sounds too close for a murmur".into()));
    }

    let mut params = sample_params(y, lo, hi, g, &mut prng);
    if let Some(tau) = ov.tau {
        params.tau = tau;
    }
    if let Some(pi) = ov.pi {
        params.pi = pi;
    }
    let violations = validate_params(&params);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Validation(format!("{y} overrides: {}", msgs.join("; "))));
    }
    if let Some((t1, tl)) = params.segment() {
        if !(a < t1 && tl < b) {
            return Err(Error::Validation(format!(
                "murmur [{t1}, {tl}) must lie strictly between {a} and {b}"
            )));
        }
    }
    debug_assert_eq!((params.tau.len(), params.pi.len()), param_count(y));

    let contour = |t: f64| bump(t, s1) + bump(t, s2) + eval_unchecked(y, &params.tau, &params.pi, t);

    let fs = cfg.sample_rate_hz as f64;
    let n = (dur * fs).round() as usize;
    let mut crng = rng_stream(seed, 1);
    let amps: Vec<f64> = CARRIER_HZ.iter().map(|_| crng.random_range(0.5..1.0)).collect();
    let phases: Vec<f64> = CARRIER_HZ
        .iter()
        .map(|_| crng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let norm = (amps.iter().map(|a| a * a).sum::<f64>() / 2.0).sqrt();
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let c: f64 = CARRIER_HZ
                .iter()
                .zip(&amps)
                .zip(&phases)
                .map(|((f, a), p)| a * (std::f64::consts::TAU * f * t + p).cos())
                .sum();
            contour(t) * c / norm
        })
        .collect();

    let mut x = clean.clone();
    let mut measured = None;
    if let Some(snr) = snr_db {
        let mut nrng = rng_stream(seed, 2);
        let mut noise: Vec<f64> = (0..n).map(|_| nrng.sample::<f64, _>(StandardNormal)).collect();
        let p_signal = clean.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let p_raw = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let k = (p_signal / 10f64.powf(snr / 10.0) / p_raw).sqrt();
        noise.iter_mut().for_each(|v| *v *= k);
        let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
        measured = Some(10.0 * (p_signal / p_noise).log10());
        x.iter_mut().zip(&noise).for_each(|(s, e)| *s += e);
    }
    let peak = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK_LEVEL / peak);
    }
    let waveform = Waveform::new(x, cfg.sample_rate_hz)?.quantized_16bit();

    let n_grid = (dur * g).round() as usize;
    let raw: Vec<f64> = (0..n_grid).map(|k| contour(k as f64 / g)).collect();
    let emax = raw.iter().copied().fold(0.0, f64::max);
    let true_envelope = Envelope::new(
        raw.into_iter().map(|v| if emax > 0.0 { v / emax } else { v }).collect(),
        g,
        0.0,
    )?;
    let bits = (0..n_grid)
        .map(|k| {
            let t = k as f64 / g;
            params.segment().is_some_and(|(t1, tl)| t1 <= t && t < tl)
        })
        .collect();
    let true_mask = Mask {
        bits,
        grid_hz: g,
        t0_s: 0.0,
    };
    let first_gap = Interval { start_s: a, end_s: b };
    let tail = Interval { start_s: b, end_s: dur };
    let true_events = HeartEvents {
        s1_time_s: Some(s1),
        s2_time_s: Some(s2),
        systole_interval: Some(if diastolic { tail } else { first_gap }),
        diastole_interval: Some(if diastolic { first_gap } else { tail }),
    };
    let true_phase = match y.murmur_phase() {
        Some(p) => p,
        None => Phase::Unknown,
    };

    Ok(SyntheticCase {
        waveform,
        true_envelope,
        true_mask,
        true_params: params,
        true_diagnosis: y,
        true_phase,
        true_events,
        seed,
        snr_db,
        measured_snr_db: measured,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of case `i` of class `y` in a corpus seeded with `seed`.
pub fn case_seed(seed: u64, y: Diagnosis, i: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((y.index() as u64) << 32) | i as u64))
}

pub fn case_id(y: Diagnosis, i: usize) -> String {
    format!("{}_{i:03}", y.name().to_ascii_lowercase())
}

/// Ground truth stored next to each WAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub diagnosis: Diagnosis,
    pub phase: Phase,
    pub params: ShapeParams,
    pub mask: Mask,
    pub events: HeartEvents,
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub measured_snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub diagnosis: Diagnosis,
    pub seed: u64,
    pub wav: String,
    pub truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub synth: SynthConfig,
    pub per_class: BTreeMap<Diagnosis, usize>,
    pub cases: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Manifest> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Manifest::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Manifest> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "manifest schema {} (expected {MANIFEST_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        Ok(m)
    }

    /// Rebuild one case from its recorded seed.
    pub fn regenerate(&self, entry: &ManifestEntry) -> Result<SyntheticCase> {
        generate_with(&self.synth, entry.diagnosis, None, self.snr_db, entry.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub cases: Vec<SyntheticCase>,
}

impl SyntheticCase {
    pub fn truth(&self, id: &str) -> TruthRecord {
        TruthRecord {
            id: id.to_string(),
            diagnosis: self.true_diagnosis,
            phase: self.true_phase,
            params: self.true_params.clone(),
            mask: self.true_mask.clone(),
            events: self.true_events.clone(),
            seed: self.seed,
            snr_db: self.snr_db,
            measured_snr_db: self.measured_snr_db,
        }
    }
}

/// Class-ordered corpus with `per_class[y]` cases of each diagnosis.
pub fn generate_corpus(
    cfg: &SynthConfig,
    per_class: &BTreeMap<Diagnosis, usize>,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<Corpus> {
    let entries: Vec<ManifestEntry> = Diagnosis::ALL
        .iter()
        .flat_map(|&y| {
            (0..per_class.get(&y).copied().unwrap_or(0)).map(move |i| {
                let id = case_id(y, i);
                ManifestEntry {
                    wav: format!("{id}.wav"),
                    truth: format!("{id}.json"),
                    id,
                    diagnosis: y,
                    seed: case_seed(seed, y, i),
                }
            })
        })
        .collect();
    let cases = entries
        .par_iter()
        .map(|e| generate_with(cfg, e.diagnosis, None, snr_db, e.seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        manifest: Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            seed,
            snr_db,
            synth: cfg.clone(),
            per_class: Diagnosis::ALL
                .iter()
                .map(|&y| (y, per_class.get(&y).copied().unwrap_or(0)))
                .collect(),
            cases: entries,
        },
        cases,
    })
}

/// Write WAVs, truth sidecars and the manifest into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &Corpus) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, case) in corpus.manifest.cases.iter().zip(&corpus.cases) {
        write_wav(dir.join(&entry.wav), &case.waveform)?;
        let truth = dir.join(&entry.truth);
        let json = serde_json::to_string_pretty(&case.truth(&entry.id))?;
        std::fs::write(&truth, json).map_err(|e| Error::io(&truth, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&corpus.manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_truth(dir: impl AsRef<Path>, entry: &ManifestEntry) -> Result<TruthRecord> {
    let path = dir.as_ref().join(&entry.truth);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
