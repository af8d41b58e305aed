//! Explanations of a resolved report: the best-fitting shape (abductive),
//! all alternatives side by side (contrastive), amplitude changes that
//! would make another diagnosis fit (counterfactual), and similar past
//! cases from a persistent store (case-based).

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hypothesis::{delta_series, FittedHypothesis};
use crate::report::CaseReport;
use crate::shapes::{Diagnosis, ShapeParams};
use crate::signal::{Envelope, Phase};

/// Deltas no larger than this are reported as an all-zero series.
pub const COUNTERFACTUAL_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationKind {
    Abductive,
    Contrastive,
    Counterfactual,
    Case,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbductivePayload {
    pub diagnosis: Diagnosis,
    /// Phase in which the winning murmur is drawn; absent for N.
    pub phase_tag: Option<Phase>,
    pub no_murmur: bool,
    pub hypothesis: Option<FittedHypothesis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveEntry {
    pub rank: usize,
    pub hypothesis: FittedHypothesis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePayload {
    pub resolved: Diagnosis,
    pub entries: Vec<ContrastiveEntry>,
    /// Why N was chosen without comparing fits, when that happened.
    pub gate_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPayload {
    pub resolved: Diagnosis,
    pub target: Diagnosis,
    pub target_params: ShapeParams,
    pub target_phase: Option<Phase>,
    pub envelope: Envelope,
    pub mask: Vec<bool>,
    /// `target shape - envelope` inside the mask: positive where the
    /// amplitude would need to be higher.
    pub delta: Vec<f64>,
    pub is_zero: bool,
}

impl CounterfactualPayload {
    /// Riemann sum of the delta series over the grid.
    pub fn integral(&self) -> f64 {
        self.delta.iter().sum::<f64>() * self.envelope.step_s()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePayload {
    pub diagnosis: Diagnosis,
    pub requested: usize,
    pub records: Vec<CaseRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum Explanation {
    Abductive(AbductivePayload),
    Contrastive(ContrastivePayload),
    Counterfactual(Box<CounterfactualPayload>),
    Case(CasePayload),
}

impl Explanation {
    pub fn kind(&self) -> ExplanationKind {
        match self {
            Explanation::Abductive(_) => ExplanationKind::Abductive,
            Explanation::Contrastive(_) => ExplanationKind::Contrastive,
            Explanation::Counterfactual(_) => ExplanationKind::Counterfactual,
            Explanation::Case(_) => ExplanationKind::Case,
        }
    }
}

pub fn abductive(report: &CaseReport) -> Explanation {
    let y = report.resolved;
    let no_murmur = y == Diagnosis::N;
    Explanation::Abductive(AbductivePayload {
        diagnosis: y,
        phase_tag: y.murmur_phase(),
        no_murmur,
        hypothesis: (!no_murmur).then(|| report.hypothesis(y).clone()),
    })
}

pub fn contrastive(report: &CaseReport) -> Explanation {
    let entries = report
        .ranking
        .order
        .iter()
        .enumerate()
        .map(|(rank, &y)| ContrastiveEntry {
            rank,
            hypothesis: report.hypothesis(y).clone(),
        })
        .collect();
    let gated = report.ranking.gated;
    Explanation::Contrastive(ContrastivePayload {
        resolved: report.resolved,
        entries,
        gate_note: gated.then(|| report.ranking.reason.clone()),
    })
}

/// In-mask `shape_y - envelope` for any evaluated hypothesis, including
/// the resolved one (where it is the fit residual).
pub fn counterfactual_delta(report: &CaseReport, y: Diagnosis) -> Result<Vec<f64>> {
    let h = report.hypothesis(y);
    let shape = h
        .shape
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("{y} was not fitted (no murmur segment)")))?;
    Ok(delta_series(&shape.values, &report.envelope, &report.mask))
}

pub fn counterfactual(report: &CaseReport, target: Diagnosis) -> Result<Explanation> {
    if target == report.resolved {
        return Err(Error::NoCounterfactualNeeded(target.to_string()));
    }
    let mut delta = counterfactual_delta(report, target)?;
    let is_zero = delta.iter().all(|d| d.abs() <= COUNTERFACTUAL_ZERO_TOL);
    if is_zero {
        delta.iter_mut().for_each(|d| *d = 0.0);
    }
    let h = report.hypothesis(target);
    Ok(Explanation::Counterfactual(Box::new(CounterfactualPayload {
        resolved: report.resolved,
        target,
        target_params: h.params.clone().expect("fitted hypotheses carry params"),
        target_phase: target.murmur_phase(),
        envelope: report.envelope.clone(),
        mask: report.mask.bits.clone(),
        delta,
        is_zero,
    })))
}

/// One stored case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub id: String,
    pub instance_id: String,
    pub resolved: Diagnosis,
    pub params: ShapeParams,
    pub lack_of_fit: f64,
    pub envelope_digest: String,
    pub source_path: String,
}

/// SHA-256 over the grid rate, offset and values as little-endian `f64`s.
pub fn envelope_digest(e: &Envelope) -> String {
    let mut h = Sha256::new();
    h.update(e.grid_hz().to_le_bytes());
    h.update(e.t0_s().to_le_bytes());
    for v in e.values() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn id_number(id: &str) -> Option<u64> {
    id.strip_prefix("case-")?.parse().ok()
}

/// Parse a JSON-lines store; returns the records and the 1-based numbers of
/// lines that failed to parse or repeat an earlier id.
pub fn parse_case_lines(text: &str) -> (Vec<CaseRecord>, Vec<usize>) {
    let mut records: Vec<CaseRecord> = Vec::new();
    let mut bad = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CaseRecord>(line) {
            Ok(r) if seen.insert(r.id.clone()) => records.push(r),
            _ => bad.push(i + 1),
        }
    }
    (records, bad)
}

/// Append-only case store in a JSON-lines file.
///
/// Mutation goes through `&mut self`, so a single owner serializes writes;
/// rendered diagrams may be kept in a sibling `<file>.svg/` directory.
#[derive(Debug)]
pub struct CaseStore {
    path: PathBuf,
    records: Vec<CaseRecord>,
    next_id: u64,
}

impl CaseStore {
    /// Open (or start) a store; a missing file is an empty store.
    pub fn open(path: impl AsRef<Path>) -> Result<CaseStore> {
        let path = path.as_ref().to_path_buf();
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let (records, bad) = parse_case_lines(&text);
        if !bad.is_empty() {
            return Err(Error::CorruptStore { path, lines: bad });
        }
        let next_id = records.iter().filter_map(|r| id_number(&r.id)).max().map_or(1, |n| n + 1);
        Ok(CaseStore {
            path,
            records,
            next_id,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[CaseRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&CaseRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn svg_dir(&self) -> PathBuf {
        let mut name = self.path.file_name().unwrap_or_default().to_os_string();
        name.push(".svg");
        self.path.with_file_name(name)
    }

    pub fn store_case(&mut self, report: &CaseReport) -> Result<CaseRecord> {
        let h = report.resolved_hypothesis();
        let record = CaseRecord {
            id: format!("case-{:06}", self.next_id),
            instance_id: report.instance_id.clone(),
            resolved: report.resolved,
            params: h.params.clone().unwrap_or_else(ShapeParams::normal),
            lack_of_fit: h.lack_of_fit.unwrap_or(0.0),
            envelope_digest: envelope_digest(&report.envelope),
            source_path: report.source_path.clone().unwrap_or_default(),
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        if let Some(dir) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.next_id += 1;
        self.records.push(record.clone());
        Ok(record)
    }

    /// Keep a rendered diagram next to the store under the record id.
    pub fn attach_svg(&self, id: &str, svg: &str) -> Result<PathBuf> {
        let dir = self.svg_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{id}.svg"));
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// The `k` best-fitting stored cases resolved as `y`, by lack-of-fit
    /// then id.
    pub fn retrieve_cases(&self, y: Diagnosis, k: usize) -> CasePayload {
        let mut hits: Vec<&CaseRecord> = self.records.iter().filter(|r| r.resolved == y).collect();
        hits.sort_by(|a, b| a.lack_of_fit.total_cmp(&b.lack_of_fit).then_with(|| a.id.cmp(&b.id)));
        let mut warnings = Vec::new();
        if hits.len() < k {
            warnings.push(format!("requested {k} {y} cases, store has {}", hits.len()));
        }
        CasePayload {
            diagnosis: y,
            requested: k,
            records: hits.into_iter().take(k).cloned().collect(),
            warnings,
        }
    }
}

pub fn case_explanation(store: &CaseStore, y: Diagnosis, k: usize) -> Explanation {
    Explanation::Case(store.retrieve_cases(y, k))
}
