//! Run the full pipeline over a synthetic corpus and score it against the
//! ground truth.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, dice, segment_param_mse, shape_param_mse, shape_fit_mse, write_confusion_csv, write_metrics_csv, CaseScore, EvalResult};
use crate::render::render_abductive;
use crate::report::{analyze_instance, AnalysisInput, CaseReport};
use crate::shapes::Diagnosis;
use crate::signal::{read_wav, Waveform};
use crate::synth::{load_truth, Manifest, TruthRecord};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CASES_FILE: &str = "cases.csv";
pub const SVG_DIR: &str = "svg";

/// One scored corpus case.
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub truth: TruthRecord,
    pub report: CaseReport,
    pub score: CaseScore,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub result: EvalResult,
    pub cases: Vec<CaseOutcome>,
}

pub fn score_case(truth: &TruthRecord, report: &CaseReport) -> Result<CaseScore> {
    let murmur = truth.diagnosis != Diagnosis::N;
    let segment_mse = match (truth.params.segment(), &report.segment) {
        (Some(t), Some(s)) if murmur => Some(segment_param_mse(t, (s.start_s, s.end_s))),
        _ => None,
    };
    let param_mse = match (&report.hypothesis(truth.diagnosis).params, murmur) {
        (Some(p), true) => Some(shape_param_mse(&truth.params, p)?),
        _ => None,
    };
    let resolved = report.resolved_hypothesis();
    let shape_fit = match &resolved.shape {
        Some(s) if report.resolved != Diagnosis::N => Some(shape_fit_mse(&report.envelope, &s.values, &report.mask)?),
        _ => None,
    };
    Ok(CaseScore {
        id: truth.id.clone(),
        truth: truth.diagnosis,
        predicted: report.resolved,
        dice: dice(&report.mask, &truth.mask)?,
        segment_mse,
        param_mse,
        shape_fit_mse: shape_fit,
        murmur,
    })
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))
}

/// Analyze and score in-memory cases; output order follows input order.
pub fn evaluate_cases(
    cases: &[(TruthRecord, Waveform)],
    cfg: &Config,
    workers: Option<usize>,
) -> Result<Evaluation> {
    let outcomes = pool(workers)?.install(|| {
        cases
            .par_iter()
            .map(|(truth, w)| {
                let report = analyze_instance(&AnalysisInput::new(w, truth.id.clone()), cfg)?;
                let score = score_case(truth, &report)?;
                Ok(CaseOutcome {
                    truth: truth.clone(),
                    report,
                    score,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let scores: Vec<CaseScore> = outcomes.iter().map(|o| o.score.clone()).collect();
    Ok(Evaluation {
        result: aggregate(&scores, cfg.evaluate.missing_segment_penalty)?,
        cases: outcomes,
    })
}

#[derive(Serialize)]
struct CaseRow<'a> {
    id: &'a str,
    truth: Diagnosis,
    predicted: Diagnosis,
    phase: String,
    dice: String,
    segment_mse: String,
    param_mse: String,
    shape_fit_mse: String,
    d_n: String,
    d_as: String,
    d_mr: String,
    d_mvp: String,
    d_ms: String,
    reason: &'a str,
}

fn e9(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9e}")).unwrap_or_default()
}

fn write_cases_csv(path: &Path, cases: &[CaseOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for o in cases {
        let d = |y: Diagnosis| e9(o.report.hypothesis(y).lack_of_fit);
        w.serialize(CaseRow {
            id: &o.score.id,
            truth: o.score.truth,
            predicted: o.score.predicted,
            phase: o.report.phase.to_string(),
            dice: format!("{:.9}", o.score.dice),
            segment_mse: e9(o.score.segment_mse),
            param_mse: e9(o.score.param_mse),
            shape_fit_mse: e9(o.score.shape_fit_mse),
            d_n: d(Diagnosis::N),
            d_as: d(Diagnosis::AS),
            d_mr: d(Diagnosis::MR),
            d_mvp: d(Diagnosis::MVP),
            d_ms: d(Diagnosis::MS),
            reason: &o.report.ranking.reason,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Evaluate every manifest case in `dir` and write `metrics.csv`,
/// `confusion.csv`, `cases.csv` and (optionally) `svg/<id>.svg` into
/// `out_dir`. Outputs depend only on the corpus and the configuration.
pub fn evaluate_corpus(
    dir: impl AsRef<Path>,
    cfg: &Config,
    out_dir: impl AsRef<Path>,
    workers: Option<usize>,
) -> Result<Evaluation> {
    let dir = dir.as_ref();
    let out_dir = out_dir.as_ref();
    let manifest = Manifest::load(dir)?;
    let cases = manifest
        .cases
        .iter()
        .map(|entry| {
            let truth = load_truth(dir, entry)?;
            let wav = read_wav(dir.join(&entry.wav))?;
            Ok((truth, wav.waveform))
        })
        .collect::<Result<Vec<_>>>()?;
    let eval = evaluate_cases(&cases, cfg, workers)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let label = dir.file_name().map_or_else(|| "corpus".into(), |s| s.to_string_lossy().into_owned());
    write_metrics_csv(create(&out_dir.join(METRICS_FILE))?, &label, &eval.result)?;
    write_confusion_csv(create(&out_dir.join(CONFUSION_FILE))?, &eval.result.classes)?;
    write_cases_csv(&out_dir.join(CASES_FILE), &eval.cases)?;
    if cfg.evaluate.write_svg {
        let svg_dir: PathBuf = out_dir.join(SVG_DIR);
        std::fs::create_dir_all(&svg_dir).map_err(|e| Error::io(&svg_dir, e))?;
        for o in &eval.cases {
            let path = svg_dir.join(format!("{}.svg", o.score.id));
            std::fs::write(&path, render_abductive(&o.report, &cfg.render)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(eval)
}
