//! Segmentation, shape and classification metrics, and their corpus-level
//! aggregation.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::Mask;
use crate::shapes::{Diagnosis, ShapeParams};
use crate::signal::Envelope;

/// Sørensen–Dice overlap `2|A∩B| / (|A| + |B|)`; two empty masks agree
/// perfectly and score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    dice_bits(&a.bits, &b.bits)
}

pub fn dice_bits(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!("masks of length {} and {}", a.len(), b.len())));
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Squared error of segment start and end, in seconds².
pub fn segment_param_mse(truth: (f64, f64), predicted: (f64, f64)) -> f64 {
    (truth.0 - predicted.0).powi(2) + (truth.1 - predicted.1).powi(2)
}

/// Squared norm of the `(tau, pi)` parameter difference.
pub fn shape_param_mse(truth: &ShapeParams, predicted: &ShapeParams) -> Result<f64> {
    if truth.diagnosis != predicted.diagnosis
        || truth.tau.len() != predicted.tau.len()
        || truth.pi.len() != predicted.pi.len()
    {
        return Err(Error::InvalidInput(format!(
            "parameter families differ: {} vs {}",
            truth.diagnosis, predicted.diagnosis
        )));
    }
    Ok(truth
        .theta()
        .iter()
        .zip(predicted.theta())
        .map(|(a, b)| (a - b).powi(2))
        .sum())
}

/// Mean squared difference between the true amplitude and a fitted shape
/// over the true mask.
pub fn shape_fit_mse(truth: &Envelope, shape: &[f64], mask: &Mask) -> Result<f64> {
    if shape.len() != truth.len() || mask.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "envelope {}, shape {}, mask {} points",
            truth.len(),
            shape.len(),
            mask.len()
        )));
    }
    let n = mask.count();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(mask
        .indices()
        .map(|k| (shape[k] - truth.values()[k]).powi(2))
        .sum::<f64>()
        / n as f64)
}

/// One-vs-rest rates for a class; `None` when the denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub per_class: BTreeMap<Diagnosis, ClassRates>,
    /// `confusion[true][predicted]` in `Diagnosis::ALL` order.
    pub confusion: [[usize; 5]; 5],
}

pub fn classify_metrics(pairs: &[(Diagnosis, Diagnosis)]) -> Result<ClassMetrics> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    let mut confusion = [[0usize; 5]; 5];
    for &(t, p) in pairs {
        confusion[t.index()][p.index()] += 1;
    }
    let total = pairs.len();
    let correct: usize = (0..5).map(|i| confusion[i][i]).sum();
    let per_class = Diagnosis::ALL
        .iter()
        .map(|&y| {
            let i = y.index();
            let tp = confusion[i][i];
            let fn_ = confusion[i].iter().sum::<usize>() - tp;
            let fp = (0..5).map(|r| confusion[r][i]).sum::<usize>() - tp;
            let tn = total - tp - fn_ - fp;
            let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
            (
                y,
                ClassRates {
                    sensitivity: ratio(tp, fn_),
                    specificity: ratio(tn, fp),
                    support: tp + fn_,
                },
            )
        })
        .collect();
    Ok(ClassMetrics {
        accuracy: correct as f64 / total as f64,
        per_class,
        confusion,
    })
}

/// Corpus-level evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n_cases: usize,
    pub classes: ClassMetrics,
    pub mean_dice: f64,
    /// Mean segment error over murmur cases where a segment was found.
    pub mean_segment_mse: Option<f64>,
    /// Murmur cases where no segment was found; scored with the penalty.
    pub missed_segments: usize,
    pub mean_segment_mse_with_penalty: Option<f64>,
    /// Mean parameter error of the true family's fit, over murmur cases.
    pub mean_param_mse: Option<f64>,
    pub mean_shape_fit_mse: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-case inputs to [`aggregate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub id: String,
    pub truth: Diagnosis,
    pub predicted: Diagnosis,
    pub dice: f64,
    pub segment_mse: Option<f64>,
    pub param_mse: Option<f64>,
    pub shape_fit_mse: Option<f64>,
    pub murmur: bool,
}

pub fn aggregate(scores: &[CaseScore], missing_segment_penalty: f64) -> Result<EvalResult> {
    let pairs: Vec<_> = scores.iter().map(|s| (s.truth, s.predicted)).collect();
    let classes = classify_metrics(&pairs)?;
    let dices: Vec<f64> = scores.iter().map(|s| s.dice).collect();
    let seg: Vec<f64> = scores.iter().filter_map(|s| s.segment_mse).collect();
    let missed = scores.iter().filter(|s| s.murmur && s.segment_mse.is_none()).count();
    let mut penalized = seg.clone();
    penalized.extend(std::iter::repeat_n(missing_segment_penalty, missed));
    let param: Vec<f64> = scores.iter().filter_map(|s| s.param_mse).collect();
    let fit: Vec<f64> = scores.iter().filter_map(|s| s.shape_fit_mse).collect();
    Ok(EvalResult {
        n_cases: scores.len(),
        classes,
        mean_dice: mean(&dices).unwrap_or(1.0),
        mean_segment_mse: mean(&seg),
        missed_segments: missed,
        mean_segment_mse_with_penalty: mean(&penalized),
        mean_param_mse: mean(&param),
        mean_shape_fit_mse: mean(&fit),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9e}")).unwrap_or_default()
}

/// One header row plus one data row labelled `label`.
pub fn write_metrics_csv<W: Write>(out: W, label: &str, r: &EvalResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "label".to_string(),
        "n_cases".into(),
        "accuracy".into(),
        "mean_dice".into(),
        "mean_segment_mse".into(),
        "missed_segments".into(),
        "mean_segment_mse_with_penalty".into(),
        "mean_param_mse".into(),
        "mean_shape_fit_mse".into(),
    ];
    let mut row = vec![
        label.to_string(),
        r.n_cases.to_string(),
        format!("{:.9}", r.classes.accuracy),
        format!("{:.9}", r.mean_dice),
        fmt_opt(r.mean_segment_mse),
        r.missed_segments.to_string(),
        fmt_opt(r.mean_segment_mse_with_penalty),
        fmt_opt(r.mean_param_mse),
        fmt_opt(r.mean_shape_fit_mse),
    ];
    for (y, rates) in &r.classes.per_class {
        header.push(format!("sensitivity_{y}"));
        header.push(format!("specificity_{y}"));
        row.push(rates.sensitivity.map(|v| format!("{v:.9}")).unwrap_or_default());
        row.push(rates.specificity.map(|v| format!("{v:.9}")).unwrap_or_default());
    }
    w.write_record(&header)?;
    w.write_record(&row)?;
    w.flush().map_err(|e| Error::io("metrics csv", e))?;
    Ok(())
}

/// Confusion matrix with true classes as rows.
pub fn write_confusion_csv<W: Write>(out: W, c: &ClassMetrics) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(Diagnosis::ALL.iter().map(|y| y.to_string()));
    w.write_record(&header)?;
    for y in Diagnosis::ALL {
        let mut row = vec![y.to_string()];
        row.extend(c.confusion[y.index()].iter().map(|n| n.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("confusion csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Diagnosis::*;

    fn m(bits: &[u8]) -> Mask {
        Mask {
            bits: bits.iter().map(|&b| b == 1).collect(),
            grid_hz: 100.0,
            t0_s: 0.0,
        }
    }

    #[test]
    fn dice_values() {
        assert_eq!(dice(&m(&[1, 1, 0, 0]), &m(&[0, 1, 1, 0])).unwrap(), 0.5);
        assert_eq!(dice(&m(&[1, 1, 0]), &m(&[1, 1, 0])).unwrap(), 1.0);
        assert_eq!(dice(&m(&[1, 0]), &m(&[0, 1])).unwrap(), 0.0);
        assert_eq!(dice(&m(&[0, 0]), &m(&[0, 0])).unwrap(), 1.0);
        assert!(dice(&m(&[0]), &m(&[0, 0])).is_err());
    }

    #[test]
    fn segment_errors() {
        assert_eq!(segment_param_mse((0.2, 0.4), (0.2, 0.4)), 0.0);
        assert!((segment_param_mse((0.2, 0.4), (0.21, 0.41)) - 2e-4).abs() < 1e-12);
        assert!((segment_param_mse((0.2, 0.4), (0.25, 0.4)) - 2.5e-3).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let t = ShapeParams::new(AS, vec![0.2, 0.3, 0.4], vec![0.1, 2.0, 1.0]).unwrap();
        assert_eq!(shape_param_mse(&t, &t).unwrap(), 0.0);
        let mut p = t.clone();
        p.pi[1] += 0.1;
        assert!((shape_param_mse(&t, &p).unwrap() - 0.01).abs() < 1e-12);
        let mr = ShapeParams::new(MR, vec![0.2, 0.4], vec![0.1]).unwrap();
        assert!(shape_param_mse(&t, &mr).is_err());

        let e = Envelope::new(vec![0.3; 4], 100.0, 0.0).unwrap();
        let mask = m(&[0, 1, 1, 0]);
        let fit = shape_fit_mse(&e, &[0.0, 0.32, 0.32, 0.0], &mask).unwrap();
        assert!((fit - 4e-4).abs() < 1e-12);
    }

    #[test]
    fn classification_arithmetic() {
        let mut pairs: Vec<_> = (0..9).map(|_| (MS, MS)).collect();
        pairs.push((MS, MVP));
        pairs.extend((0..10).map(|_| (MVP, MVP)));
        let c = classify_metrics(&pairs).unwrap();
        assert!((c.per_class[&MS].sensitivity.unwrap() - 0.9).abs() < 1e-12);
        assert!((c.per_class[&MVP].specificity.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(c.per_class[&AS].sensitivity, None);
        assert_eq!(c.per_class[&AS].specificity, Some(1.0));
        assert!((c.accuracy - 19.0 / 20.0).abs() < 1e-12);
        let trace: usize = (0..5).map(|i| c.confusion[i][i]).sum();
        let total: usize = c.confusion.iter().flatten().sum();
        assert_eq!(c.accuracy, trace as f64 / total as f64);
        assert_eq!(c.confusion[MS.index()].iter().sum::<usize>(), 10);
        assert!(classify_metrics(&[]).is_err());
    }

    #[test]
    fn all_correct() {
        let pairs: Vec<_> = Diagnosis::ALL.iter().map(|&y| (y, y)).collect();
        let c = classify_metrics(&pairs).unwrap();
        assert_eq!(c.accuracy, 1.0);
        assert!(c.per_class.values().all(|r| r.sensitivity == Some(1.0)));
    }

    #[test]
    fn csv_shapes() {
        let scores = vec![CaseScore {
            id: "as_000".into(),
            truth: AS,
            predicted: AS,
            dice: 1.0,
            segment_mse: Some(0.0),
            param_mse: Some(0.0),
            shape_fit_mse: Some(0.0),
            murmur: true,
        }];
        let r = aggregate(&scores, 0.25).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, "default", &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let mut buf = Vec::new();
        write_confusion_csv(&mut buf, &r.classes).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }
}
