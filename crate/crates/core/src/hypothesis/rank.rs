use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapes::Diagnosis;
use crate::signal::Phase;

use super::{FittedHypothesis, HypothesisConfig, HypothesisRanking};

/// Smallest temperature used for scores, so near-perfect fits do not
/// divide by zero.
const MIN_TEMPERATURE: f64 = 1e-12;
/// Lack-of-fit differences below this fraction of the segment power are
/// floating-point noise and always count as ties.
const ROUNDOFF_TIE: f64 = 1e-12;

/// Envelope statistics the ranking needs beyond the fits themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MurmurEvidence {
    pub segment_present: bool,
    /// RMS of the envelope inside the murmur segment.
    pub segment_rms: f64,
    pub background_rms: f64,
    /// Sampling variance of an envelope point, in amplitude².
    pub noise_variance: f64,
}

/// Whether a diagnosis may occur in the observed heart phase.
pub fn phase_compatible(y: Diagnosis, phase: Phase) -> bool {
    match (y.murmur_phase(), phase) {
        (None, _) | (_, Phase::Unknown) => true,
        (Some(p), observed) => p == observed,
    }
}

fn softmax(ds: &[(Diagnosis, f64)], temperature: f64) -> BTreeMap<Diagnosis, f64> {
    let mut scores: BTreeMap<Diagnosis, f64> = Diagnosis::ALL.iter().map(|&y| (y, 0.0)).collect();
    let d_min = ds.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = ds.iter().map(|&(_, d)| (-(d - d_min) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    for (&(y, _), wi) in ds.iter().zip(w) {
        scores.insert(y, wi / total);
    }
    scores
}

fn one_hot(y: Diagnosis) -> BTreeMap<Diagnosis, f64> {
    Diagnosis::ALL
        .iter()
        .map(|&z| (z, if z == y { 1.0 } else { 0.0 }))
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rank the five fitted hypotheses and resolve a diagnosis.
///
/// Phase-incompatible hypotheses are excluded. N is chosen outright when
/// there is no segment or the segment is barely above background. Otherwise
/// every hypothesis whose lack-of-fit is within `rho * d + kappa * noise` of
/// the best is considered tied, and the tied hypothesis with the fewest free
/// parameters (then the least expressive family) wins.
pub fn rank_hypotheses(
    fits: &[FittedHypothesis],
    phase: Phase,
    ev: &MurmurEvidence,
    cfg: &HypothesisConfig,
) -> Result<HypothesisRanking> {
    let mut seen = [false; 5];
    for f in fits {
        if std::mem::replace(&mut seen[f.diagnosis.index()], true) {
            return Err(Error::Contract(format!("duplicate {} hypothesis", f.diagnosis)));
        }
    }
    if fits.len() != 5 {
        return Err(Error::Contract(format!("expected 5 hypotheses, got {}", fits.len())));
    }
    let fit = |y: Diagnosis| fits.iter().find(|f| f.diagnosis == y).expect("checked above");
    let mut warnings = Vec::new();
    if phase == Phase::Unknown {
        warnings.push("heart phase unknown; phase gate not applied".to_string());
    }

    let eligible: Vec<(Diagnosis, f64)> = Diagnosis::ALL
        .iter()
        .filter(|&&y| phase_compatible(y, phase))
        .filter_map(|&y| fit(y).lack_of_fit.map(|d| (y, d)))
        .collect();

    let gate = if !ev.segment_present {
        Some("no murmur segment".to_string())
    } else if ev.segment_rms < cfg.n_gate_factor * ev.background_rms {
        Some(format!(
            "segment RMS {:.4} below N-gate {:.4}",
            ev.segment_rms,
            cfg.n_gate_factor * ev.background_rms
        ))
    } else if eligible.iter().all(|&(y, _)| y == Diagnosis::N) {
        warnings.push("every murmur hypothesis was gated out".to_string());
        Some("no phase-compatible murmur hypothesis".to_string())
    } else {
        None
    };

    let gated = gate.is_some();
    let (resolved, scores, tie_break_fired, reason) = match gate {
        Some(reason) => (Diagnosis::N, one_hot(Diagnosis::N), false, reason),
        None => {
            let (best, d_best) = eligible
                .iter()
                .copied()
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.expressiveness().cmp(&b.0.expressiveness())))
                .expect("non-empty");
            let allowance = cfg.noise_allowance * ev.noise_variance + ROUNDOFF_TIE * ev.segment_rms.powi(2);
            let resolved = eligible
                .iter()
                .filter(|&&(_, d)| d - d_best <= cfg.parsimony_rho * d + allowance)
                .min_by(|a, b| {
                    let fa = fit(a.0).n_free_params;
                    let fb = fit(b.0).n_free_params;
                    fa.cmp(&fb)
                        .then(a.0.expressiveness().cmp(&b.0.expressiveness()))
                        .then(a.1.total_cmp(&b.1))
                })
                .map(|&(y, _)| y)
                .expect("best is always within its own margin");
            let temperature = cfg
                .softmax_temperature
                .unwrap_or_else(|| median(eligible.iter().map(|&(_, d)| d).collect()))
                .max(MIN_TEMPERATURE);
            let reason = if resolved == best {
                format!("{best} has the lowest lack-of-fit")
            } else {
                format!("{resolved} ties best fit {best} within the parsimony margin and has fewer parameters")
            };
            (resolved, softmax(&eligible, temperature), resolved != best, reason)
        }
    };

    let mut order: Vec<Diagnosis> = Diagnosis::ALL.to_vec();
    order.sort_by(|&a, &b| {
        let key = |y: Diagnosis| {
            let f = fit(y);
            (y != resolved, !phase_compatible(y, phase), !f.evaluated())
        };
        let da = fit(a).lack_of_fit.unwrap_or(f64::INFINITY);
        let db = fit(b).lack_of_fit.unwrap_or(f64::INFINITY);
        key(a)
            .cmp(&key(b))
            .then(da.total_cmp(&db))
            .then(a.expressiveness().cmp(&b.expressiveness()))
    });

    Ok(HypothesisRanking {
        order,
        resolved,
        scores,
        tie_break_fired,
        gated,
        reason,
        warnings,
    })
}

/// Optionally blend ranking scores with external class probabilities as
/// `scores^w * external^(1-w)`, renormalized.
pub fn resolve_diagnosis(
    r: &HypothesisRanking,
    external: Option<&BTreeMap<Diagnosis, f64>>,
    weight: f64,
) -> Result<(Diagnosis, BTreeMap<Diagnosis, f64>)> {
    let Some(ext) = external else {
        return Ok((r.resolved, r.scores.clone()));
    };
    if !(weight.is_finite() && (0.0..=1.0).contains(&weight)) {
        return Err(Error::Validation(format!("blend weight {weight} outside [0, 1]")));
    }
    if let Some((y, p)) = ext.iter().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Validation(format!("external probability for {y} is {p}")));
    }
    let total: f64 = ext.values().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("external probabilities sum to {total}, not 1")));
    }
    let blended: Vec<(Diagnosis, f64)> = Diagnosis::ALL
        .iter()
        .map(|&y| {
            let s = r.scores.get(&y).copied().unwrap_or(0.0);
            let x = ext.get(&y).copied().unwrap_or(0.0);
            // A diagnosis the ranking gated out stays out, whatever the weight.
            let v = if s == 0.0 { 0.0 } else { s.powf(weight) * x.powf(1.0 - weight) };
            (y, v)
        })
        .collect();
    let z: f64 = blended.iter().map(|&(_, v)| v).sum();
    if z <= 0.0 {
        return Err(Error::Validation(
            "external probabilities give zero weight to every scored diagnosis".into(),
        ));
    }
    let scores: BTreeMap<Diagnosis, f64> = blended.iter().map(|&(y, v)| (y, v / z)).collect();
    let mut best = Diagnosis::N;
    for &y in &Diagnosis::ALL {
        if scores[&y] > scores[&best] {
            best = y;
        }
    }
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(y: Diagnosis, d: Option<f64>, n_free: usize) -> FittedHypothesis {
        FittedHypothesis {
            diagnosis: y,
            init_params: None,
            params: None,
            shape: None,
            lack_of_fit: d,
            init_lack_of_fit: d,
            phase_compatible: true,
            n_free_params: n_free,
            converged: true,
            iterations: 0,
            start: "init".into(),
            warnings: Vec::new(),
        }
    }

    fn set(ds: [f64; 5]) -> Vec<FittedHypothesis> {
        let nf = [0, 4, 1, 4, 6];
        Diagnosis::ALL
            .iter()
            .zip(ds)
            .zip(nf)
            .map(|((&y, d), n)| fake(y, Some(d), n))
            .collect()
    }

    fn present() -> MurmurEvidence {
        MurmurEvidence {
            segment_present: true,
            segment_rms: 0.3,
            background_rms: 0.01,
            noise_variance: 0.0,
        }
    }

    fn cfg() -> HypothesisConfig {
        HypothesisConfig::default()
    }

    #[test]
    fn mvp_beats_overfitting_ms_in_systole() {
        let fits = set([0.04, 2e-3, 5e-3, 3.3e-6, 3.3e-6]);
        let r = rank_hypotheses(&fits, Phase::Systolic, &present(), &cfg()).unwrap();
        assert_eq!(r.resolved, Diagnosis::MVP);
        assert_eq!(r.scores[&Diagnosis::MS], 0.0);
        assert_eq!(r.order[0], Diagnosis::MVP);
        assert_eq!(*r.order.last().unwrap(), Diagnosis::MS);
        // Even without the gate, parsimony prefers MVP over MS.
        let r = rank_hypotheses(&fits, Phase::Unknown, &present(), &cfg()).unwrap();
        assert_eq!(r.resolved, Diagnosis::MVP);
    }

    #[test]
    fn diastolic_resolves_ms() {
        let fits = set([0.04, 1e-4, 2e-3, 2e-4, 1e-6]);
        let r = rank_hypotheses(&fits, Phase::Diastolic, &present(), &cfg()).unwrap();
        assert_eq!(r.resolved, Diagnosis::MS);
        for y in [Diagnosis::AS, Diagnosis::MR, Diagnosis::MVP] {
            assert_eq!(r.scores[&y], 0.0);
        }
        assert!(!r.tie_break_fired);
    }

    #[test]
    fn missing_segment_is_normal() {
        let mut fits = set([0.0; 5]);
        for f in &mut fits[1..] {
            f.lack_of_fit = None;
        }
        let ev = MurmurEvidence {
            segment_present: false,
            ..present()
        };
        let r = rank_hypotheses(&fits, Phase::Unknown, &ev, &cfg()).unwrap();
        assert_eq!(r.resolved, Diagnosis::N);
        assert_eq!(r.scores[&Diagnosis::N], 1.0);
    }

    #[test]
    fn faint_segment_gated_to_normal() {
        let fits = set([0.01, 1e-4, 1e-4, 1e-4, 1e-4]);
        let ev = MurmurEvidence {
            segment_rms: 0.014,
            ..present()
        };
        let r = rank_hypotheses(&fits, Phase::Systolic, &ev, &cfg()).unwrap();
        assert_eq!(r.resolved, Diagnosis::N);
    }

    #[test]
    fn parsimony_prefers_fewer_parameters() {
        // AS is 3% better than MR: inside the 5% margin.
        let fits = set([0.04, 0.97e-3, 1e-3, 2e-3, 2e-3]);
        let r = rank_hypotheses(&fits, Phase::Systolic, &present(), &cfg()).unwrap();
        assert_eq!(r.resolved, Diagnosis::MR);
        assert!(r.tie_break_fired);
        let fits = set([0.04, 0.5e-3, 1e-3, 2e-3, 2e-3]);
        let r = rank_hypotheses(&fits, Phase::Systolic, &present(), &cfg()).unwrap();
        assert_eq!(r.resolved, Diagnosis::AS);
    }

    #[test]
    fn scores_sum_to_one_and_argmax_matches() {
        let fits = set([0.04, 1e-3, 5e-3, 2e-3, 4e-3]);
        let r = rank_hypotheses(&fits, Phase::Unknown, &present(), &cfg()).unwrap();
        let total: f64 = r.scores.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let argmax = r.scores.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(*argmax, r.resolved);
    }

    #[test]
    fn wrong_hypothesis_set_is_a_contract_error() {
        let mut fits = set([0.0; 5]);
        fits.pop();
        assert!(rank_hypotheses(&fits, Phase::Unknown, &present(), &cfg()).is_err());
        let mut fits = set([0.0; 5]);
        fits[1].diagnosis = Diagnosis::MR;
        assert!(rank_hypotheses(&fits, Phase::Unknown, &present(), &cfg()).is_err());
    }

    #[test]
    fn blend_identity_uniform_and_hand_computed() {
        let fits = set([0.04, 1.1e-3, 1e-3, 2e-3, 4e-3]);
        let mut c = cfg();
        c.parsimony_rho = 0.0;
        let r = rank_hypotheses(&fits, Phase::Unknown, &present(), &c).unwrap();
        let (y, s) = resolve_diagnosis(&r, None, 0.5).unwrap();
        assert_eq!((y, &s), (r.resolved, &r.scores));

        let uniform: BTreeMap<_, _> = Diagnosis::ALL.iter().map(|&y| (y, 0.2)).collect();
        assert_eq!(resolve_diagnosis(&r, Some(&uniform), 0.5).unwrap().0, r.resolved);

        let mut hand = HypothesisRanking {
            order: Diagnosis::ALL.to_vec(),
            resolved: Diagnosis::MR,
            scores: BTreeMap::new(),
            tie_break_fired: false,
            gated: false,
            reason: String::new(),
            warnings: Vec::new(),
        };
        for (y, s) in Diagnosis::ALL.iter().zip([0.1, 0.2, 0.3, 0.2, 0.2]) {
            hand.scores.insert(*y, s);
        }
        let ext: BTreeMap<_, _> = Diagnosis::ALL
            .iter()
            .zip([0.025, 0.9, 0.025, 0.025, 0.025])
            .map(|(&y, p)| (y, p))
            .collect();
        let (y, s) = resolve_diagnosis(&hand, Some(&ext), 0.5).unwrap();
        // sqrt(0.2*0.9)=0.42426 dominates sqrt(0.3*0.025)=0.08660.
        let raw = [
            (0.1f64 * 0.025).sqrt(),
            (0.2f64 * 0.9).sqrt(),
            (0.3f64 * 0.025).sqrt(),
            (0.2f64 * 0.025).sqrt(),
            (0.2f64 * 0.025).sqrt(),
        ];
        let z: f64 = raw.iter().sum();
        assert_eq!(y, Diagnosis::AS);
        for (d, r) in Diagnosis::ALL.iter().zip(raw) {
            assert!((s[d] - r / z).abs() < 1e-12);
        }
    }

    #[test]
    fn blend_rejects_malformed_probabilities() {
        let r = rank_hypotheses(&set([0.04, 1e-3, 5e-3, 2e-3, 4e-3]), Phase::Unknown, &present(), &cfg()).unwrap();
        let mut ext: BTreeMap<_, _> = Diagnosis::ALL.iter().map(|&y| (y, 0.3)).collect();
        assert!(resolve_diagnosis(&r, Some(&ext), 0.5).is_err());
        ext.insert(Diagnosis::N, -0.2);
        assert!(resolve_diagnosis(&r, Some(&ext), 0.5).is_err());
    }
}
