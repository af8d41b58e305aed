//! Acceptance suite: one PASS/FAIL line per criterion, all tolerances fixed.
//!
//! Runs as a plain binary (`harness = false`) so the lines always print.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use murmurscope::evaluate::{evaluate_cases, evaluate_corpus, CaseOutcome, Evaluation};
use murmurscope::hypothesis::rank_hypotheses;
use murmurscope::metrics::{dice_bits, segment_param_mse};
use murmurscope::report::{analyze_instance, AnalysisInput};
use murmurscope::shapes::{eval_shape, validate_params};
use murmurscope::synth::{generate, generate_corpus, write_corpus, SynthConfig, SynthOverrides};
use murmurscope::{CaseReport, Config, Diagnosis, Phase, ShapeParams};

const CORPUS_SEED: u64 = 7;
const PER_CLASS: usize = 50;
const NOISY_SNR_DB: f64 = 20.0;

// Criterion 1
const MIN_DICE_NOISELESS: f64 = 0.95;
const MAX_BREAKPOINT_ERR_S: f64 = 0.010;
const MAX_SLOPE_REL_ERR: f64 = 0.05;
const MAX_RUNTIME_S: f64 = 60.0;
// Criterion 2
const MIN_ACCURACY_NOISY: f64 = 0.90;
const MIN_DICE_NOISY: f64 = 0.80;
// Criterion 3
const MAX_MS_MVP_REL_GAP: f64 = 0.05;
const MAX_TAU4_COLLAPSE_S: f64 = 0.010;
// Criterion 4
const NESTING_TOL: f64 = 1e-9;
// Criterion 6
const METRIC_TOL: f64 = 1e-12;
// Criterion 7
const SHAPES_PER_FAMILY: usize = 1000;
const LINEARITY_TOL: f64 = 1e-9;
// Criterion 8
const DETERMINISM_PER_CLASS: usize = 10;

struct Suite {
    failed: usize,
}

impl Suite {
    fn check(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        println!("{} [{id}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn corpus(snr: Option<f64>, per_class: usize) -> Vec<(murmurscope::synth::TruthRecord, murmurscope::Waveform)> {
    let per: BTreeMap<_, _> = Diagnosis::ALL.iter().map(|&y| (y, per_class)).collect();
    let c = generate_corpus(&SynthConfig::default(), &per, snr, CORPUS_SEED).expect("corpus");
    c.manifest
        .cases
        .iter()
        .zip(c.cases)
        .map(|(e, case)| (case.truth(&e.id), case.waveform))
        .collect()
}

/// Worst interior-breakpoint error (s) and worst relative slope error of
/// the true family's fit, over murmur cases.
fn recovery_errors(cases: &[CaseOutcome]) -> (f64, f64, String) {
    let (mut worst_t, mut worst_s) = (0.0f64, 0.0f64);
    let mut worst_case = String::new();
    for o in cases {
        let truth = &o.truth.params;
        if truth.diagnosis == Diagnosis::N {
            continue;
        }
        let Some(fit) = o.report.hypothesis(truth.diagnosis).params.as_ref() else {
            return (f64::INFINITY, f64::INFINITY, format!("{} not fitted", o.truth.id));
        };
        let n = truth.tau.len();
        for k in 1..n - 1 {
            let e = (fit.tau[k] - truth.tau[k]).abs();
            if e > worst_t {
                worst_t = e;
                worst_case = o.truth.id.clone();
            }
        }
        // pi[0] is the onset level; the remaining entries are slopes.
        for k in 1..truth.pi.len() {
            let e = ((fit.pi[k] - truth.pi[k]) / truth.pi[k]).abs();
            worst_s = worst_s.max(e);
        }
    }
    (worst_t, worst_s, worst_case)
}

fn all_reports<'a>(evals: &'a [&'a Evaluation]) -> impl Iterator<Item = &'a CaseReport> + 'a {
    evals.iter().flat_map(|e| e.cases.iter().map(|o| &o.report))
}

fn nesting_violations<'a>(reports: impl Iterator<Item = &'a CaseReport>) -> (usize, usize) {
    let (mut checked, mut bad) = (0, 0);
    for r in reports {
        let d = |y| r.hypothesis(y).lack_of_fit;
        for (inner, outer) in [(Diagnosis::AS, Diagnosis::MR), (Diagnosis::MS, Diagnosis::MVP)] {
            if let (Some(a), Some(b)) = (d(inner), d(outer)) {
                checked += 1;
                if a > b + NESTING_TOL {
                    bad += 1;
                }
            }
        }
    }
    (checked, bad)
}

fn improvement_violations<'a>(reports: impl Iterator<Item = &'a CaseReport>) -> (usize, usize) {
    let (mut checked, mut bad) = (0, 0);
    for r in reports {
        for h in &r.hypotheses {
            if let (Some(d), Some(d0)) = (h.lack_of_fit, h.init_lack_of_fit) {
                checked += 1;
                if d > d0 {
                    bad += 1;
                }
            }
        }
    }
    (checked, bad)
}

fn phase_violations<'a>(reports: impl Iterator<Item = &'a CaseReport>) -> (usize, usize) {
    let (mut n, mut bad) = (0, 0);
    for r in reports {
        n += 1;
        let wrong = match r.resolved {
            Diagnosis::MS => r.phase == Phase::Systolic,
            Diagnosis::AS | Diagnosis::MR | Diagnosis::MVP => r.phase == Phase::Diastolic,
            Diagnosis::N => false,
        };
        bad += wrong as usize;
    }
    (n, bad)
}

fn random_params(y: Diagnosis, rng: &mut ChaCha8Rng) -> ShapeParams {
    let t1 = rng.random_range(0.05..0.5);
    let tl = t1 + rng.random_range(0.08..0.45);
    let n_tau = murmurscope::shapes::param_count(y).0;
    let mut tau: Vec<f64> = (0..n_tau.saturating_sub(2)).map(|_| rng.random_range(t1..tl)).collect();
    tau.sort_by(f64::total_cmp);
    let mut all = vec![t1];
    all.extend(tau);
    all.push(tl);
    if y == Diagnosis::MVP {
        // Keep the plateau start inside the segment.
        all[2] = all[2].max(all[1]);
    }
    let pi = (0..murmurscope::shapes::param_count(y).1)
        .map(|k| if k == 0 { rng.random_range(0.0..0.4) } else { rng.random_range(-30.0..30.0) })
        .collect();
    ShapeParams { diagnosis: y, tau: all, pi }
}

fn eval(p: &ShapeParams, t: f64) -> f64 {
    eval_shape(p, t).expect("valid params")
}

/// Count failed shape-algebra checks over randomized parameters.
fn shape_algebra_failures() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let (mut checks, mut fails) = (0usize, 0usize);
    let mut check = |ok: bool| {
        checks += 1;
        fails += (!ok) as usize;
    };
    for y in [Diagnosis::AS, Diagnosis::MR, Diagnosis::MVP, Diagnosis::MS] {
        for _ in 0..SHAPES_PER_FAMILY {
            let p = random_params(y, &mut rng);
            check(validate_params(&p).is_empty());
            let (t1, tl) = (p.tau[0], *p.tau.last().unwrap());
            // Zero outside [t1, tL).
            check(eval(&p, t1 - rng.random_range(1e-6..0.05)) == 0.0);
            check(eval(&p, tl) == 0.0);
            check(eval(&p, tl + rng.random_range(0.0..0.05)) == 0.0);
            // Linear between two points of the same piece.
            for w in p.tau.windows(2) {
                if w[1] - w[0] < 1e-6 {
                    continue;
                }
                let a = rng.random_range(w[0]..w[1]);
                let b = rng.random_range(w[0]..w[1]);
                let m = 0.5 * (a + b);
                let lin = 0.5 * (eval(&p, a) + eval(&p, b));
                check((eval(&p, m) - lin).abs() <= LINEARITY_TOL * (1.0 + lin.abs()));
            }
            let ts: Vec<f64> = (0..32).map(|_| rng.random_range(t1 - 0.05..tl + 0.05)).collect();
            match y {
                Diagnosis::AS => {
                    // AS with zero slopes is MR.
                    let flat = ShapeParams { pi: vec![p.pi[0], 0.0, 0.0], ..p.clone() };
                    let mr = ShapeParams { diagnosis: Diagnosis::MR, tau: vec![t1, tl], pi: vec![p.pi[0]] };
                    for &t in &ts {
                        check(eval(&flat, t) == eval(&mr, t));
                    }
                }
                Diagnosis::MR => {
                    let as_ = ShapeParams { diagnosis: Diagnosis::AS, tau: vec![t1, 0.5 * (t1 + tl), tl], pi: vec![p.pi[0], 0.0, 0.0] };
                    for &t in &ts {
                        check(eval(&as_, t) == eval(&p, t));
                    }
                }
                Diagnosis::MVP => {
                    // Flat after tau3.
                    let plateau = eval(&p, p.tau[2]);
                    for &t in &ts {
                        if p.tau[2] <= t && t < tl {
                            check((eval(&p, t) - plateau).abs() <= LINEARITY_TOL * (1.0 + plateau.abs()));
                        }
                    }
                    // MS with tau4 = tL (or a zero rise) is MVP.
                    let mut tau = p.tau.clone();
                    tau.push(tl);
                    let ms = ShapeParams { diagnosis: Diagnosis::MS, tau, pi: vec![p.pi[0], p.pi[1], rng.random_range(-5.0..5.0)] };
                    let mut tau0 = p.tau.clone();
                    tau0.insert(3, rng.random_range(p.tau[2]..tl));
                    let ms0 = ShapeParams { diagnosis: Diagnosis::MS, tau: tau0, pi: vec![p.pi[0], p.pi[1], 0.0] };
                    for &t in &ts {
                        check(eval(&ms, t) == eval(&p, t));
                        check(eval(&ms0, t) == eval(&p, t));
                    }
                }
                Diagnosis::MS => {
                    let mvp = ShapeParams {
                        diagnosis: Diagnosis::MVP,
                        tau: vec![p.tau[0], p.tau[1], p.tau[2], tl],
                        pi: vec![p.pi[0], p.pi[1]],
                    };
                    for &t in &ts {
                        if t < p.tau[3] {
                            check(eval(&p, t) == eval(&mvp, t));
                        }
                    }
                }
                Diagnosis::N => {}
            }
        }
    }
    (checks, fails)
}

fn read_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).expect("read"));
            }
        }
    }
    out
}

fn main() {
    let mut s = Suite { failed: 0 };
    let cfg = Config::default();

    // 1. Noiseless recovery.
    let start = Instant::now();
    let clean_cases = corpus(None, PER_CLASS);
    let clean = evaluate_cases(&clean_cases, &cfg, None).expect("evaluate noiseless");
    let runtime = start.elapsed().as_secs_f64();
    let (bt, sl, worst) = recovery_errors(&clean.cases);
    let r = &clean.result;
    s.check(
        1,
        "noiseless synthetic recovery",
        r.classes.accuracy == 1.0
            && r.mean_dice >= MIN_DICE_NOISELESS
            && bt <= MAX_BREAKPOINT_ERR_S
            && sl <= MAX_SLOPE_REL_ERR
            && runtime < MAX_RUNTIME_S,
        format!(
            "n={} accuracy={:.4} (=1) dice={:.4} (>={MIN_DICE_NOISELESS}) max|dtau|={:.4}s (<={MAX_BREAKPOINT_ERR_S}, {worst}) max slope rel err={:.4} (<={MAX_SLOPE_REL_ERR}) runtime={runtime:.1}s (<{MAX_RUNTIME_S})",
            r.n_cases, r.classes.accuracy, r.mean_dice, bt, sl
        ),
    );

    // 2. Noisy recovery.
    let noisy_cases = corpus(Some(NOISY_SNR_DB), PER_CLASS);
    let noisy = evaluate_cases(&noisy_cases, &cfg, None).expect("evaluate noisy");
    let r = &noisy.result;
    s.check(
        2,
        "noisy synthetic recovery (20 dB)",
        r.classes.accuracy >= MIN_ACCURACY_NOISY && r.mean_dice >= MIN_DICE_NOISY,
        format!(
            "n={} accuracy={:.4} (>={MIN_ACCURACY_NOISY}) dice={:.4} (>={MIN_DICE_NOISY})",
            r.n_cases, r.classes.accuracy, r.mean_dice
        ),
    );

    // 3. MS overfits an MVP click-plateau; the resolver keeps MVP.
    let ov = SynthOverrides {
        tau: Some(vec![0.355, 0.385, 0.415, 0.555]),
        pi: Some(vec![0.03, 20.5]),
        s1_time_s: Some(0.2),
        s2_time_s: Some(0.63),
    };
    let case = generate(Diagnosis::MVP, Some(&ov), None, CORPUS_SEED).expect("mvp case");
    let t5 = analyze_instance(&AnalysisInput::new(&case.waveform, "table5_mvp"), &cfg).expect("analyze");
    let d_mvp = t5.hypothesis(Diagnosis::MVP).lack_of_fit.unwrap_or(f64::NAN);
    let d_ms = t5.hypothesis(Diagnosis::MS).lack_of_fit.unwrap_or(f64::NAN);
    let gap = (d_ms - d_mvp).abs() / d_mvp.abs().max(f64::MIN_POSITIVE);
    let ms = t5.hypothesis(Diagnosis::MS).params.clone().expect("ms fit");
    let collapse = (ms.tau[4] - ms.tau[3]).abs();
    // Without the phase gate, parsimony alone must still prefer MVP.
    let ungated = rank_hypotheses(&t5.hypotheses, Phase::Unknown, &t5.evidence, &cfg.hypothesis).expect("rank");
    s.check(
        3,
        "MS/MVP overfitting semantics",
        gap <= MAX_MS_MVP_REL_GAP
            && collapse <= MAX_TAU4_COLLAPSE_S
            && t5.phase == Phase::Systolic
            && !t5.hypothesis(Diagnosis::MS).phase_compatible
            && t5.resolved == Diagnosis::MVP
            && ungated.resolved == Diagnosis::MVP,
        format!(
            "d_MVP={d_mvp:.3e} d_MS={d_ms:.3e} rel gap={gap:.4} (<={MAX_MS_MVP_REL_GAP}) |tauL-tau4|={collapse:.4}s (<={MAX_TAU4_COLLAPSE_S}) phase={} resolved={} parsimony-only={}",
            t5.phase, t5.resolved, ungated.resolved
        ),
    );

    // 8. Determinism of the on-disk evaluation (also feeds 4, 5 and 9).
    let tmp = tempfile::tempdir().expect("tempdir");
    let per: BTreeMap<_, _> = Diagnosis::ALL.iter().map(|&y| (y, DETERMINISM_PER_CLASS)).collect();
    let det_corpus = generate_corpus(&SynthConfig::default(), &per, Some(NOISY_SNR_DB), CORPUS_SEED + 1).expect("corpus");
    let cdir = tmp.path().join("corpus");
    write_corpus(&cdir, &det_corpus).expect("write corpus");
    let run_a = evaluate_corpus(&cdir, &cfg, tmp.path().join("a"), Some(1)).expect("eval a");
    evaluate_corpus(&cdir, &cfg, tmp.path().join("b"), Some(4)).expect("eval b");
    let (a, b) = (read_outputs(&tmp.path().join("a")), read_outputs(&tmp.path().join("b")));
    let svgs = a.keys().filter(|k| k.ends_with(".svg")).count();
    let csvs = a.keys().filter(|k| k.ends_with(".csv")).count();

    // 4, 5, 9 over every corpus analyzed here.
    let extra = Evaluation {
        result: run_a.result.clone(),
        cases: vec![CaseOutcome {
            truth: case.truth("table5_mvp"),
            report: t5.clone(),
            score: murmurscope::evaluate::score_case(&case.truth("table5_mvp"), &t5).expect("score"),
        }],
    };
    let evals = [&clean, &noisy, &run_a, &extra];
    let (checked, bad) = nesting_violations(all_reports(&evals));
    s.check(
        4,
        "nesting monotonicity",
        bad == 0 && checked > 0,
        format!("{bad} violations of d_AS<=d_MR+{NESTING_TOL:e} / d_MS<=d_MVP+{NESTING_TOL:e} over {checked} pairs"),
    );
    let (checked, bad) = improvement_violations(all_reports(&evals));
    s.check(
        5,
        "optimization never worsens init",
        bad == 0 && checked > 0,
        format!("{bad} of {checked} (case x diagnosis) fits with d(fitted) > d(init)"),
    );

    // 6. Metric unit exactness.
    let d1 = dice_bits(&[true, true, false, false], &[false, true, true, false]).unwrap();
    let d2 = dice_bits(&[true, false, true], &[true, false, true]).unwrap();
    let mse = segment_param_mse((0.30, 0.50), (0.31, 0.51));
    s.check(
        6,
        "metric unit exactness",
        (d1 - 0.5).abs() <= METRIC_TOL && (d2 - 1.0).abs() <= METRIC_TOL && (mse - 2e-4).abs() <= METRIC_TOL,
        format!("dice={d1} identical={d2} segment_mse={mse:e} (tol {METRIC_TOL:e})"),
    );

    // 7. Shape algebra.
    let (checks, fails) = shape_algebra_failures();
    s.check(
        7,
        "shape algebra property suite",
        fails == 0,
        format!("{fails} failures in {checks} checks ({SHAPES_PER_FAMILY} random shapes per family)"),
    );

    s.check(
        8,
        "evaluation determinism",
        a == b && csvs == 3 && svgs == det_corpus.cases.len(),
        format!("{} files ({csvs} CSV, {svgs} SVG) byte-identical across runs with 1 and 4 workers: {}", a.len(), a == b),
    );

    let (n, bad) = phase_violations(all_reports(&evals));
    s.check(
        9,
        "phase-gate soundness",
        bad == 0,
        format!("{bad} phase-incompatible resolutions over {n} reports"),
    );

    if s.failed > 0 {
        eprintln!("{} acceptance criteria failed", s.failed);
        std::process::exit(1);
    }
}
