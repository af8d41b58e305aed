use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::optimize::{minimize, OptOptions};
use crate::segmentation::{Mask, Segment};
use crate::shapes::{eval_shape_series, eval_unchecked, param_count, slope_basis, Diagnosis, ShapeParams, ShapeSeries};
use crate::signal::{Envelope, Phase};

use super::init::segment_points;
use super::{init_params, n_free_params, phase_compatible, FittedHypothesis, HypothesisConfig};

/// Penalty weight for breakpoints that leave their order or the segment.
const ORDER_PENALTY: f64 = 1e3;
/// Upper bound on breakpoint combinations scanned when grid seeding.
const GRID_LIMIT: usize = 200_000;

/// Least-squares view of one hypothesis over the in-segment grid.
///
/// With breakpoints fixed every family is linear in its `pi` values, so the
/// optimizer only searches the breakpoints and the slopes are solved exactly.
struct Problem {
    y: Diagnosis,
    t: Vec<f64>,
    a: Vec<f64>,
    seg: Segment,
    free_endpoints: bool,
    n_inner: usize,
    n_pi: usize,
    step: f64,
}

impl Problem {
    fn new(y: Diagnosis, e: &Envelope, seg: &Segment, free_endpoints: bool) -> Problem {
        let pts = segment_points(e, seg);
        let (n_tau, n_pi) = param_count(y);
        Problem {
            y,
            t: pts.iter().map(|&(_, t)| t).collect(),
            a: pts.iter().map(|&(k, _)| e.values()[k]).collect(),
            seg: *seg,
            free_endpoints,
            n_inner: n_tau.saturating_sub(2),
            n_pi,
            step: e.step_s(),
        }
    }

    /// Optimizer coordinates for a breakpoint vector.
    fn coords(&self, tau: &[f64]) -> Vec<f64> {
        if self.free_endpoints {
            tau.to_vec()
        } else {
            tau[1..tau.len() - 1].to_vec()
        }
    }

    /// Ordered, clamped breakpoints for coordinates `x`, plus the penalty
    /// for how far `x` strays from a feasible vector.
    fn taus(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut pen: f64 = sorted.iter().zip(x).map(|(s, v)| (s - v).powi(2)).sum();
        let tau = if self.free_endpoints {
            let mut tau = sorted;
            let last = tau.len() - 1;
            if tau[last] - tau[0] < self.step {
                pen += (self.step - (tau[last] - tau[0])).powi(2);
                tau[last] = tau[0] + self.step;
            }
            tau
        } else {
            let (lo, hi) = (self.seg.start_s, self.seg.end_s);
            let mut tau = Vec::with_capacity(sorted.len() + 2);
            tau.push(lo);
            for s in sorted {
                pen += (lo - s).max(0.0).powi(2) + (s - hi).max(0.0).powi(2);
                tau.push(s.clamp(lo, hi));
            }
            tau.push(hi);
            tau
        };
        (tau, ORDER_PENALTY * pen)
    }

    /// Minimum-norm least-squares slopes for fixed breakpoints.
    fn solve_pi(&self, tau: &[f64]) -> Vec<f64> {
        let mut g = Matrix3::<f64>::zeros();
        let mut r = Vector3::<f64>::zeros();
        let mut b = [0.0; 3];
        for (&t, &a) in self.t.iter().zip(&self.a) {
            slope_basis(self.y, tau, t, &mut b[..self.n_pi]);
            for i in 0..self.n_pi {
                r[i] += b[i] * a;
                for j in 0..self.n_pi {
                    g[(i, j)] += b[i] * b[j];
                }
            }
        }
        let svd = g.svd(true, true);
        let smax = svd.singular_values.max();
        let pi = if smax > 0.0 {
            svd.solve(&r, smax * 1e-12).unwrap_or_else(|_| Vector3::zeros())
        } else {
            Vector3::zeros()
        };
        pi.iter().take(self.n_pi).copied().collect()
    }

    /// Mean squared residual of the exact shape formula over the segment.
    fn lack_of_fit(&self, tau: &[f64], pi: &[f64]) -> f64 {
        if self.t.is_empty() {
            return 0.0;
        }
        let ss: f64 = self
            .t
            .iter()
            .zip(&self.a)
            .map(|(&t, &a)| (eval_unchecked(self.y, tau, pi, t) - a).powi(2))
            .sum();
        ss / self.t.len() as f64
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let (tau, pen) = self.taus(x);
        let pi = self.solve_pi(&tau);
        self.lack_of_fit(&tau, &pi) + pen
    }

    /// Best non-decreasing interior breakpoint combination on the grid.
    fn grid_seed(&self) -> Option<Vec<f64>> {
        let k = self.n_inner;
        if k == 0 {
            return None;
        }
        let mut pts: Vec<f64> = self.t.clone();
        pts.push(self.seg.end_s);
        let mut stride = 1;
        while combinations(pts.len().div_ceil(stride) + k - 1, k) > GRID_LIMIT {
            stride += 1;
        }
        let pts: Vec<f64> = pts.into_iter().step_by(stride).collect();
        let mut idx = vec![0usize; k];
        let mut inner = vec![0.0; k];
        let mut best: Option<(f64, Vec<f64>)> = None;
        loop {
            for (v, &i) in inner.iter_mut().zip(&idx) {
                *v = pts[i];
            }
            let mut tau = Vec::with_capacity(k + 2);
            tau.push(self.seg.start_s);
            tau.extend_from_slice(&inner);
            tau.push(self.seg.end_s);
            let d = self.lack_of_fit(&tau, &self.solve_pi(&tau));
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, inner.clone()));
            }
            // Next multiset in lexicographic order.
            let Some(pos) = (0..k).rev().find(|&p| idx[p] + 1 < pts.len()) else {
                break;
            };
            let next = idx[pos] + 1;
            idx[pos..].iter_mut().for_each(|i| *i = next);
        }
        best.map(|(_, inner)| {
            if self.free_endpoints {
                let mut tau = vec![self.seg.start_s];
                tau.extend(inner);
                tau.push(self.seg.end_s);
                tau
            } else {
                inner
            }
        })
    }
}

fn combinations(n: usize, k: usize) -> usize {
    let mut c: usize = 1;
    for i in 0..k {
        c = c.saturating_mul(n - i) / (i + 1);
    }
    c
}

struct Candidate {
    label: &'static str,
    tau: Vec<f64>,
    pi: Vec<f64>,
    d: f64,
    converged: bool,
    iterations: usize,
}

/// Optimize hypothesis `y` over `seg`, starting from `init`.
///
/// `warm` optionally supplies the solution of a nested simpler family
/// already embedded in `y`'s parameterization. The returned fit is the
/// first of (warm, warm-optimized, init, init-optimized, grid-optimized)
/// whose lack-of-fit is within `obj_tol` of the best found and never above
/// the lack-of-fit at `init`.
pub fn fit_shape(
    y: Diagnosis,
    e: &Envelope,
    seg: &Segment,
    init: &ShapeParams,
    warm: Option<&ShapeParams>,
    cfg: &HypothesisConfig,
) -> Result<FittedHypothesis> {
    if init.diagnosis != y {
        return Err(Error::Contract(format!(
            "init params are for {}, fitting {y}",
            init.diagnosis
        )));
    }
    init.check()?;
    if let Some(w) = warm {
        if w.diagnosis != y {
            return Err(Error::Contract(format!("warm start is for {}, fitting {y}", w.diagnosis)));
        }
        w.check()?;
    }
    let grid = e.times();
    if y == Diagnosis::N {
        let shape = eval_shape_series(init, &grid)?;
        let p = Problem::new(y, e, seg, false);
        let d = p.lack_of_fit(&[], &[]);
        return Ok(FittedHypothesis {
            diagnosis: y,
            init_params: Some(init.clone()),
            params: Some(init.clone()),
            shape: Some(shape),
            lack_of_fit: Some(d),
            init_lack_of_fit: Some(d),
            phase_compatible: true,
            n_free_params: 0,
            converged: true,
            iterations: 0,
            start: "init".into(),
            warnings: Vec::new(),
        });
    }

    let p = Problem::new(y, e, seg, cfg.free_endpoints);
    let opts = OptOptions {
        max_iters: cfg.max_iters,
        ftol: cfg.obj_tol,
        xtol: 1e-6,
    };
    let raw = |label, params: &ShapeParams| Candidate {
        label,
        tau: params.tau.clone(),
        pi: params.pi.clone(),
        d: p.lack_of_fit(&params.tau, &params.pi),
        converged: true,
        iterations: 0,
    };
    let optimized = |label, x0: Vec<f64>| {
        let r = minimize(cfg.optimizer, |x| p.objective(x), &x0, &opts);
        let (tau, _) = p.taus(&r.x);
        let pi = p.solve_pi(&tau);
        Candidate {
            label,
            d: p.lack_of_fit(&tau, &pi),
            tau,
            pi,
            converged: r.converged,
            iterations: r.iterations,
        }
    };

    let mut cands = Vec::with_capacity(5);
    if let Some(w) = warm {
        cands.push(raw("warm", w));
        cands.push(optimized("warm-optimized", p.coords(&w.tau)));
    }
    let init_cand = raw("init", init);
    let d_init = init_cand.d;
    cands.push(init_cand);
    cands.push(optimized("init-optimized", p.coords(&init.tau)));
    if cfg.grid_seeding {
        if let Some(x0) = p.grid_seed() {
            cands.push(optimized("grid-optimized", x0));
        }
    }

    let d_best = cands.iter().map(|c| c.d).fold(f64::INFINITY, f64::min);
    let accept = (d_best + cfg.obj_tol).min(d_init);
    let chosen = cands
        .into_iter()
        .find(|c| c.d <= accept)
        .expect("the minimum-d candidate always qualifies");

    let params = ShapeParams::new(y, chosen.tau, chosen.pi)?;
    let shape = eval_shape_series(&params, &grid)?;
    let mut warnings = Vec::new();
    if !chosen.converged {
        warnings.push(format!(
            "{y}: optimizer stopped after {} iterations without converging",
            chosen.iterations
        ));
    }
    Ok(FittedHypothesis {
        diagnosis: y,
        init_params: Some(init.clone()),
        params: Some(params),
        shape: Some(shape),
        lack_of_fit: Some(chosen.d),
        init_lack_of_fit: Some(d_init),
        phase_compatible: true,
        n_free_params: n_free_params(y, cfg.free_endpoints),
        converged: chosen.converged,
        iterations: chosen.iterations,
        start: chosen.label.into(),
        warnings,
    })
}

/// Mean squared in-mask residual between a shape and the envelope.
///
/// With an empty mask the lack-of-fit is only defined for N, as the mean
/// squared shape value over the whole instance.
pub fn lack_of_fit(shape: &ShapeSeries, e: &Envelope, m: &Mask) -> Result<f64> {
    m.check_aligned(e)?;
    if shape.values.len() != e.len() {
        return Err(Error::Alignment(format!(
            "shape has {} points, envelope has {}",
            shape.values.len(),
            e.len()
        )));
    }
    let n = m.count();
    if n == 0 {
        if shape.diagnosis != Diagnosis::N {
            return Err(Error::InvalidInput(format!(
                "lack-of-fit of {} over an empty mask",
                shape.diagnosis
            )));
        }
        let len = shape.values.len().max(1) as f64;
        return Ok(shape.values.iter().map(|v| v * v).sum::<f64>() / len);
    }
    let ss: f64 = m
        .indices()
        .map(|k| (shape.values[k] - e.values()[k]).powi(2))
        .sum();
    Ok(ss / n as f64)
}

/// Signed series `shape - envelope` inside the mask, zero elsewhere.
pub(crate) fn delta_series(shape: &[f64], e: &Envelope, m: &Mask) -> Vec<f64> {
    (0..e.len())
        .map(|k| if m.bits[k] { shape[k] - e.values()[k] } else { 0.0 })
        .collect()
}

fn unevaluated(y: Diagnosis, cfg: &HypothesisConfig) -> FittedHypothesis {
    FittedHypothesis {
        diagnosis: y,
        init_params: None,
        params: None,
        shape: None,
        lack_of_fit: None,
        init_lack_of_fit: None,
        phase_compatible: true,
        n_free_params: n_free_params(y, cfg.free_endpoints),
        converged: true,
        iterations: 0,
        start: "none".into(),
        warnings: vec![format!("{y}: no murmur segment to fit")],
    }
}

fn fit_from_init(
    y: Diagnosis,
    e: &Envelope,
    seg: &Segment,
    warm: Option<&ShapeParams>,
    cfg: &HypothesisConfig,
) -> Result<FittedHypothesis> {
    let init = init_params(y, e, seg, &cfg.priors)?;
    let mut fit = fit_shape(y, e, seg, &init.params, warm, cfg)?;
    let mut warnings = init.warnings;
    warnings.append(&mut fit.warnings);
    fit.warnings = warnings;
    Ok(fit)
}

/// Fit all five hypotheses, returned in `Diagnosis::ALL` order.
///
/// AS is warm-started from the MR solution (zero slopes, apex at its init)
/// and MS from the MVP solution (`tau_4 = tau_L`, zero final slope), so each
/// richer family fits at least as well as the family it nests.
pub fn fit_all(
    e: &Envelope,
    seg: Option<&Segment>,
    phase: Phase,
    cfg: &HypothesisConfig,
) -> Result<Vec<FittedHypothesis>> {
    let mut fits = match seg {
        None => {
            let n = ShapeParams::normal();
            let shape = eval_shape_series(&n, &e.times())?;
            let normal = FittedHypothesis {
                diagnosis: Diagnosis::N,
                init_params: Some(n.clone()),
                params: Some(n),
                shape: Some(shape),
                lack_of_fit: Some(0.0),
                init_lack_of_fit: Some(0.0),
                phase_compatible: true,
                n_free_params: 0,
                converged: true,
                iterations: 0,
                start: "init".into(),
                warnings: Vec::new(),
            };
            let mut v = vec![normal];
            v.extend(Diagnosis::ALL[1..].iter().map(|&y| unevaluated(y, cfg)));
            v
        }
        Some(seg) => {
            let n = fit_shape(Diagnosis::N, e, seg, &ShapeParams::normal(), None, cfg)?;
            let (systolic, mitral) = rayon::join(
                || -> Result<(FittedHypothesis, FittedHypothesis)> {
                    let mr = fit_from_init(Diagnosis::MR, e, seg, None, cfg)?;
                    let as_init = init_params(Diagnosis::AS, e, seg, &cfg.priors)?;
                    let mr_p = mr.params.as_ref().expect("MR fitted");
                    let warm = ShapeParams::new(
                        Diagnosis::AS,
                        vec![mr_p.tau[0], as_init.params.tau[1], mr_p.tau[1]],
                        vec![mr_p.pi[0], 0.0, 0.0],
                    )?;
                    let a = fit_from_init(Diagnosis::AS, e, seg, Some(&warm), cfg)?;
                    Ok((a, mr))
                },
                || -> Result<(FittedHypothesis, FittedHypothesis)> {
                    let mvp = fit_from_init(Diagnosis::MVP, e, seg, None, cfg)?;
                    let v = mvp.params.as_ref().expect("MVP fitted");
                    let tl = v.tau[3];
                    let warm = ShapeParams::new(
                        Diagnosis::MS,
                        vec![v.tau[0], v.tau[1], v.tau[2], tl, tl],
                        vec![v.pi[0], v.pi[1], 0.0],
                    )?;
                    let ms = fit_from_init(Diagnosis::MS, e, seg, Some(&warm), cfg)?;
                    Ok((mvp, ms))
                },
            );
            let (a, mr) = systolic?;
            let (mvp, ms) = mitral?;
            vec![n, a, mr, mvp, ms]
        }
    };
    for f in &mut fits {
        f.phase_compatible = phase_compatible(f.diagnosis, phase);
    }
    Ok(fits)
}
