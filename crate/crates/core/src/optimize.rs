//! Small dense minimizers used by the shape fitter.
//!
//! Both are deterministic: the same objective and start point always follow
//! the same path.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    NelderMead,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptOptions {
    pub max_iters: usize,
    /// Absolute spread of objective values at which the search stops.
    pub ftol: f64,
    /// Absolute spread of coordinates at which the search stops.
    pub xtol: f64,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            max_iters: 500,
            ftol: 1e-10,
            xtol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn minimize<F>(method: Optimizer, f: F, x0: &[f64], opts: &OptOptions) -> OptResult
where
    F: FnMut(&[f64]) -> f64,
{
    match method {
        Optimizer::NelderMead => nelder_mead(f, x0, opts),
        Optimizer::Lbfgs => lbfgs(f, x0, opts),
    }
}

/// Downhill simplex with the usual reflection/expansion/contraction/shrink
/// coefficients (1, 2, 1/2, 1/2). The start simplex perturbs each
/// coordinate by 5% (or 2.5e-4 when it is zero).
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &OptOptions) -> OptResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return OptResult {
            x: Vec::new(),
            f: f(x0),
            iterations: 0,
            converged: true,
        };
    }
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] = if v[i] != 0.0 { v[i] * 1.05 } else { 2.5e-4 };
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        sort_simplex(&mut simplex, &mut fv);
        let f_spread = fv[1..].iter().map(|v| (v - fv[0]).abs()).fold(0.0, f64::max);
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread <= opts.ftol && x_spread <= opts.xtol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < fv[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
            continue;
        }
        if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < fv[n] {
            let xc = along(0.5);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = f(&xc);
            (xc, fc)
        };
        if fc < fv[n].min(fr) {
            simplex[n] = xc;
            fv[n] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        let best = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            fv[i] = f(&simplex[i]);
        }
    }
    sort_simplex(&mut simplex, &mut fv);
    OptResult {
        x: simplex.swap_remove(0),
        f: fv[0],
        iterations,
        converged,
    }
}

fn sort_simplex(simplex: &mut Vec<Vec<f64>>, fv: &mut Vec<f64>) {
    let mut idx: Vec<usize> = (0..fv.len()).collect();
    // Stable on ties so the path does not depend on anything but values.
    idx.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
    *simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
    *fv = idx.iter().map(|&i| fv[i]).collect();
}

fn numeric_grad<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-7 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS (memory 5) with central-difference gradients and an
/// Armijo backtracking line search.
pub fn lbfgs<F>(mut f: F, x0: &[f64], opts: &OptOptions) -> OptResult
where
    F: FnMut(&[f64]) -> f64,
{
    const MEMORY: usize = 5;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if n == 0 {
        return OptResult {
            x,
            f: fx,
            iterations: 0,
            converged: true,
        };
    }
    let mut g = numeric_grad(&mut f, &x);
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            hist.clear();
        }
        if slope == 0.0 {
            converged = true;
            break;
        }

        let mut step = if hist.is_empty() {
            (1e-2 / d.iter().map(|v| v.abs()).fold(0.0, f64::max)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let fxn = f(&xn);
            if fxn <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fxn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            converged = true;
            break;
        };
        let gn = numeric_grad(&mut f, &xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let x_move = s.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let f_move = (fx - fxn).abs();
        x = xn;
        fx = fxn;
        g = gn;
        if sy > 1e-300 {
            hist.push((s, y, 1.0 / sy));
            if hist.len() > MEMORY {
                hist.remove(0);
            }
        }
        if f_move <= opts.ftol && x_move <= opts.xtol {
            converged = true;
            break;
        }
    }
    OptResult {
        x,
        f: fx,
        iterations,
        converged,
    }
}
