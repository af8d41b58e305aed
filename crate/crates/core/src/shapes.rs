//! Piecewise-linear murmur shape families.
//!
//! Every family is zero outside the half-open murmur segment `[tau_1, tau_L)`.
//! Breakpoint vectors hold, in order:
//!
//! | family | `tau`                          | `pi`              |
//! |--------|--------------------------------|-------------------|
//! | N      | –                              | –                 |
//! | AS     | `t1, t2, tL`                   | `p0, p1, p2`      |
//! | MR     | `t1, tL`                       | `p0`              |
//! | MVP    | `t1, t2, t3, tL`               | `p0, p1`          |
//! | MS     | `t1, t2, t3, t4, tL`           | `p0, p1, p2`      |
//!
//! Interior brackets are closed on the left (`[t2 <= t]`), nested in the
//! order written above.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diagnosis {
    N,
    AS,
    MR,
    MVP,
    MS,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 5] = [
        Diagnosis::N,
        Diagnosis::AS,
        Diagnosis::MR,
        Diagnosis::MVP,
        Diagnosis::MS,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Phase in which this murmur occurs; `None` for normal.
    pub fn murmur_phase(self) -> Option<Phase> {
        match self {
            Diagnosis::N => None,
            Diagnosis::MS => Some(Phase::Diastolic),
            _ => Some(Phase::Systolic),
        }
    }

    /// Position in the subsumption chain `N < MR < AS < MVP < MS`.
    pub fn expressiveness(self) -> u8 {
        match self {
            Diagnosis::N => 0,
            Diagnosis::MR => 1,
            Diagnosis::AS => 2,
            Diagnosis::MVP => 3,
            Diagnosis::MS => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Diagnosis::N => "N",
            Diagnosis::AS => "AS",
            Diagnosis::MR => "MR",
            Diagnosis::MVP => "MVP",
            Diagnosis::MS => "MS",
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Diagnosis::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown diagnosis '{s}'")))
    }
}

/// `(n_tau, n_pi)` for a family.
pub fn param_count(y: Diagnosis) -> (usize, usize) {
    match y {
        Diagnosis::N => (0, 0),
        Diagnosis::AS => (3, 3),
        Diagnosis::MR => (2, 1),
        Diagnosis::MVP => (4, 2),
        Diagnosis::MS => (5, 3),
    }
}

/// Diagnosis-specific shape parameters: breakpoint times (s) and
/// intercept/slope values (amplitude, amplitude per second).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub diagnosis: Diagnosis,
    pub tau: Vec<f64>,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    CountMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite,
    NotOrdered,
    EmptySegment,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CountMismatch { expected, found } => write!(
                f,
                "parameter count mismatch: expected {expected:?} (tau, pi), found {found:?}"
            ),
            Violation::NonFinite => f.write_str("non-finite parameter value"),
            Violation::NotOrdered => f.write_str("breakpoints not ordered"),
            Violation::EmptySegment => f.write_str("segment start not before segment end"),
        }
    }
}

pub fn validate_params(p: &ShapeParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let expected = param_count(p.diagnosis);
    let found = (p.tau.len(), p.pi.len());
    if expected != found {
        out.push(Violation::CountMismatch { expected, found });
    }
    if p.tau.iter().chain(&p.pi).any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite);
    }
    if p.tau.windows(2).any(|w| w[1] < w[0]) {
        out.push(Violation::NotOrdered);
    }
    if p.tau.len() >= 2 && p.tau[0] >= p.tau[p.tau.len() - 1] {
        out.push(Violation::EmptySegment);
    }
    out
}

impl ShapeParams {
    pub fn new(diagnosis: Diagnosis, tau: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        let p = ShapeParams { diagnosis, tau, pi };
        p.check()?;
        Ok(p)
    }

    pub fn normal() -> Self {
        ShapeParams {
            diagnosis: Diagnosis::N,
            tau: Vec::new(),
            pi: Vec::new(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let v = validate_params(self);
        if v.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = v.iter().map(|v| v.to_string()).collect();
            Err(Error::Contract(format!("{} params: {}", self.diagnosis, msgs.join("; "))))
        }
    }

    /// `(tau_1, tau_L)`, absent for N.
    pub fn segment(&self) -> Option<(f64, f64)> {
        match (self.tau.first(), self.tau.last()) {
            (Some(&a), Some(&b)) => Some((a, b)),
            _ => None,
        }
    }

    /// Flat `(tau, pi)` vector, the layout used by parameter error metrics.
    pub fn theta(&self) -> Vec<f64> {
        self.tau.iter().chain(&self.pi).copied().collect()
    }
}

/// Shape evaluated on an envelope grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSeries {
    pub diagnosis: Diagnosis,
    pub params: ShapeParams,
    pub values: Vec<f64>,
}

/// Table-form evaluation without validation; callers guarantee the layout.
pub(crate) fn eval_unchecked(y: Diagnosis, tau: &[f64], pi: &[f64], t: f64) -> f64 {
    if y == Diagnosis::N {
        return 0.0;
    }
    let (t1, tl) = (tau[0], tau[tau.len() - 1]);
    if !(t1 <= t && t < tl) {
        return 0.0;
    }
    match y {
        Diagnosis::N => 0.0,
        Diagnosis::MR => pi[0],
        Diagnosis::AS => {
            let mut v = pi[0] + pi[1] * (t - t1);
            if tau[1] <= t {
                v += -(pi[1] + pi[2]) * (t - tau[1]);
            }
            v
        }
        Diagnosis::MVP | Diagnosis::MS => {
            let mut v = pi[0] + pi[1] * (t - t1);
            if tau[1] <= t {
                let mut inner = -2.0 * pi[1] * (t - tau[1]);
                if tau[2] <= t {
                    let mut innermost = pi[1] * (t - tau[2]);
                    if y == Diagnosis::MS && tau[3] <= t {
                        innermost += pi[2] * (t - tau[3]);
                    }
                    inner += innermost;
                }
                v += inner;
            }
            v
        }
    }
}

pub fn eval_shape(p: &ShapeParams, t: f64) -> Result<f64> {
    p.check()?;
    Ok(eval_unchecked(p.diagnosis, &p.tau, &p.pi, t))
}

pub fn eval_shape_series(p: &ShapeParams, grid: &[f64]) -> Result<ShapeSeries> {
    p.check()?;
    Ok(ShapeSeries {
        diagnosis: p.diagnosis,
        params: p.clone(),
        values: grid
            .iter()
            .map(|&t| eval_unchecked(p.diagnosis, &p.tau, &p.pi, t))
            .collect(),
    })
}

/// Per-slope basis functions at `t`: the shape equals `sum(pi[i] * basis[i])`.
///
/// With the breakpoints fixed every family is linear in its `pi` values,
/// which lets the fitter solve the slopes by least squares.
pub(crate) fn slope_basis(y: Diagnosis, tau: &[f64], t: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|b| *b = 0.0);
    if y == Diagnosis::N {
        return;
    }
    let (t1, tl) = (tau[0], tau[tau.len() - 1]);
    if !(t1 <= t && t < tl) {
        return;
    }
    let hinge = |k: f64| if k <= t { t - k } else { 0.0 };
    out[0] = 1.0;
    match y {
        Diagnosis::N | Diagnosis::MR => {}
        Diagnosis::AS => {
            let h2 = hinge(tau[1]);
            out[1] = (t - t1) - h2;
            out[2] = -h2;
        }
        Diagnosis::MVP | Diagnosis::MS => {
            let (h2, h3) = (hinge(tau[1]), hinge(tau[2]));
            out[1] = (t - t1) - 2.0 * h2 + if tau[1] <= t { h3 } else { 0.0 };
            if y == Diagnosis::MS {
                out[2] = if tau[1] <= t && tau[2] <= t { hinge(tau[3]) } else { 0.0 };
            }
        }
    }
}

/// Corner points `(t, value)` of the shape polygon from `tau_1` to the left
/// limit at `tau_L`. Empty for N.
pub fn vertices(p: &ShapeParams) -> Vec<(f64, f64)> {
    if p.diagnosis == Diagnosis::N || p.tau.len() < 2 {
        return Vec::new();
    }
    // The shape is continuous on [tau_1, tau_L), so evaluating with an
    // open right end gives each corner, including the left limit at tau_L
    // and interior breakpoints that coincide with it.
    let mut open = p.tau.clone();
    if let Some(last) = open.last_mut() {
        *last = f64::INFINITY;
    }
    let mut pts: Vec<(f64, f64)> = p
        .tau
        .iter()
        .map(|&t| (t, eval_unchecked(p.diagnosis, &open, &p.pi, t)))
        .collect();
    pts.dedup_by(|b, a| a.0 == b.0);
    pts
}
