//! The abduction engine: initialize, fit and rank every diagnosis
//! hypothesis against the murmur envelope.

mod fit;
mod init;
mod rank;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::Optimizer;
use crate::shapes::{Diagnosis, ShapeParams, ShapeSeries};

pub use fit::{fit_all, fit_shape, lack_of_fit};
pub use init::{init_params, Initialization};
pub use rank::{phase_compatible, rank_hypotheses, resolve_diagnosis, MurmurEvidence};

pub(crate) use fit::delta_series;

/// Typical MS breakpoint spacings used to seed the MS hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Priors {
    pub ms_median_dtau12_s: f64,
    #[serde(rename = "ms_median_dtau4L_s")]
    pub ms_median_dtau4l_s: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            ms_median_dtau12_s: 0.06,
            ms_median_dtau4l_s: 0.10,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ms_median_dtau12_s", self.ms_median_dtau12_s),
            ("ms_median_dtau4L_s", self.ms_median_dtau4l_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Priors> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Priors = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesisConfig {
    pub optimizer: Optimizer,
    pub max_iters: usize,
    pub obj_tol: f64,
    /// Relative lack-of-fit margin within which two fits count as tied.
    pub parsimony_rho: f64,
    /// Multiples of the envelope noise variance added to the tie margin.
    pub noise_allowance: f64,
    /// Softmax temperature for scores; the median lack-of-fit when unset.
    pub softmax_temperature: Option<f64>,
    pub free_endpoints: bool,
    pub n_gate_factor: f64,
    pub blend_weight: f64,
    /// Seed the simplex from the best breakpoint combination on the grid.
    pub grid_seeding: bool,
    pub priors: Priors,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        HypothesisConfig {
            optimizer: Optimizer::NelderMead,
            max_iters: 500,
            obj_tol: 1e-10,
            parsimony_rho: 0.05,
            noise_allowance: 1.0,
            softmax_temperature: None,
            free_endpoints: false,
            n_gate_factor: 1.5,
            blend_weight: 0.5,
            grid_seeding: true,
            priors: Priors::default(),
        }
    }
}

impl HypothesisConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        let bad = |what: &str| Err(Error::Validation(format!("hypothesis.{what}")));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.obj_tol.is_finite() && self.obj_tol >= 0.0) {
            return bad("obj_tol must be non-negative");
        }
        if !(self.parsimony_rho.is_finite() && (0.0..1.0).contains(&self.parsimony_rho)) {
            return bad("parsimony_rho must be in [0, 1)");
        }
        if !(self.noise_allowance.is_finite() && self.noise_allowance >= 0.0) {
            return bad("noise_allowance must be non-negative");
        }
        if self
            .softmax_temperature
            .is_some_and(|t| !(t.is_finite() && t > 0.0))
        {
            return bad("softmax_temperature must be positive");
        }
        if !(self.n_gate_factor.is_finite() && self.n_gate_factor >= 0.0) {
            return bad("n_gate_factor must be non-negative");
        }
        if !(self.blend_weight.is_finite() && (0.0..=1.0).contains(&self.blend_weight)) {
            return bad("blend_weight must be in [0, 1]");
        }
        Ok(())
    }
}

/// One diagnosis hypothesis after optimization.
///
/// Without a murmur segment the non-N hypotheses cannot be evaluated; their
/// parameters, shape and lack-of-fit are then absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedHypothesis {
    pub diagnosis: Diagnosis,
    pub init_params: Option<ShapeParams>,
    pub params: Option<ShapeParams>,
    pub shape: Option<ShapeSeries>,
    pub lack_of_fit: Option<f64>,
    pub init_lack_of_fit: Option<f64>,
    pub phase_compatible: bool,
    pub n_free_params: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Which start produced the returned parameters.
    pub start: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FittedHypothesis {
    pub fn evaluated(&self) -> bool {
        self.lack_of_fit.is_some()
    }
}

/// Outcome of ranking all five hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRanking {
    pub order: Vec<Diagnosis>,
    pub resolved: Diagnosis,
    pub scores: std::collections::BTreeMap<Diagnosis, f64>,
    /// Set when parsimony picked a hypothesis other than the best fit.
    pub tie_break_fired: bool,
    /// Set when N was chosen by a gate rather than by comparing fits.
    pub gated: bool,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Free scalars the optimizer adjusts for a family.
pub fn n_free_params(y: Diagnosis, free_endpoints: bool) -> usize {
    let (n_tau, n_pi) = crate::shapes::param_count(y);
    if n_tau == 0 {
        return 0;
    }
    let interior = n_tau - 2;
    n_pi + interior + if free_endpoints { 2 } else { 0 }
}
