//! # murmurscope
//!
//! Abductive diagnosis of valvular heart disease from phonocardiogram (PCG)
//! recordings. Each one-second instance is reduced to an amplitude envelope,
//! a murmur segment is located between the S1/S2 heart sounds, and every
//! diagnosis hypothesis (N, AS, MR, MVP, MS) is fitted to the segment as a
//! piecewise-linear murmur shape. Hypotheses are ranked by lack-of-fit,
//! gated by heart phase and tie-broken by parsimony; the winning shape and
//! its alternatives are rendered as murmur diagrams.
//!
//! ```text
//! WAV -> window -> envelope -> S1/S2 -> segment -> init -> fit -> rank -> explain/render
//! ```
//!
//! The [`synth`] module generates ground-truth instances for every family so
//! that the whole pipeline can be verified without clinical data.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod hypothesis;
pub mod metrics;
pub mod optimize;
pub mod render;
pub mod report;
pub mod segmentation;
pub mod shapes;
pub mod signal;
pub mod synth;

pub use config::Config;
pub use error::{Error, Result};
pub use hypothesis::{FittedHypothesis, HypothesisRanking, Priors};
pub use report::{analyze_instance, AnalysisInput, CaseReport};
pub use segmentation::{Mask, Segment};
pub use shapes::{Diagnosis, ShapeParams, ShapeSeries};
pub use signal::{Envelope, HeartEvents, Phase, Waveform};
