//! Post-model evaluation toolkit for sentence-level human-value detection.
//!
//! Takes per-sentence probability outputs from any detector (19 value
//! probabilities, or a single moral-presence probability), merges them with
//! gold labels, and runs the downstream pipeline: threshold calibration,
//! presence-gated composition, voting ensembles with statistically gated
//! forward selection, and paired significance testing. A seeded synthetic
//! generator makes every stage verifiable without the licensed corpus.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod gating;
pub mod metrics;
pub mod num;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod thresholds;
pub mod values;

pub use data::{align, AlignedPair, BinaryMatrix, GoldMatrix, ProbMatrix, SentenceKey};
pub use error::{Error, Result};
pub use num::Scalar;
pub use values::{ValueTaxonomy, NUM_VALUES, VALUE_NAMES};

/// Default scalar used by the CLI and the TSV loaders.
pub type Prob = f64;

/// Threshold set over the default scalar.
pub type Thresholds = thresholds::ThresholdSet<Prob>;
