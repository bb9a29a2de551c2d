#![cfg_attr(not(test), no_std)]

//! Streaming procedure step recognition (PSR) engine.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It covers:
//!
//! - [`procedure`]: procedures, assembly-state bit-vectors and step events;
//! - [`metrics`]: POS, F1 with temporal matching, and average delay;
//! - [`filter`]: the confidence-accumulation filter and stream fusion;
//! - [`inference`]: turning assembly-state detections into step probabilities;
//! - [`sampling`]: key-clip aware sampling, clip labels and key-frame batches;
//! - [`losses`]: numeric reference values for the multi-label BCE and SupCon losses;
//! - [`simulator`]: a seeded occlusion simulator producing both detector streams.
//!
//! File formats and the command line live in the `psr-tools` crate.

extern crate alloc;

pub mod error;
pub mod filter;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod procedure;
pub mod rng;
pub mod sampling;
pub mod simulator;

pub use crate::error::{PsrError, Result};
pub use crate::filter::{
    fuse, fuse_streams, run_filter, ConfidenceFrame, FilterConfig, FusionWeights, RecognitionFilter, StreamKind,
};
pub use crate::inference::{asd_stream_probs, infer_steps, AsdCursor, AsdStreamConfig, StateDetection};
pub use crate::metrics::{
    aggregate, average_delay, damerau_levenshtein, evaluate, f1_score, match_predictions, pos_score, DatasetSummary,
    EditWeights, EvalOptions, EvaluationReport, F1Score, MatchLedger, MatchStrategy,
};
pub use crate::procedure::{
    cumulative_state, frame_to_seconds, state_diff, Action, ActionId, AssemblyState, ComponentBits, EventSequence, Fps,
    Procedure, StepEvent, StepKind,
};
