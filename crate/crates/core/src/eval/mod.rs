//! Accuracy, the repeated-trial evaluation protocol and frame export.

pub mod accuracy;
pub mod frames;
pub mod protocol;
pub mod regen;

pub use accuracy::{accuracy, coverage, match_counts, match_counts_outside, predicted_classes};
pub use frames::{export_frames, frame_name, write_frame};
pub use protocol::{
    evaluate, grow_start, majority_baseline, time_rollouts, EvalConfig, EvalReport, LocationResult, SampleResult,
    TimingStats,
};
pub use regen::{regeneration_trial, RegenTrial};
