//! Neural cellular automaton engine for class-map regeneration and prediction.
//!
//! Cells carry `k` class logits, an aliveness channel and hidden signals. A
//! shared two-layer network reads each cell's multi-scale perception vector and
//! proposes an increment; masks decide which cells apply it, and pre-explored
//! cells are additionally forced toward known class distributions.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training and inference,
//! `f64` for gradient checks); the `*32` / `*64` aliases below name the common
//! instantiations.

pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod model;
pub mod perception;
pub mod scalar;
pub mod serde_u64;
pub mod step;
pub mod trainer;

pub use error::{NcaError, Result};
pub use grid::{
    depthwise_convolve, neighborhood_max, softmax_logits, BoolGrid, CellGrid, ChannelLayout, Field,
    Kernel, Padding, STATE_LIMIT,
};
pub use model::{compute_delta, Layer, ModelParams, DEFAULT_HIDDEN};
pub use perception::{make_sobel, perceive, Axis, FilterBank, FilterLabel};
pub use scalar::Scalar;
pub use step::{
    alive_mask, induction_delta, run, seed_configuration, step, stochastic_mask, Forcing,
    InductionField, InductionMode, SeedPosition, StepConfig, StepRecord, Stepper, Trajectory,
};

pub type CellGrid32 = CellGrid<f32>;
pub type CellGrid64 = CellGrid<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type InductionField32 = InductionField<f32>;
pub type InductionField64 = InductionField<f64>;
