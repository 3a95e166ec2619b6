//! Loss, backpropagation through time, optimizer and training loop.

pub mod adam;
pub mod backward;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod pool;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use backward::{backward, RecordedRollout};
pub use checkpoint::{manifest_path, Checkpoint, CheckpointManifest, LayerShape, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, CoordinateCheck, GradCheckOptions, GradCheckReport, LayerCheck};
pub use loss::{loss, LossReport, TrainTarget};
pub use pool::{make_rollout_start, PoolEntry, RolloutStart, StartParams, Task, TaskMix};
pub use train::{train, EpochLog, PerTask, TrainConfig, TrainSet, Trainer};
