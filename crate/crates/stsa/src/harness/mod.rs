//! Experiment engine: synthetic scenes with exact ground-truth flow,
//! consistency metrics, a toy denoising trainer, subspace-size sweeps, and
//! result emission. Everything here is deterministic given its seeds.

pub mod metrics;
pub mod report;
pub mod scene;
pub mod sweep;
pub mod train;

pub use metrics::{
    along_flow_variation, along_flow_variation_masked, consistency_report, temporal_variation,
    ConsistencyReport, RunMeta,
};
pub use report::{dump_pgm_frames, emit_sweep, load_sweep, sweep_to_csv, SWEEP_CSV_HEADER};
pub use scene::{
    default_scene, gen_scene, high_velocity_scene, object_masks, ObjectShape, SceneObject,
    SceneSpec,
};
pub use sweep::{default_sweep_sizes, sweep_subspace_sizes, SkippedSize, SweepRow, SweepTable};
pub use train::{toy_train, TrainConfig, TrainResult};
