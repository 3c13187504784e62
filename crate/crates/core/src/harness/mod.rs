//! Experiment drivers: two-parameter presets, MLP sweeps and perturbation robustness.

pub mod ntk;
pub mod perturb;
pub mod presets;
pub mod stopping;
pub mod sweep;
pub mod train;

pub use ntk::{ntk_check, NtkCheckRow};
pub use perturb::{perturb_robustness, RobustnessPoint};
pub use presets::{held_out_loss, run_preset_2d, run_preset_2d_until, Preset, PresetConstants, Variant};
pub use stopping::{earliest_max, evaluate_stopping, StopDecision};
pub use sweep::{run_sweep, SweepConfig, SweepRecord, SweepResult};
pub use train::{train_classifier, Checkpoint, Exclusion, StopMetrics, TrainOutcome};
