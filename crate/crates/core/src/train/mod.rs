//! Optimizer, heads and both training stages.
//!
//! Stage 1 trains the encoder jointly with a pair discriminator on ternary
//! temporal relations between two timesteps of the same trajectory. Stage 2
//! freezes the encoder backbone and fits a planner head on the soft prompt
//! plus coarse low-rate features, drawing timesteps with a selectable sampler.

mod adam;
mod graph;
mod metrics;
mod model;
mod stage1;
mod stage2;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use graph::{discriminator_tape, encode_tape};
pub use metrics::{read_metrics, write_metrics, MetricRecord};
pub use model::PairEncoder;
pub use stage1::{
    discriminator_forward, discriminator_init, heldout_accuracy, loss_pre, pretrain_stage1, Stage1Config, Stage1Output,
    DISC_HIDDEN,
};
pub use stage2::{
    coarse_features, finetune_stage2, planner_forward, planner_init, steps_to_accuracy, PhaseEval, SamplerKind,
    Stage2Config, Stage2Output, COARSE_PER_CHANNEL,
};
