//! Network architecture: shared trunk, segmentation head and scoring head, the joint
//! loss, alternating-branch training and the weights file.

mod config;
mod forward;
mod loss;
mod params;
mod train;
mod weights;

pub use config::{trunk_to_string, Geometry, ModelConfig, TrunkLayer, DOWNSAMPLE, KERNEL};
pub use forward::{Forward, Heads, ScoreTrace, SegTrace, TrunkTrace};
pub use loss::{
    downsample_target, joint_loss, mask_loss, score_loss, target_index, JointLoss, TrainingTriplet,
};
pub use params::{build_model, ModelGrads, ModelParams, Part, SegClassifier};
pub use train::{
    branch_gradients, check_batch, joint_loss_gradients, joint_loss_value, train_step, Branch,
    Reduction, StepReport, TrainConfig,
};
pub use weights::{
    decode, encode, load_checkpoint, load_weights, save_checkpoint, save_weights, Checkpoint,
    FORMAT_VERSION,
};
