//! Training data: synthetic scenes, annotation files, positive and negative patches,
//! and balanced batches.

mod annotations;
mod dataset;
mod pose;
mod synth;

pub use annotations::{
    load_annotations, read_records, save_annotations, scene_record, AnnotationRecord, ImageStorage,
    SceneRecord,
};
pub use dataset::{mean_color, Dataset};
pub use pose::{
    canonical_pose, canonical_positive, deviation, extract_mask, extract_patch, jitter, jitter_pose,
    negative_pose, normalize, patch_tensor, sample_negative, Deviation, Pose, Sample, SamplerConfig,
};
pub use synth::{generate_scene, InstanceAnnotation, Scene, ShapeKind, SyntheticSpec};
