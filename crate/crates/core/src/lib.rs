//! Spatio-temporal 3D human pose estimation from 2D keypoint heatmaps.
//!
//! The pipeline renders per-joint Gaussian heatmaps, embeds each frame,
//! lifts a window of embeddings to a 3D pose with a multi-stride temporal
//! convolutional network, and regularizes the output with a discriminator
//! over spatial and temporal kinematic chain space (KCS) features.

pub mod augmentation;
pub mod error;
pub mod heatmap;
pub mod kcs;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod skeleton;
pub mod synthdata;

pub use augmentation::{apply_pipeline, AugmentationConfig, Augmented, MaskRecord};
pub use error::{Error, Result};
pub use heatmap::{extract_peaks, render_heatmaps, render_sequence, HeatmapSequence, HeatmapStack};
pub use kcs::{
    sequence_descriptor, spatial_kcs, temporal_kcs, DiscriminatorFeatures, SpatialKcs, TemporalKcs,
};
pub use losses::{CameraRotation, LossComponents, LossWeights, OrthoProjection};
pub use metrics::{
    evaluate, mean_angle_error, mpjpe, p_mpjpe, pck3d, procrustes_align, MetricsReport,
};
pub use model::{Checkpoint, Discriminator, ModelConfig, PoseModel, TrainConfig, Trainer};
pub use skeleton::{BoneMatrix, Pose2D, Pose3D, PoseSequence2D, PoseSequence3D, SkeletonTopology};
pub use synthdata::{
    generate_corpus, read_dataset_file, write_dataset_file, CorpusSpec, MotionSpec, SequenceRecord,
};
