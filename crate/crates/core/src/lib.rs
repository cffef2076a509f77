//! Dense stereo mapping on the CPU.
//!
//! A rectified stereo pair goes through a coarse-to-fine inverse-search
//! patch matcher whose per-patch confidences come from a small Bayesian
//! softmax over neighbouring disparity offsets. Fused disparities are lifted
//! to 3-D points and merged into a global point map that is culled against
//! each new keyframe's depth. The crate also ships a synthetic scene
//! generator with analytic ground truth and map/disparity evaluation.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod matcher;
pub mod mosaic;
pub mod oracle;
pub mod pfm;
pub mod pipeline;
pub mod ply;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use geometry::{
    backproject_point, pixel_index, project_point, triangulate_depth, DepthField, Pose, Projection,
    StereoRig,
};
pub use image::{GrayImage, RgbImage};
pub use matcher::{
    match_pair, match_pair_detailed, DisparityField, MatcherConfig, RectifiedStereoPair,
};
pub use mosaic::{
    lift_keyframe, mosaic_update, CullingMode, GlobalMap, KeyframeRecord, MapPoint, MosaicStats,
};
pub use oracle::{exhaustive_disparity, OracleConfig};
pub use pipeline::{
    report_timing, run_frames, run_session, select_keyframe, KeyframePolicy, SessionConfig,
    SessionInputs, SessionReport, TimingReport,
};
