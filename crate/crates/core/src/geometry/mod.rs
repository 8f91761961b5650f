//! Cameras, rays, reprojection, differentiable sampling, occlusion masks and novel poses.

mod camera;
mod pose;
mod rays;
pub mod sampling;
pub mod warp;

pub use camera::Camera;
pub use pose::{sample_novel_pose, NovelPose, PoseSampler};
pub use rays::{make_patch_rays, RayBatch, RayPatch};
pub use sampling::{bilinear_sample, bilinear_sample_backward, upsample_strided, upsample_strided_backward, Samples};
pub use warp::{
    downsample_mask, occlusion_mask, reproject, reproject_point, warp_image, warp_image_depth_backward, MaskMetric,
    OcclusionMask, WarpBundle,
};
