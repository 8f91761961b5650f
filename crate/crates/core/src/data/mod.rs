//! Datasets, synthetic scenes, image I/O and evaluation metrics.

pub mod blender;
mod dataset;
pub mod io;
pub mod llff;
pub mod metrics;
pub mod npy;
pub mod synthetic;

pub use blender::{load_blender, BlenderOptions};
pub use dataset::{choose_views, hex as dataset_hex, SceneDataset};
pub use llff::{load_llff, LlffOptions};
pub use metrics::{avg_err, psnr, ssim, MetricsRow};
pub use synthetic::{make_synthetic_scene, SceneKind, SyntheticOptions, SyntheticScene};
