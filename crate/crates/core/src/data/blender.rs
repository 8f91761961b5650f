//! Loader for the Blender-synthetic layout: `transforms_{split}.json` manifests with a
//! horizontal field of view and per-frame camera-to-world matrices.

use super::dataset::{choose_views, SceneDataset};
use super::io::read_image;
use crate::geometry::Camera;
use crate::image::Image;
use crate::linalg::Vec3;
use crate::{Error, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    frames: Vec<Frame>,
}

#[derive(Debug, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

/// One manifest entry resolved against the scene directory.
#[derive(Clone, Debug)]
pub struct BlenderFrame {
    pub image_path: PathBuf,
    pub pose: [[f64; 4]; 4],
}

#[derive(Clone, Debug)]
pub struct BlenderSplit {
    pub camera_angle_x: f64,
    pub frames: Vec<BlenderFrame>,
}

#[derive(Clone, Debug)]
pub struct BlenderOptions {
    pub n_train: usize,
    pub seed: u64,
    pub background: [f64; 3],
    /// Integer image downscale (1 keeps full resolution).
    pub downscale: usize,
    /// Keep only the first `max_test` test frames.
    pub max_test: Option<usize>,
}

impl Default for BlenderOptions {
    fn default() -> Self {
        Self { n_train: 3, seed: 0, background: [1.0; 3], downscale: 1, max_test: None }
    }
}

pub fn read_manifest(dir: &Path, split: &str) -> Result<BlenderSplit> {
    let path = dir.join(format!("transforms_{split}.json"));
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format("blender manifest", format!("{}: {e}", path.display())))?;
    let frames = m
        .frames
        .into_iter()
        .map(|f| {
            let mut p = dir.join(f.file_path.trim_start_matches("./"));
            if p.extension().is_none() {
                p.set_extension("png");
            }
            BlenderFrame { image_path: p, pose: f.transform_matrix }
        })
        .collect();
    Ok(BlenderSplit { camera_angle_x: m.camera_angle_x, frames })
}

/// Focal length in pixels from a horizontal field of view.
pub fn focal_from_fov(width: usize, fov_x: f64) -> f64 {
    0.5 * width as f64 / (0.5 * fov_x).tan()
}

fn composite(img: Image<f64>, bg: [f64; 3]) -> Image<f64> {
    if img.channels == 3 {
        return img;
    }
    Image::from_fn(img.width, img.height, 3, |x, y, c| {
        let a = img.at(x, y, 3);
        img.at(x, y, c) * a + bg[c] * (1.0 - a)
    })
}

fn load_frame(frame: &BlenderFrame, fov: f64, opts: &BlenderOptions) -> Result<(Image<f64>, Camera<f64>)> {
    let img = composite(read_image(&frame.image_path)?, opts.background);
    let img = if opts.downscale > 1 { img.downscale(opts.downscale)? } else { img };
    let f = focal_from_fov(img.width, fov);
    let k = Camera::intrinsics(f, f, 0.5 * img.width as f64, 0.5 * img.height as f64);
    let cam = Camera::new(k, frame.pose, img.width, img.height)?;
    Ok((img, cam))
}

/// Loads `n_train` seeded training frames and the test split. Near/far are the
/// conventional 2 and 6 for this layout.
pub fn load_blender(dir: &Path, opts: &BlenderOptions) -> Result<SceneDataset<f64>> {
    let train = read_manifest(dir, "train")?;
    let test = read_manifest(dir, "test")?;
    let chosen = choose_views(&(0..train.frames.len()).collect::<Vec<_>>(), opts.n_train, opts.seed)?;
    let n_test = opts.max_test.unwrap_or(test.frames.len()).min(test.frames.len());
    let mut images = Vec::new();
    let mut cameras = Vec::new();
    for &i in &chosen {
        let (img, cam) = load_frame(&train.frames[i], train.camera_angle_x, opts)?;
        images.push(img);
        cameras.push(cam);
    }
    for frame in &test.frames[..n_test] {
        let (img, cam) = load_frame(frame, test.camera_angle_x, opts)?;
        images.push(img);
        cameras.push(cam);
    }
    let d = SceneDataset {
        name: dir.file_name().map_or_else(|| "blender".into(), |n| n.to_string_lossy().into_owned()),
        images,
        cameras,
        near: 2.0,
        far: 6.0,
        train: (0..chosen.len()).collect(),
        test: (chosen.len()..chosen.len() + n_test).collect(),
        background: opts.background,
        scene_center: Vec3::zero(),
    };
    d.validate()?;
    Ok(d)
}
