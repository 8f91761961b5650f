//! Loader for forward-facing LLFF captures: an `images/` directory plus
//! `poses_bounds.npy`, an `N x 17` array holding a `3 x 5` `[R | t | (h, w, f)]` block
//! and near/far bounds per image.
//!
//! The stored rotation columns are `[down, right, back]`; cameras here use
//! `[right, up, back]`.

use super::dataset::{choose_views, SceneDataset};
use super::io::read_image;
use super::npy::{read_npy, write_npy};
use crate::geometry::Camera;
use crate::linalg::{Mat3, Vec3};
use crate::{Error, Result};
use std::path::{Path, PathBuf};

/// Margin applied to the tightest stored bounds.
const NEAR_MARGIN: f64 = 0.9;
const FAR_MARGIN: f64 = 1.1;

#[derive(Clone, Debug)]
pub struct LlffOptions {
    pub n_train: usize,
    pub seed: u64,
    /// Image downscale; `images_{factor}/` is used when present.
    pub factor: usize,
}

impl Default for LlffOptions {
    fn default() -> Self {
        Self { n_train: 3, seed: 0, factor: 1 }
    }
}

/// Camera from one pose row, for an image of `width x height` (focal rescaled from the
/// stored width).
pub fn camera_from_row(row: &[f64], width: usize, height: usize) -> Result<Camera<f64>> {
    if row.len() < 15 {
        return Err(Error::format("poses_bounds", format!("row of {} values, expected 17", row.len())));
    }
    let m = |r: usize, c: usize| row[r * 5 + c];
    let col = |c: usize| Vec3::new(m(0, c), m(1, c), m(2, c));
    let rotation = Mat3::from_cols(col(1), -col(0), col(2));
    let (w_stored, f) = (m(1, 4), m(2, 4));
    let focal = f * width as f64 / w_stored;
    let k = Camera::intrinsics(focal, focal, 0.5 * width as f64, 0.5 * height as f64);
    Camera::from_parts(k, rotation, col(3), width, height)
}

/// Inverse of [`camera_from_row`] (stores the camera's own resolution and focal).
pub fn row_from_camera(cam: &Camera<f64>, near: f64, far: f64) -> [f64; 17] {
    let r = cam.rotation;
    let cols = [-r.col(1), r.col(0), r.col(2), cam.position];
    let mut row = [0.0; 17];
    for i in 0..3 {
        for (c, v) in cols.iter().enumerate() {
            row[i * 5 + c] = v.to_array()[i];
        }
    }
    row[4] = cam.height as f64;
    row[9] = cam.width as f64;
    row[14] = cam.fx();
    row[15] = near;
    row[16] = far;
    row
}

pub fn write_poses_bounds(path: &Path, rows: &[[f64; 17]]) -> Result<()> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    write_npy(path, &[rows.len(), 17], &flat)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads a capture: every 8th image is held out for testing and `n_train` views are
/// drawn from the rest with a seeded generator.
pub fn load_llff(dir: &Path, opts: &LlffOptions) -> Result<SceneDataset<f64>> {
    let poses = read_npy(&dir.join("poses_bounds.npy"))?;
    if poses.shape.len() != 2 || poses.shape[1] != 17 {
        return Err(Error::format("poses_bounds", format!("shape {:?}, expected (N, 17)", poses.shape)));
    }
    let n = poses.shape[0];
    let scaled = dir.join(format!("images_{}", opts.factor));
    let (img_dir, in_memory_factor) = if opts.factor > 1 && scaled.is_dir() { (scaled, 1) } else { (dir.join("images"), opts.factor.max(1)) };
    if !img_dir.is_dir() {
        return Err(Error::MissingFile(img_dir));
    }
    let files = list_images(&img_dir)?;
    if files.len() != n {
        return Err(Error::format("llff", format!("{} images in {} but {n} pose rows", files.len(), img_dir.display())));
    }
    let test: Vec<usize> = (0..n).step_by(8).collect();
    let rest: Vec<usize> = (0..n).filter(|i| i % 8 != 0).collect();
    let train = choose_views(&rest, opts.n_train, opts.seed)?;
    let order: Vec<usize> = train.iter().chain(&test).copied().collect();
    let mut images = Vec::with_capacity(order.len());
    let mut cameras = Vec::with_capacity(order.len());
    let (mut near, mut far) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let row = &poses.data[i * 17..(i + 1) * 17];
        near = near.min(row[15]);
        far = far.max(row[16]);
    }
    for &i in &order {
        let mut img = read_image(&files[i])?;
        if img.channels == 4 {
            let rgba = img;
            img = crate::image::Image::from_fn(rgba.width, rgba.height, 3, |x, y, c| rgba.at(x, y, c));
        }
        if in_memory_factor > 1 {
            img = img.downscale(in_memory_factor)?;
        }
        cameras.push(camera_from_row(&poses.data[i * 17..(i + 1) * 17], img.width, img.height)?);
        images.push(img);
    }
    let (near, far) = (NEAR_MARGIN * near, FAR_MARGIN * far);
    // orbit novel poses around a point in front of the mean camera
    let k = cameras.len() as f64;
    let mean_pos = cameras.iter().fold(Vec3::zero(), |a, c| a + c.position) * (1.0 / k);
    let mean_back = cameras.iter().fold(Vec3::zero(), |a, c| a + c.rotation.col(2)).normalized();
    let d = SceneDataset {
        name: dir.file_name().map_or_else(|| "llff".into(), |s| s.to_string_lossy().into_owned()),
        images,
        cameras,
        near,
        far,
        train: (0..train.len()).collect(),
        test: (train.len()..order.len()).collect(),
        background: [0.0; 3],
        scene_center: mean_pos - mean_back * (0.5 * (near + far)),
    };
    d.validate()?;
    Ok(d)
}

/// Original capture indices of the test split for `n` images.
pub fn llff_test_indices(n: usize) -> Vec<usize> {
    (0..n).step_by(8).collect()
}
