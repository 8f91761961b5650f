//! Posed image collections with train/test splits.

use crate::geometry::Camera;
use crate::image::Image;
use crate::linalg::Vec3;
use crate::{Error, Result, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct SceneDataset<T> {
    pub name: String,
    /// `H x W x 3` in `[0, 1]`.
    pub images: Vec<Image<T>>,
    pub cameras: Vec<Camera<T>>,
    pub near: T,
    pub far: T,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub background: [T; 3],
    /// Point that novel poses orbit around.
    pub scene_center: Vec3<T>,
}

impl<T: Scalar> SceneDataset<T> {
    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.cameras.len() {
            return Err(Error::ShapeMismatch(format!("{} images for {} cameras", self.images.len(), self.cameras.len())));
        }
        let first = self.images.first().ok_or_else(|| Error::InvalidArgument("dataset has no images".into()))?;
        for (i, (img, cam)) in self.images.iter().zip(&self.cameras).enumerate() {
            if img.width != first.width || img.height != first.height || img.channels != 3 {
                return Err(Error::ShapeMismatch(format!("image {i} is {}x{}x{}", img.width, img.height, img.channels)));
            }
            if cam.width != img.width || cam.height != img.height {
                return Err(Error::ShapeMismatch(format!("camera {i} does not match its image")));
            }
        }
        if let Some(&i) = self.train.iter().chain(&self.test).find(|&&i| i >= self.images.len()) {
            return Err(Error::OutOfBounds(format!("split index {i} of {} images", self.images.len())));
        }
        if self.train.iter().any(|i| self.test.contains(i)) {
            return Err(Error::InvalidArgument("train and test splits overlap".into()));
        }
        if !(self.near > T::zero() && self.far > self.near) {
            return Err(Error::InvalidArgument(format!("bounds [{}, {}]", self.near, self.far)));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.images[0].width
    }

    pub fn height(&self) -> usize {
        self.images[0].height
    }

    pub fn train_cameras(&self) -> Vec<Camera<T>> {
        self.train.iter().map(|&i| self.cameras[i].clone()).collect()
    }

    /// Content hash over images, cameras, bounds and splits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        for img in &self.images {
            h.update((img.width as u64).to_le_bytes());
            h.update((img.height as u64).to_le_bytes());
            for v in &img.data {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        for cam in &self.cameras {
            for row in cam.pose_matrix() {
                for v in row {
                    h.update(v.as_f64().to_le_bytes());
                }
            }
            for v in cam.k.m.iter().flatten() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        for v in [self.near, self.far] {
            h.update(v.as_f64().to_le_bytes());
        }
        for idx in [&self.train, &self.test] {
            h.update((idx.len() as u64).to_le_bytes());
            for &i in idx {
                h.update((i as u64).to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> SceneDataset<U> {
        SceneDataset {
            name: self.name.clone(),
            images: self.images.iter().map(|i| i.cast()).collect(),
            cameras: self.cameras.iter().map(|c| c.cast()).collect(),
            near: U::of(self.near.as_f64()),
            far: U::of(self.far.as_f64()),
            train: self.train.clone(),
            test: self.test.clone(),
            background: self.background.map(|b| U::of(b.as_f64())),
            scene_center: self.scene_center.cast(),
        }
    }

    /// Keeps the first `n` training views (the generator and loaders already order
    /// them by seeded draw).
    pub fn with_train_views(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.train.len() {
            return Err(Error::InvalidArgument(format!("{n} training views requested, {} available", self.train.len())));
        }
        let mut d = self.clone();
        d.train.truncate(n);
        Ok(d)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `n` distinct entries of `candidates`, drawn with a seeded generator, in draw order.
pub fn choose_views(candidates: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > candidates.len() {
        return Err(Error::InvalidArgument(format!("cannot choose {n} of {} views", candidates.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, candidates.len(), n).into_iter().map(|i| candidates[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_choice_is_stable_and_distinct() {
        let c: Vec<usize> = (0..100).collect();
        let a = choose_views(&c, 3, 7).unwrap();
        assert_eq!(a, choose_views(&c, 3, 7).unwrap());
        assert_ne!(a[0], a[1]);
        assert_ne!(a[1], a[2]);
        assert!(choose_views(&c, 101, 7).is_err());
    }
}
