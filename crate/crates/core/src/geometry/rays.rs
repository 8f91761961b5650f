use super::Camera;
use crate::linalg::Vec3;
use crate::{Error, Result, Scalar};

/// A flat batch of rays sharing one `[near, far]` interval.
#[derive(Clone, Debug)]
pub struct RayBatch<T> {
    pub origins: Vec<Vec3<T>>,
    pub directions: Vec<Vec3<T>>,
    pub near: T,
    pub far: T,
}

impl<T: Scalar> RayBatch<T> {
    pub fn new(origins: Vec<Vec3<T>>, directions: Vec<Vec3<T>>, near: T, far: T) -> Result<Self> {
        if origins.len() != directions.len() {
            return Err(Error::ShapeMismatch(format!("{} origins vs {} directions", origins.len(), directions.len())));
        }
        if !(near < far) {
            return Err(Error::InvalidArgument(format!("near {near} must be below far {far}")));
        }
        Ok(Self { origins, directions, near, far })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Rays through arbitrary continuous pixel positions of one camera.
    pub fn through_pixels(camera: &Camera<T>, pixels: &[[T; 2]], near: T, far: T) -> Result<Self> {
        let directions = pixels.iter().map(|p| camera.ray_direction(p[0], p[1])).collect();
        Self::new(vec![camera.position; pixels.len()], directions, near, far)
    }

    pub fn concat(parts: &[&RayBatch<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("no ray batches".into()))?;
        let mut origins = Vec::new();
        let mut directions = Vec::new();
        for p in parts {
            if p.near != first.near || p.far != first.far {
                return Err(Error::InvalidArgument("ray batches with different bounds".into()));
            }
            origins.extend_from_slice(&p.origins);
            directions.extend_from_slice(&p.directions);
        }
        Self::new(origins, directions, first.near, first.far)
    }
}

/// A strided grid of rays over a rectangular region of one camera.
#[derive(Clone, Debug)]
pub struct RayPatch<T> {
    pub rays: RayBatch<T>,
    /// Continuous pixel position of each ray, row-major over the grid.
    pub pixel_coords: Vec<[T; 2]>,
    /// Grid size in rays.
    pub grid_width: usize,
    pub grid_height: usize,
    pub stride: usize,
    /// Top-left pixel of the covered footprint.
    pub origin: [usize; 2],
}

impl<T: Scalar> RayPatch<T> {
    /// Pixel footprint `(width, height)` covered by the grid.
    pub fn footprint(&self) -> (usize, usize) {
        (self.grid_width * self.stride, self.grid_height * self.stride)
    }
}

/// Rays through pixel centers `(x0 + i*stride + 0.5, y0 + j*stride + 0.5)` for an
/// `size[0] x size[1]` grid. The grid must fit inside the image: its footprint is
/// `size * stride` pixels.
pub fn make_patch_rays<T: Scalar>(
    camera: &Camera<T>,
    patch_origin: [usize; 2],
    patch_size: [usize; 2],
    stride: usize,
    near: T,
    far: T,
) -> Result<RayPatch<T>> {
    let [x0, y0] = patch_origin;
    let [w, h] = patch_size;
    if stride == 0 || w == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!("patch {w}x{h} at stride {stride}")));
    }
    if x0 + w * stride > camera.width || y0 + h * stride > camera.height {
        return Err(Error::OutOfBounds(format!(
            "{w}x{h} rays at stride {stride} from ({x0},{y0}) exceed {}x{} image",
            camera.width, camera.height
        )));
    }
    let half = T::of(0.5);
    let mut pixel_coords = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            pixel_coords.push([T::of_usize(x0 + i * stride) + half, T::of_usize(y0 + j * stride) + half]);
        }
    }
    let rays = RayBatch::through_pixels(camera, &pixel_coords, near, far)?;
    Ok(RayPatch { rays, pixel_coords, grid_width: w, grid_height: h, stride, origin: patch_origin })
}
