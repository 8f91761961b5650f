//! Depth-guided inverse warping between two views and occlusion-aware masking.
//!
//! Naming follows the warping direction used in training: view `j` is the target
//! (usually unobserved) view whose depth drives the warp, view `i` is the source
//! whose image is resampled.

use super::sampling::{bilinear_sample_backward, sample_point};
use super::Camera;
use crate::image::{DepthMap, Image};
use crate::linalg::Vec3;
use crate::{Error, Result, Scalar};
use serde::{Deserialize, Serialize};

/// Reprojects a target pixel with z-depth `depth` into the source camera.
#[inline]
pub fn reproject_point<T: Scalar>(uv: [T; 2], depth: T, cam_j: &Camera<T>, cam_i: &Camera<T>) -> Option<[T; 2]> {
    cam_i.project(cam_j.backproject(uv[0], uv[1], depth))
}

/// Like [`reproject_point`], also returning the derivative of the coordinate w.r.t. depth.
pub fn reproject_point_with_jacobian<T: Scalar>(
    uv: [T; 2],
    depth: T,
    cam_j: &Camera<T>,
    cam_i: &Camera<T>,
) -> Option<([T; 2], [T; 2])> {
    let dir = cam_j.ray_direction(uv[0], uv[1]);
    let pc = cam_i.world_to_camera(cam_j.position + dir * depth);
    let dpc = cam_i.rotation.transpose().mul_vec(dir);
    let z = -pc.z;
    if !(z > T::zero()) {
        return None;
    }
    let dz = -dpc.z;
    let (xn, yn) = (pc.x / z, -pc.y / z);
    let dxn = (dpc.x * z - pc.x * dz) / (z * z);
    let dyn_ = (-dpc.y * z + pc.y * dz) / (z * z);
    let k = &cam_i.k.m;
    let coord = [k[0][0] * xn + k[0][1] * yn + k[0][2], k[1][1] * yn + k[1][2]];
    let jac = [k[0][0] * dxn + k[0][1] * dyn_, k[1][1] * dyn_];
    Some((coord, jac))
}

/// Maps target pixels with known depth into continuous source-view coordinates.
///
/// Entries are `None` when the 3-D point lies behind the source camera. The returned
/// coordinates may fall outside the source image.
pub fn reproject<T: Scalar>(
    pixels_j: &[[T; 2]],
    depth_j: &[T],
    cam_j: &Camera<T>,
    cam_i: &Camera<T>,
) -> Result<Vec<Option<[T; 2]>>> {
    if pixels_j.len() != depth_j.len() {
        return Err(Error::ShapeMismatch(format!("{} pixels vs {} depths", pixels_j.len(), depth_j.len())));
    }
    if let Some((index, &d)) = depth_j.iter().enumerate().find(|(_, d)| !(d.is_finite() && **d > T::zero())) {
        return Err(Error::InvalidDepth { index, value: d.as_f64() });
    }
    Ok(pixels_j.iter().zip(depth_j).map(|(&p, &d)| reproject_point(p, d, cam_j, cam_i)).collect())
}

#[inline]
fn pixel_center<T: Scalar>(x: usize, y: usize) -> [T; 2] {
    let h = T::of(0.5);
    [T::of_usize(x) + h, T::of_usize(y) + h]
}

fn check_depth_shape<T: Scalar>(depth: &DepthMap<T>, cam: &Camera<T>, what: &str) -> Result<()> {
    if depth.channels != 1 || depth.width != cam.width || depth.height != cam.height {
        return Err(Error::ShapeMismatch(format!(
            "{what}: depth {}x{}x{} vs camera {}x{}",
            depth.width, depth.height, depth.channels, cam.width, cam.height
        )));
    }
    Ok(())
}

/// A source image resampled into a target view.
#[derive(Clone, Debug)]
pub struct WarpBundle<T> {
    /// Target-resolution warped image.
    pub warped: Image<T>,
    /// Per target pixel: valid depth, point in front of the source camera and all
    /// four bilinear neighbors inside the source image.
    pub in_bounds: Vec<bool>,
    /// Source-view coordinate of each target pixel (None for invalid reprojections).
    pub coords: Vec<Option<[T; 2]>>,
    pub target: Camera<T>,
    pub source: Camera<T>,
}

/// Inverse-warps `source_image` (view `i`) into view `j` using the target depth map.
///
/// Pixels with non-positive or non-finite depth, or whose point falls behind the
/// source camera, receive zeros and a cleared in-bounds flag.
pub fn warp_image<T: Scalar>(
    source_image: &Image<T>,
    depth_j: &DepthMap<T>,
    cam_j: &Camera<T>,
    cam_i: &Camera<T>,
) -> Result<WarpBundle<T>> {
    check_depth_shape(depth_j, cam_j, "warp target")?;
    if source_image.width != cam_i.width || source_image.height != cam_i.height {
        return Err(Error::ShapeMismatch(format!(
            "source image {}x{} vs camera {}x{}",
            source_image.width, source_image.height, cam_i.width, cam_i.height
        )));
    }
    let ch = source_image.channels;
    let mut warped = Image::new(cam_j.width, cam_j.height, ch);
    let mut in_bounds = vec![false; cam_j.width * cam_j.height];
    let mut coords = vec![None; cam_j.width * cam_j.height];
    for y in 0..cam_j.height {
        for x in 0..cam_j.width {
            let n = y * cam_j.width + x;
            let d = depth_j.data[n];
            if !(d.is_finite() && d > T::zero()) {
                continue;
            }
            if let Some(uv) = reproject_point(pixel_center(x, y), d, cam_j, cam_i) {
                coords[n] = Some(uv);
                let i = warped.idx(x, y);
                in_bounds[n] = sample_point(source_image, uv, &mut warped.data[i..i + ch]);
            }
        }
    }
    Ok(WarpBundle { warped, in_bounds, coords, target: cam_j.clone(), source: cam_i.clone() })
}

/// Gradient of a loss on the warped image with respect to the target depth map,
/// flowing through the sampling coordinates.
pub fn warp_image_depth_backward<T: Scalar>(
    bundle: &WarpBundle<T>,
    source_image: &Image<T>,
    depth_j: &DepthMap<T>,
    d_warped: &Image<T>,
) -> Result<DepthMap<T>> {
    d_warped.ensure_same_shape(&bundle.warped, "warp gradient")?;
    check_depth_shape(depth_j, &bundle.target, "warp target")?;
    let ch = source_image.channels;
    let mut d_depth = Image::new(depth_j.width, depth_j.height, 1);
    for y in 0..depth_j.height {
        for x in 0..depth_j.width {
            let n = y * depth_j.width + x;
            if bundle.coords[n].is_none() {
                continue;
            }
            let Some((uv, jac)) = reproject_point_with_jacobian(pixel_center(x, y), depth_j.data[n], &bundle.target, &bundle.source)
            else {
                continue;
            };
            let g = &d_warped.data[n * ch..(n + 1) * ch];
            let (_, dc) = bilinear_sample_backward(source_image, &[uv], g);
            d_depth.data[n] = dc[0][0] * jac[0] + dc[0][1] * jac[1];
        }
    }
    Ok(d_depth)
}

/// How two depth estimates are compared when building the occlusion mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMetric {
    /// Euclidean distance between the two back-projected world points.
    #[default]
    PointDistance,
    /// Absolute difference of the two scalar depths.
    DepthDifference,
}

/// Binary per-pixel mask with the threshold that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMask<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<bool>,
    pub threshold_used: T,
}

impl<T: Scalar> OcclusionMask<T> {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, values: vec![value; width * height], threshold_used: T::zero() }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!("{} mask values for {width}x{height}", values.len())));
        }
        Ok(Self { width, height, values, threshold_used: T::zero() })
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn fill_ratio(&self) -> f64 {
        self.count() as f64 / self.values.len().max(1) as f64
    }

    /// Elementwise logical and.
    pub fn and(&self, other: &[bool]) -> Result<Self> {
        if other.len() != self.values.len() {
            return Err(Error::ShapeMismatch("mask conjunction".into()));
        }
        let values = self.values.iter().zip(other).map(|(&a, &b)| a && b).collect();
        Ok(Self { values, ..self.clone() })
    }

    pub fn to_image(&self) -> Image<T> {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.values.iter().map(|&v| if v { T::one() } else { T::zero() }).collect(),
        }
    }
}

/// Depth-consistency mask between target view `j` and source view `i`.
///
/// A target pixel passes when its back-projected point and the point back-projected
/// from the source depth at the reprojected (bilinearly sampled) location lie closer
/// than `tau`. Pixels with invalid depth, reprojection behind the source camera or
/// out-of-bounds samples fail.
pub fn occlusion_mask<T: Scalar>(
    depth_j: &DepthMap<T>,
    depth_i: &DepthMap<T>,
    cam_j: &Camera<T>,
    cam_i: &Camera<T>,
    tau: T,
    metric: MaskMetric,
) -> Result<OcclusionMask<T>> {
    check_depth_shape(depth_j, cam_j, "mask target")?;
    check_depth_shape(depth_i, cam_i, "mask source")?;
    if !(tau >= T::zero()) {
        return Err(Error::InvalidArgument(format!("mask threshold {tau} must be non-negative")));
    }
    let mut values = vec![false; cam_j.width * cam_j.height];
    let mut sampled = [T::zero()];
    for y in 0..cam_j.height {
        for x in 0..cam_j.width {
            let n = y * cam_j.width + x;
            let d_j = depth_j.data[n];
            if !(d_j.is_finite() && d_j > T::zero()) {
                continue;
            }
            let uv_j = pixel_center(x, y);
            let p_j = cam_j.backproject(uv_j[0], uv_j[1], d_j);
            let Some(uv_i) = cam_i.project(p_j) else { continue };
            if !sample_point(depth_i, uv_i, &mut sampled) {
                continue;
            }
            let d_i = sampled[0];
            if !(d_i.is_finite() && d_i > T::zero()) {
                continue;
            }
            let dist = match metric {
                MaskMetric::PointDistance => (p_j - cam_i.backproject(uv_i[0], uv_i[1], d_i)).norm(),
                MaskMetric::DepthDifference => (d_j - d_i).abs(),
            };
            values[n] = dist < tau;
        }
    }
    Ok(OcclusionMask { width: cam_j.width, height: cam_j.height, values, threshold_used: tau })
}

/// Nearest-neighbor downsampling with a top-left anchor: target cell `(x, y)` copies
/// source cell `(floor(x * W / w), floor(y * H / h))`.
pub fn downsample_mask<T: Scalar>(mask: &OcclusionMask<T>, target: [usize; 2]) -> Result<OcclusionMask<T>> {
    let [w, h] = target;
    if w > mask.width || h > mask.height {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample a {}x{} mask to {w}x{h}",
            mask.width, mask.height
        )));
    }
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("empty mask target".into()));
    }
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = y * mask.height / h;
        for x in 0..w {
            let sx = x * mask.width / w;
            values.push(mask.values[sy * mask.width + sx]);
        }
    }
    Ok(OcclusionMask { width: w, height: h, values, threshold_used: mask.threshold_used })
}

/// Back-projects every pixel of a depth map (for debugging and oracles).
pub fn depth_to_points<T: Scalar>(depth: &DepthMap<T>, cam: &Camera<T>) -> Vec<Vec3<T>> {
    (0..depth.height)
        .flat_map(|y| (0..depth.width).map(move |x| (x, y)))
        .map(|(x, y)| {
            let uv = pixel_center::<T>(x, y);
            cam.backproject(uv[0], uv[1], depth.at(x, y, 0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat3;

    fn pair(tx: f64) -> (Camera<f64>, Camera<f64>) {
        let k = Camera::intrinsics(20.0, 20.0, 8.0, 6.0);
        let a = Camera::from_parts(k, Mat3::identity(), Vec3::zero(), 16, 12).unwrap();
        let b = Camera::from_parts(k, Mat3::identity(), Vec3::new(tx, 0.0, 0.0), 16, 12).unwrap();
        (a, b)
    }

    #[test]
    fn reproject_rejects_bad_depth() {
        let (a, b) = pair(0.1);
        assert!(matches!(reproject(&[[1.0, 1.0]], &[0.0], &a, &b), Err(Error::InvalidDepth { index: 0, .. })));
        assert!(reproject(&[[1.0, 1.0]], &[f64::NAN], &a, &b).is_err());
    }

    #[test]
    fn identity_reprojection() {
        let (a, _) = pair(0.0);
        let px = [[3.25, 7.5], [0.1, 11.9]];
        let r = reproject(&px, &[2.0, 0.3], &a, &a).unwrap();
        for (p, q) in px.iter().zip(r) {
            let q = q.unwrap();
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn fronto_parallel_disparity() {
        // Source camera shifted by +t along x sees the point fx*t/z pixels to the left.
        let (a, b) = pair(0.3);
        let z = 2.0;
        let r = reproject(&[[8.0, 6.0]], &[z], &a, &b).unwrap()[0].unwrap();
        assert!((8.0 - r[0] - 20.0 * 0.3 / z).abs() < 1e-12);
        assert!((r[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn depth_jacobian_matches_finite_difference() {
        let k = Camera::intrinsics(30.0, 28.0, 9.0, 7.0);
        let a = Camera::from_parts(k, Mat3::from_euler_xyz([0.1, -0.2, 0.05]), Vec3::new(0.1, 0.0, 0.2), 18, 14).unwrap();
        let b = Camera::from_parts(k, Mat3::from_euler_xyz([-0.05, 0.15, 0.0]), Vec3::new(-0.3, 0.1, 0.0), 18, 14).unwrap();
        let (uv, d) = ([5.3, 9.1], 3.0);
        let (_, jac) = reproject_point_with_jacobian(uv, d, &a, &b).unwrap();
        let h = 1e-6;
        let p = reproject_point(uv, d + h, &a, &b).unwrap();
        let m = reproject_point(uv, d - h, &a, &b).unwrap();
        for c in 0..2 {
            let fd: f64 = (p[c] - m[c]) / (2.0 * h);
            assert!((fd - jac[c]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn warp_rejects_mismatched_depth() {
        let (a, b) = pair(0.1);
        let img = Image::<f64>::new(16, 12, 3);
        let depth = Image::<f64>::filled(15, 12, 1, 1.0);
        assert!(matches!(warp_image(&img, &depth, &a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn downsample_rules() {
        let m = OcclusionMask::<f64>::from_values(4, 4, (0..16).map(|i| (i % 4 + i / 4) % 2 == 0).collect()).unwrap();
        let d = downsample_mask(&m, [2, 2]).unwrap();
        // top-left anchors (0,0),(2,0),(0,2),(2,2) are all "even" cells
        assert_eq!(d.values, vec![true; 4]);
        assert_eq!(downsample_mask(&m, [4, 4]).unwrap(), m);
        assert!(downsample_mask(&m, [8, 4]).is_err());
    }

    #[test]
    fn mask_threshold_validation() {
        let (a, b) = pair(0.1);
        let d = Image::<f64>::filled(16, 12, 1, 2.0);
        assert!(occlusion_mask(&d, &d, &a, &b, -1.0, MaskMetric::PointDistance).is_err());
        let zero = occlusion_mask(&d, &d, &a, &a, 0.0, MaskMetric::PointDistance).unwrap();
        assert_eq!(zero.count(), 0);
    }
}
