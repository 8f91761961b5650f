//! Pinhole cameras.
//!
//! Conventions used throughout the crate:
//! - `pose` is camera-to-world; the camera looks down its local `-z` axis with `+y` up.
//! - Pixel `(x, y)` has its center at continuous coordinate `(x + 0.5, y + 0.5)`; `v` grows downward.
//! - Ray directions have unit extent along the optical axis, so the ray parameter `t` is z-depth.

use crate::linalg::{Mat3, Vec3};
use crate::{Error, Result, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    /// Upper-triangular intrinsics in pixels.
    pub k: Mat3<T>,
    /// Camera-to-world rotation.
    pub rotation: Mat3<T>,
    /// Camera center in world coordinates.
    pub position: Vec3<T>,
    pub width: usize,
    pub height: usize,
}

fn orthonormal_tolerance<T: Scalar>() -> T {
    T::of(1e-6).max(T::epsilon() * T::of(64.0))
}

impl<T: Scalar> Camera<T> {
    /// Builds a camera from intrinsics and a 4x4 camera-to-world matrix, validating both.
    pub fn new(k: Mat3<T>, pose: [[T; 4]; 4], width: usize, height: usize) -> Result<Self> {
        let rotation = Mat3::from_rows([
            [pose[0][0], pose[0][1], pose[0][2]],
            [pose[1][0], pose[1][1], pose[1][2]],
            [pose[2][0], pose[2][1], pose[2][2]],
        ]);
        let position = Vec3::new(pose[0][3], pose[1][3], pose[2][3]);
        Self::from_parts(k, rotation, position, width, height)
    }

    pub fn from_parts(k: Mat3<T>, rotation: Mat3<T>, position: Vec3<T>, width: usize, height: usize) -> Result<Self> {
        let cam = Self { k, rotation, position, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with square pixels and principal point at the image center, from a horizontal field of view.
    pub fn from_fov(width: usize, height: usize, fov_x: T, rotation: Mat3<T>, position: Vec3<T>) -> Result<Self> {
        let half = T::of(0.5);
        let focal = half * T::of_usize(width) / (half * fov_x).tan();
        Self::from_parts(
            Self::intrinsics(focal, focal, half * T::of_usize(width), half * T::of_usize(height)),
            rotation,
            position,
            width,
            height,
        )
    }

    pub fn intrinsics(fx: T, fy: T, cx: T, cy: T) -> Mat3<T> {
        let (z, o) = (T::zero(), T::one());
        Mat3::from_rows([[fx, z, cx], [z, fy, cy], [z, z, o]])
    }

    /// Camera at `eye` looking at `target`, with `up` fixing roll.
    pub fn look_at(k: Mat3<T>, eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, width: usize, height: usize) -> Result<Self> {
        let back = (eye - target).normalized();
        let right = up.cross(back).normalized();
        let true_up = back.cross(right);
        Self::from_parts(k, Mat3::from_cols(right, true_up, back), eye, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.k.m;
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("zero image size".into()));
        }
        let z = T::zero();
        if k[1][0] != z || k[2][0] != z || k[2][1] != z {
            return Err(Error::InvalidCamera("intrinsics must be upper-triangular".into()));
        }
        if !(k[0][0] > z && k[1][1] > z) || !k[0][0].is_finite() || !k[1][1].is_finite() {
            return Err(Error::InvalidCamera("focal lengths must be positive and finite".into()));
        }
        if k[2][2] != T::one() {
            return Err(Error::InvalidCamera("K[2][2] must be 1".into()));
        }
        let tol = orthonormal_tolerance::<T>();
        let rtr = self.rotation.transpose().mul_mat(&self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { T::one() } else { T::zero() };
                if (rtr[(i, j)] - want).abs() > tol {
                    return Err(Error::InvalidCamera(format!("rotation not orthonormal (R^T R [{i}][{j}] = {})", rtr[(i, j)])));
                }
            }
        }
        if (self.rotation.determinant() - T::one()).abs() > tol * T::of(3.0) {
            return Err(Error::InvalidCamera("rotation determinant must be +1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn fx(&self) -> T {
        self.k.m[0][0]
    }
    #[inline]
    pub fn fy(&self) -> T {
        self.k.m[1][1]
    }
    #[inline]
    pub fn cx(&self) -> T {
        self.k.m[0][2]
    }
    #[inline]
    pub fn cy(&self) -> T {
        self.k.m[1][2]
    }
    #[inline]
    fn skew(&self) -> T {
        self.k.m[0][1]
    }

    pub fn pose_matrix(&self) -> [[T; 4]; 4] {
        let r = &self.rotation.m;
        let p = self.position;
        let (z, o) = (T::zero(), T::one());
        [
            [r[0][0], r[0][1], r[0][2], p.x],
            [r[1][0], r[1][1], r[1][2], p.y],
            [r[2][0], r[2][1], r[2][2], p.z],
            [z, z, z, o],
        ]
    }

    /// Viewing direction through continuous pixel `(u, v)` in the camera frame (`z = -1`).
    #[inline]
    pub fn camera_direction(&self, u: T, v: T) -> Vec3<T> {
        let yn = (v - self.cy()) / self.fy();
        let xn = (u - self.cx() - self.skew() * yn) / self.fx();
        Vec3::new(xn, -yn, -T::one())
    }

    /// World-space ray direction through `(u, v)`; not normalized.
    #[inline]
    pub fn ray_direction(&self, u: T, v: T) -> Vec3<T> {
        self.rotation.mul_vec(self.camera_direction(u, v))
    }

    /// World point at z-depth `depth` behind pixel `(u, v)`.
    #[inline]
    pub fn backproject(&self, u: T, v: T, depth: T) -> Vec3<T> {
        self.position + self.ray_direction(u, v) * depth
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(p - self.position)
    }

    /// Pixel coordinates of a camera-frame point, `None` when it is not in front of the camera.
    #[inline]
    pub fn project_camera_point(&self, pc: Vec3<T>) -> Option<[T; 2]> {
        let z = -pc.z;
        if !(z > T::zero()) {
            return None;
        }
        let xn = pc.x / z;
        let yn = -pc.y / z;
        Some([self.fx() * xn + self.skew() * yn + self.cx(), self.fy() * yn + self.cy()])
    }

    #[inline]
    pub fn project(&self, p: Vec3<T>) -> Option<[T; 2]> {
        self.project_camera_point(self.world_to_camera(p))
    }

    /// Z-depth of a world point in this camera.
    #[inline]
    pub fn depth_of(&self, p: Vec3<T>) -> T {
        -self.world_to_camera(p).z
    }

    pub fn contains_pixel(&self, uv: [T; 2]) -> bool {
        uv[0] >= T::zero() && uv[1] >= T::zero() && uv[0] <= T::of_usize(self.width) && uv[1] <= T::of_usize(self.height)
    }

    /// Camera whose image is the `w x h` window at `(x0, y0)` of this one.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::OutOfBounds(format!("crop {w}x{h}@({x0},{y0}) of {}x{} camera", self.width, self.height)));
        }
        let mut k = self.k;
        k.m[0][2] = k.m[0][2] - T::of_usize(x0);
        k.m[1][2] = k.m[1][2] - T::of_usize(y0);
        Ok(Self { k, width: w, height: h, ..self.clone() })
    }

    /// Same viewpoint with the image resolution divided by `factor`.
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::InvalidArgument(format!("downscale factor {factor} for {}x{} camera", self.width, self.height)));
        }
        let f = T::one() / T::of_usize(factor);
        let mut k = self.k;
        for j in 0..3 {
            k.m[0][j] = k.m[0][j] * f;
            k.m[1][j] = k.m[1][j] * f;
        }
        Ok(Self { k, width: self.width / factor, height: self.height / factor, ..self.clone() })
    }

    /// Rigid transform taking points in this camera's frame into `other`'s frame,
    /// i.e. `inverse(other.pose) * self.pose`, returned as rotation and translation.
    pub fn relative_to(&self, other: &Self) -> (Mat3<T>, Vec3<T>) {
        let rt = other.rotation.transpose();
        (rt.mul_mat(&self.rotation), rt.mul_vec(self.position - other.position))
    }

    pub fn cast<U: Scalar>(&self) -> Camera<U> {
        Camera {
            k: self.k.cast(),
            rotation: self.rotation.cast(),
            position: self.position.cast(),
            width: self.width,
            height: self.height,
        }
    }
}
