//! Novel viewpoint generation around the input cameras.

use super::Camera;
use crate::linalg::{Mat3, Vec3};
use crate::{Error, Result, Scalar};
use rand::Rng;

/// Samples unobserved poses by perturbing the x/y Euler angles of a reference pose.
///
/// The perturbation range grows linearly from `range_start_deg` at step 0 to
/// `range_end_deg` at `total_steps`. The camera orbits `orbit_center` so that a
/// reference camera aimed at the center stays aimed at it.
#[derive(Clone, Debug)]
pub struct PoseSampler<T> {
    pub reference_poses: Vec<Camera<T>>,
    pub range_start_deg: T,
    pub range_end_deg: T,
    pub total_steps: usize,
    pub orbit_center: Vec3<T>,
}

#[derive(Clone, Debug)]
pub struct NovelPose<T> {
    pub camera: Camera<T>,
    /// Index into the sampler's reference poses.
    pub reference: usize,
    /// Offsets added to the x and y Euler components, in degrees.
    pub offsets_deg: [T; 2],
    /// Half-width of the sampling interval used for this draw.
    pub range_deg: T,
}

impl<T: Scalar> PoseSampler<T> {
    pub fn new(reference_poses: Vec<Camera<T>>, range_start_deg: T, range_end_deg: T, total_steps: usize) -> Result<Self> {
        if !(range_start_deg >= T::zero() && range_start_deg <= range_end_deg) {
            return Err(Error::InvalidArgument(format!(
                "pose range must satisfy 0 <= start ({range_start_deg}) <= end ({range_end_deg})"
            )));
        }
        Ok(Self { reference_poses, range_start_deg, range_end_deg, total_steps, orbit_center: Vec3::zero() })
    }

    pub fn with_orbit_center(mut self, center: Vec3<T>) -> Self {
        self.orbit_center = center;
        self
    }

    /// Half-width of the offset interval at `step`.
    pub fn range_at(&self, step: usize) -> T {
        if self.total_steps == 0 {
            return self.range_end_deg;
        }
        let frac = T::of_usize(step.min(self.total_steps)) / T::of_usize(self.total_steps);
        self.range_start_deg + (self.range_end_deg - self.range_start_deg) * frac
    }

    pub fn sample<R: Rng + ?Sized>(&self, step: usize, rng: &mut R) -> Result<NovelPose<T>> {
        if self.reference_poses.is_empty() {
            return Err(Error::EmptyReferenceSet);
        }
        if step > self.total_steps {
            return Err(Error::InvalidArgument(format!("step {step} beyond {} total steps", self.total_steps)));
        }
        let reference = rng.gen_range(0..self.reference_poses.len());
        let base = &self.reference_poses[reference];
        let d = self.range_at(step);
        let mut draw = || T::of(rng.gen::<f64>() * 2.0 - 1.0) * d;
        let offsets_deg = [draw(), draw()];
        let mut euler = base.rotation.to_euler_xyz();
        euler[0] = euler[0] + offsets_deg[0].to_radians();
        euler[1] = euler[1] + offsets_deg[1].to_radians();
        let rotation = Mat3::from_euler_xyz(euler);
        let relative = rotation.mul_mat(&base.rotation.transpose());
        let position = self.orbit_center + relative.mul_vec(base.position - self.orbit_center);
        let camera = Camera::from_parts(base.k, rotation, position, base.width, base.height)?;
        Ok(NovelPose { camera, reference, offsets_deg, range_deg: d })
    }
}

/// Convenience wrapper matching the free-function form.
pub fn sample_novel_pose<T: Scalar, R: Rng + ?Sized>(sampler: &PoseSampler<T>, step: usize, rng: &mut R) -> Result<Camera<T>> {
    sampler.sample(step, rng).map(|p| p.camera)
}
