//! Analytic scenes rendered by exact ray casting, with depth and visibility oracles.

use super::dataset::SceneDataset;
use crate::geometry::{Camera, OcclusionMask};
use crate::image::{DepthMap, Image};
use crate::linalg::{Mat3, Vec3};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

type V = Vec3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// One randomly tilted, smoothly textured plane filling every view.
    TexturedPlane,
    /// A fronto-parallel rectangle in front of a fronto-parallel back plane; cameras
    /// translate along x so both planes move by whole pixels between views.
    TwoPlaneOccluder,
    /// A box on a finite ground square, viewed from the upper hemisphere.
    TexturedCube,
}

impl SceneKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "textured-plane" => Ok(Self::TexturedPlane),
            "two-plane-occluder" => Ok(Self::TwoPlaneOccluder),
            "textured-cube" => Ok(Self::TexturedCube),
            other => Err(Error::InvalidArgument(format!("unknown synthetic scene {other:?}"))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Self::TexturedPlane => "textured-plane",
            Self::TwoPlaneOccluder => "two-plane-occluder",
            Self::TexturedCube => "textured-cube",
        }
    }
}

/// Smooth solid texture: `base + sum_k amp_k * sin(freq_k . p + phase_k)` per channel.
#[derive(Clone, Debug)]
pub struct SolidTexture {
    base: [f64; 3],
    waves: Vec<(V, [f64; 3], f64)>,
}

impl SolidTexture {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_freq: f64, amplitude: f64, waves: usize) -> Self {
        let base = [0; 3].map(|_| rng.gen_range(0.35..0.65));
        let waves = (0..waves)
            .map(|_| {
                let dir = V::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalized();
                let f = rng.gen_range(0.4 * max_freq..max_freq);
                let amp = [0; 3].map(|_| rng.gen_range(0.3..1.0) * amplitude / waves as f64);
                (dir * f, amp, rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        Self { base, waves }
    }

    pub fn color(&self, p: V, offset: [f64; 3]) -> [f64; 3] {
        let mut c = self.base;
        for (f, amp, phase) in &self.waves {
            let s = (f.dot(p) + phase).sin();
            for ch in 0..3 {
                c[ch] += amp[ch] * s;
            }
        }
        [0, 1, 2].map(|ch| (c[ch] + offset[ch]).clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug)]
pub enum Shape {
    Plane { point: V, normal: V },
    /// Rectangle spanned by orthonormal `u`, `v` around `center`.
    Rect { center: V, u: V, v: V, half: [f64; 2] },
    /// Axis-aligned box.
    Box { min: V, max: V },
}

#[derive(Clone, Debug)]
pub struct Surface {
    pub shape: Shape,
    pub texture: SolidTexture,
    /// Per-face color offsets (boxes use six, other shapes one).
    pub face_tint: Vec<[f64; 3]>,
}

/// First intersection along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: V,
    pub surface: usize,
    pub face: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub surfaces: Vec<Surface>,
    pub background: [f64; 3],
    pub center: V,
    pub near: f64,
    pub far: f64,
}

/// Exact rendering of one camera.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub image: Image<f64>,
    /// Z-depth; `+inf` where the ray escapes.
    pub depth: DepthMap<f64>,
    pub hits: Vec<Option<(usize, usize)>>,
}

fn intersect_shape(shape: &Shape, o: V, d: V) -> Option<(f64, usize)> {
    const EPS: f64 = 1e-12;
    match shape {
        Shape::Plane { point, normal } => {
            let den = normal.dot(d);
            if den.abs() < EPS {
                return None;
            }
            let t = normal.dot(*point - o) / den;
            (t > EPS).then_some((t, 0))
        }
        Shape::Rect { center, u, v, half } => {
            let n = u.cross(*v);
            let den = n.dot(d);
            if den.abs() < EPS {
                return None;
            }
            let t = n.dot(*center - o) / den;
            if t <= EPS {
                return None;
            }
            let q = o + d * t - *center;
            (q.dot(*u).abs() <= half[0] && q.dot(*v).abs() <= half[1]).then_some((t, 0))
        }
        Shape::Box { min, max } => {
            let (o, d, lo, hi) = (o.to_array(), d.to_array(), min.to_array(), max.to_array());
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut face = 0;
            for a in 0..3 {
                if d[a].abs() < EPS {
                    if o[a] < lo[a] || o[a] > hi[a] {
                        return None;
                    }
                    continue;
                }
                let (mut near, mut far) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
                let mut f = 2 * a;
                if near > far {
                    std::mem::swap(&mut near, &mut far);
                    f += 1;
                }
                if near > t0 {
                    t0 = near;
                    face = f;
                }
                t1 = t1.min(far);
            }
            (t0 <= t1 && t0 > EPS).then_some((t0, face))
        }
    }
}

impl SyntheticScene {
    pub fn intersect(&self, o: V, d: V) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some((t, face)) = intersect_shape(&s.shape, o, d) {
                if best.map_or(true, |b| t < b.t) {
                    best = Some(Hit { t, point: o + d * t, surface: i, face });
                }
            }
        }
        best
    }

    pub fn shade(&self, hit: &Hit) -> [f64; 3] {
        let s = &self.surfaces[hit.surface];
        s.texture.color(hit.point, s.face_tint[hit.face.min(s.face_tint.len() - 1)])
    }

    /// First hit through continuous pixel `uv` of `cam`.
    pub fn cast_pixel(&self, cam: &Camera<f64>, uv: [f64; 2]) -> Option<Hit> {
        self.intersect(cam.position, cam.ray_direction(uv[0], uv[1]))
    }

    pub fn render(&self, cam: &Camera<f64>) -> RenderedView {
        let (w, h) = (cam.width, cam.height);
        let mut image = Image::new(w, h, 3);
        let mut depth = Image::filled(w, h, 1, f64::INFINITY);
        let mut hits = vec![None; w * h];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let color = match self.cast_pixel(cam, [x as f64 + 0.5, y as f64 + 0.5]) {
                    Some(hit) => {
                        // ray directions have unit camera-z extent, so t is z-depth
                        depth.data[p] = hit.t;
                        hits[p] = Some((hit.surface, hit.face));
                        self.shade(&hit)
                    }
                    None => self.background,
                };
                image.data[3 * p..3 * p + 3].copy_from_slice(&color);
            }
        }
        RenderedView { image, depth, hits }
    }

    /// Analytic cross-view visibility: target pixel `p` of `cam_j` is visible from
    /// `cam_i` when its surface point projects inside `cam_i`'s sampling region
    /// (`[0.5, W - 0.5]` per axis) and is the first hit along `cam_i`'s ray.
    pub fn visibility(&self, cam_j: &Camera<f64>, cam_i: &Camera<f64>) -> OcclusionMask<f64> {
        let (w, h) = (cam_j.width, cam_j.height);
        let mut values = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let Some(hit) = self.cast_pixel(cam_j, [x as f64 + 0.5, y as f64 + 0.5]) else { continue };
                values[y * w + x] = self.seen_from(cam_i, &hit);
            }
        }
        OcclusionMask { width: w, height: h, values, threshold_used: 0.0 }
    }

    fn seen_from(&self, cam: &Camera<f64>, hit: &Hit) -> bool {
        let Some(uv) = cam.project(hit.point) else { return false };
        if !in_sampling_region(cam, uv) {
            return false;
        }
        match self.cast_pixel(cam, uv) {
            Some(h2) => h2.surface == hit.surface && (h2.point - hit.point).norm() < 1e-6 * (1.0 + hit.t),
            None => false,
        }
    }

    /// Target pixels whose warp from `cam_i` is fully determined by one smooth surface:
    /// visible, and all four bilinear neighbors in `cam_i` see the same face.
    pub fn smooth_warp_pixels(&self, cam_j: &Camera<f64>, cam_i: &Camera<f64>) -> Vec<bool> {
        let (w, h) = (cam_j.width, cam_j.height);
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let Some(hit) = self.cast_pixel(cam_j, [x as f64 + 0.5, y as f64 + 0.5]) else { continue };
                if !self.seen_from(cam_i, &hit) {
                    continue;
                }
                let uv = cam_i.project(hit.point).expect("visible point projects");
                let (x0, y0) = ((uv[0] - 0.5).floor(), (uv[1] - 0.5).floor());
                let same = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)].iter().all(|&(dx, dy)| {
                    let (px, py) = ((x0 + dx).min(cam_i.width as f64 - 1.0), (y0 + dy).min(cam_i.height as f64 - 1.0));
                    self.cast_pixel(cam_i, [px + 0.5, py + 0.5])
                        .is_some_and(|n| n.surface == hit.surface && n.face == hit.face)
                });
                out[y * w + x] = same;
            }
        }
        out
    }

    /// Builds a random scene of the given kind.
    pub fn random<R: Rng + ?Sized>(kind: SceneKind, rng: &mut R) -> Self {
        match kind {
            SceneKind::TexturedPlane => {
                let tilt = Mat3::from_euler_xyz([rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25), 0.0]);
                let normal = tilt.mul_vec(V::new(0.0, 0.0, 1.0));
                let point = V::new(0.0, 0.0, -rng.gen_range(3.0..4.0));
                let surface = Surface {
                    shape: Shape::Plane { point, normal },
                    texture: SolidTexture::random(rng, 1.2, 0.3, 3),
                    face_tint: vec![[0.0; 3]],
                };
                Self { kind, surfaces: vec![surface], background: [0.0; 3], center: point, near: 1.5, far: 6.0 }
            }
            SceneKind::TwoPlaneOccluder => {
                let back = Surface {
                    shape: Shape::Plane { point: V::new(0.0, 0.0, -4.0), normal: V::new(0.0, 0.0, 1.0) },
                    texture: SolidTexture::random(rng, 1.2, 0.3, 3),
                    face_tint: vec![[-0.15; 3]],
                };
                let front = Surface {
                    shape: Shape::Rect {
                        center: V::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), -2.0),
                        u: V::new(1.0, 0.0, 0.0),
                        v: V::new(0.0, 1.0, 0.0),
                        half: [rng.gen_range(0.35..0.6), rng.gen_range(0.35..0.6)],
                    },
                    texture: SolidTexture::random(rng, 1.2, 0.3, 3),
                    face_tint: vec![[0.2, 0.1, -0.1]],
                };
                Self {
                    kind,
                    surfaces: vec![back, front],
                    background: [0.0; 3],
                    center: V::new(0.0, 0.0, -3.0),
                    near: 1.0,
                    far: 5.0,
                }
            }
            SceneKind::TexturedCube => {
                let ground = Surface {
                    shape: Shape::Rect {
                        center: V::zero(),
                        u: V::new(1.0, 0.0, 0.0),
                        v: V::new(0.0, 1.0, 0.0),
                        half: [1.5, 1.5],
                    },
                    texture: SolidTexture::random(rng, 1.0, 0.3, 3),
                    face_tint: vec![[-0.1; 3]],
                };
                let tints = (0..6)
                    .map(|_| [0; 3].map(|_| rng.gen_range(-0.2..0.2)))
                    .collect();
                let cube = Surface {
                    shape: Shape::Box { min: V::new(-0.5, -0.5, 0.0), max: V::new(0.5, 0.5, 1.0) },
                    texture: SolidTexture::random(rng, 1.0, 0.3, 3),
                    face_tint: tints,
                };
                Self {
                    kind,
                    surfaces: vec![ground, cube],
                    background: [1.0; 3],
                    center: V::new(0.0, 0.0, 0.25),
                    near: 1.5,
                    far: 6.5,
                }
            }
        }
    }

    /// Camera `index` of a rig with `count` cameras at `resolution x resolution`.
    ///
    /// Two-plane rigs place camera `k` at `x = 0.25 (k - count/2)` with focal length
    /// `resolution / 2`; with a resolution divisible by 32 both planes then shift by
    /// whole pixels between any two cameras.
    pub fn rig_camera<R: Rng + ?Sized>(&self, index: usize, count: usize, resolution: usize, rng: &mut R) -> Result<Camera<f64>> {
        let n = resolution;
        let half = 0.5 * n as f64;
        match self.kind {
            SceneKind::TexturedPlane => {
                let rot = Mat3::from_euler_xyz([rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08), rng.gen_range(-0.05..0.05)]);
                let pos = if index == 0 {
                    V::zero()
                } else {
                    V::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.2..0.2))
                };
                let rot = if index == 0 { Mat3::identity() } else { rot };
                Camera::from_parts(Camera::intrinsics(n as f64, n as f64, half, half), rot, pos, n, n)
            }
            SceneKind::TwoPlaneOccluder => {
                let x = 0.25 * (index as f64 - (count / 2) as f64);
                Camera::from_parts(Camera::intrinsics(half, half, half, half), Mat3::identity(), V::new(x, 0.0, 0.0), n, n)
            }
            SceneKind::TexturedCube => {
                let azimuth = 2.0 * PI * index as f64 / count as f64 + rng.gen_range(-0.15..0.15);
                let elevation = rng.gen_range(25f64..50.0).to_radians();
                let r = 4.0;
                let eye = V::new(r * elevation.cos() * azimuth.cos(), r * elevation.cos() * azimuth.sin(), r * elevation.sin());
                let focal = half / (30f64.to_radians()).tan();
                Camera::look_at(
                    Camera::intrinsics(focal, focal, half, half),
                    eye,
                    self.center,
                    V::new(0.0, 0.0, 1.0),
                    n,
                    n,
                )
            }
        }
    }
}

fn in_sampling_region(cam: &Camera<f64>, uv: [f64; 2]) -> bool {
    let (x, y) = (uv[0] - 0.5, uv[1] - 0.5);
    x >= 0.0 && y >= 0.0 && x <= (cam.width - 1) as f64 && y <= (cam.height - 1) as f64
}

/// Options for [`make_synthetic_scene`].
#[derive(Clone, Copy, Debug)]
pub struct SyntheticOptions {
    pub kind: SceneKind,
    pub n_train: usize,
    pub n_test: usize,
    pub resolution: usize,
}

/// Generates a scene and a dataset of exact renderings. Training views come first.
///
/// Cube rigs spread training views evenly in azimuth and draw test views from a
/// separate generator, so the test set is the same for any `n_train`. Two-plane rigs
/// alternate train and test cameras along the baseline.
pub fn make_synthetic_scene<R: Rng + ?Sized>(opts: SyntheticOptions, rng: &mut R) -> Result<(SceneDataset<f64>, SyntheticScene)> {
    if opts.n_train == 0 || opts.resolution < 8 {
        return Err(Error::InvalidArgument(format!("{} training views at {}px", opts.n_train, opts.resolution)));
    }
    let scene = SyntheticScene::random(opts.kind, rng);
    let test_seed: u64 = rng.gen();
    let total = opts.n_train + opts.n_test;
    let mut cameras = Vec::with_capacity(total);
    match opts.kind {
        SceneKind::TexturedCube => {
            // test views come from their own generator so they do not depend on n_train
            let mut test_rng = ChaCha8Rng::seed_from_u64(test_seed);
            for k in 0..opts.n_train {
                cameras.push(scene.rig_camera(k, opts.n_train, opts.resolution, rng)?);
            }
            for k in 0..opts.n_test {
                cameras.push(scene.rig_camera(2 * k + 1, 2 * opts.n_test, opts.resolution, &mut test_rng)?);
            }
        }
        SceneKind::TwoPlaneOccluder => {
            // training views on even slots, test views on odd slots of one baseline
            let slots = 2 * opts.n_train.max(opts.n_test);
            for k in 0..opts.n_train {
                cameras.push(scene.rig_camera(2 * k, slots, opts.resolution, rng)?);
            }
            for k in 0..opts.n_test {
                cameras.push(scene.rig_camera(2 * k + 1, slots, opts.resolution, rng)?);
            }
        }
        SceneKind::TexturedPlane => {
            for k in 0..total {
                cameras.push(scene.rig_camera(k, total, opts.resolution, rng)?);
            }
        }
    }
    let images = cameras.iter().map(|c| scene.render(c).image).collect();
    let dataset = SceneDataset {
        name: opts.kind.id().to_string(),
        images,
        cameras,
        near: scene.near,
        far: scene.far,
        train: (0..opts.n_train).collect(),
        test: (opts.n_train..total).collect(),
        background: scene.background,
        scene_center: scene.center,
    };
    dataset.validate()?;
    Ok((dataset, scene))
}
