//! Strided patch rendering with depth upsampled back to full patch resolution.

use super::model::{LevelGrad, ModelGrads, ModelOutput, RadianceModel};
use crate::geometry::{make_patch_rays, upsample_strided, upsample_strided_backward, Camera, RayPatch};
use crate::image::{DepthMap, Image};
use crate::{Result, Scalar};
use rand::Rng;

/// A patch rendered on a strided grid.
#[derive(Clone, Debug)]
pub struct PatchRender<T> {
    pub patch: RayPatch<T>,
    /// Rendered color on the strided grid (`grid_width x grid_height x 3`).
    pub color_lowres: Image<T>,
    /// Surface depth on the grid: expected depth plus the residual transmittance
    /// placed at the far bound, so it always lies in `[near, far]`.
    pub depth_lowres: DepthMap<T>,
    /// Surface depth upsampled to the pixel footprint.
    pub depth_full: DepthMap<T>,
    pub output: ModelOutput<T>,
}

impl<T: Scalar> PatchRender<T> {
    /// Rendered color upsampled to the pixel footprint.
    pub fn color_full(&self) -> Image<T> {
        upsample_strided(&self.color_lowres, self.patch.stride)
    }
}

fn grid_image<T: Scalar>(w: usize, h: usize, ch: usize, data: &[T]) -> Image<T> {
    Image { width: w, height: h, channels: ch, data: data.to_vec() }
}

/// Renders a `size[0] x size[1]` grid of rays at `stride` starting at pixel `origin`.
#[allow(clippy::too_many_arguments)]
pub fn render_patch<T: Scalar, R: Rng + ?Sized>(
    model: &RadianceModel<T>,
    camera: &Camera<T>,
    origin: [usize; 2],
    size: [usize; 2],
    stride: usize,
    near: T,
    far: T,
    step: usize,
    jitter: bool,
    rng: &mut R,
) -> Result<PatchRender<T>> {
    let patch = make_patch_rays(camera, origin, size, stride, near, far)?;
    let output = model.render(&patch.rays, step, jitter, true, rng)?;
    let res = output.result();
    let (w, h) = (patch.grid_width, patch.grid_height);
    let color_lowres = grid_image(w, h, 3, &res.color);
    let surface: Vec<T> = res.depth.iter().zip(&res.residual).map(|(&d, &a)| d + a * far).collect();
    let depth_lowres = grid_image(w, h, 1, &surface);
    let depth_full = upsample_strided(&depth_lowres, stride);
    Ok(PatchRender { patch, color_lowres, depth_lowres, depth_full, output })
}

/// Backpropagates gradients on the full-resolution color and depth of a patch into
/// the final rendering level (the fine network when present).
pub fn render_patch_backward<T: Scalar>(
    model: &RadianceModel<T>,
    render: &PatchRender<T>,
    d_color_full: Option<&Image<T>>,
    d_depth_full: Option<&DepthMap<T>>,
    grads: &mut ModelGrads<T>,
) -> Result<()> {
    let n = render.patch.rays.len();
    let stride = render.patch.stride;
    let mut g = LevelGrad::zeros(n);
    if let Some(dc) = d_color_full {
        dc.ensure_same_shape(&render.color_full(), "color gradient")?;
        g.color = upsample_strided_backward(dc, stride).data;
    }
    if let Some(dd) = d_depth_full {
        dd.ensure_same_shape(&render.depth_full, "depth gradient")?;
        g.depth = upsample_strided_backward(dd, stride).data;
        let far = render.patch.rays.far;
        g.residual = g.depth.iter().map(|&d| d * far).collect();
    }
    if render.output.fine.is_some() {
        model.backward(&render.output, None, Some(&g), grads)
    } else {
        model.backward(&render.output, Some(&g), None, grads)
    }
}
