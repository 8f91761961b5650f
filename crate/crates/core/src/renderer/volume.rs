//! Quadrature volume rendering of color and depth with an explicit backward pass.

use super::SampleSet;
use crate::field::{encode_batch, EncodingSpec, FieldCache, FieldParams};
use crate::geometry::RayBatch;
use crate::{Error, Result, Scalar};

/// Per-ray outputs of volume rendering.
#[derive(Clone, Debug)]
pub struct RenderResult<T> {
    pub n_rays: usize,
    pub n_samples: usize,
    /// `R x 3`, including background compositing.
    pub color: Vec<T>,
    /// Expected z-depth `sum_j w_j t_j` (not normalized by opacity).
    pub depth: Vec<T>,
    /// `R x n` quadrature weights.
    pub weights: Vec<T>,
    /// Transmittance left after the last sample.
    pub residual: Vec<T>,
}

impl<T: Scalar> RenderResult<T> {
    pub fn opacity(&self, r: usize) -> T {
        T::one() - self.residual[r]
    }
}

/// Intermediates needed by [`render_backward`].
#[derive(Clone, Debug)]
pub struct RenderCache<T> {
    field: FieldCache<T>,
    sigma: Vec<T>,
    rgb: Vec<T>,
    t: Vec<T>,
    deltas: Vec<T>,
    /// Transmittance before each sample.
    trans: Vec<T>,
    background: [T; 3],
}

/// Per-sample density and color from the field, before compositing.
pub(crate) struct FieldSamples<T> {
    pub sigma: Vec<T>,
    pub rgb: Vec<T>,
    pub cache: FieldCache<T>,
}

pub(crate) fn query_field<T: Scalar>(
    field: &FieldParams<T>,
    encoding: &EncodingSpec,
    rays: &RayBatch<T>,
    samples: &SampleSet<T>,
    step: usize,
) -> Result<FieldSamples<T>> {
    let n = samples.n_samples;
    if samples.n_rays != rays.len() {
        return Err(Error::ShapeMismatch(format!("{} rays vs {} sample rows", rays.len(), samples.n_rays)));
    }
    let total = rays.len() * n;
    let mut points = Vec::with_capacity(total);
    let mut dirs = Vec::with_capacity(total);
    for r in 0..rays.len() {
        let (o, d) = (rays.origins[r], rays.directions[r]);
        let unit = d.normalized();
        for &t in samples.row(r) {
            points.push(o + d * t);
            dirs.push(unit);
        }
    }
    let x_enc = encode_batch(&points, &encoding.position_weights::<T>(step), encoding.include_identity);
    let d_enc = encode_batch::<T>(&dirs, &encoding.direction_weights::<T>(step), encoding.include_identity);
    let (out, cache) = field.forward(&x_enc, &d_enc, total)?;
    Ok(FieldSamples { sigma: out.sigma, rgb: out.rgb, cache })
}

/// Composites per-sample densities and colors along each ray.
///
/// `alpha_j = exp(-sigma_j * delta_j)`, `w_j = A * (1 - alpha_j)` with `A` the running
/// product of the alphas (starting at 1); color and depth are `w`-weighted sums and
/// the residual `A` blends in the background color.
pub fn composite<T: Scalar>(
    sigma: &[T],
    rgb: &[T],
    samples: &SampleSet<T>,
    background: [T; 3],
) -> (RenderResult<T>, Vec<T>) {
    let (nr, n) = (samples.n_rays, samples.n_samples);
    let mut color = vec![T::zero(); nr * 3];
    let mut depth = vec![T::zero(); nr];
    let mut weights = vec![T::zero(); nr * n];
    let mut residual = vec![T::zero(); nr];
    let mut trans = vec![T::zero(); nr * n];
    for r in 0..nr {
        let mut a = T::one();
        let mut c = [T::zero(); 3];
        let mut d = T::zero();
        for j in 0..n {
            let k = r * n + j;
            trans[k] = a;
            let alpha = (-sigma[k] * samples.deltas[k]).exp();
            let w = a * (T::one() - alpha);
            weights[k] = w;
            for ch in 0..3 {
                c[ch] += w * rgb[3 * k + ch];
            }
            d += w * samples.t[k];
            a = a * alpha;
        }
        residual[r] = a;
        for ch in 0..3 {
            color[3 * r + ch] = c[ch] + a * background[ch];
        }
        depth[r] = d;
    }
    (RenderResult { n_rays: nr, n_samples: n, color, depth, weights, residual }, trans)
}

/// Renders color and depth for every ray in `rays` with one network.
pub fn render_rays<T: Scalar>(
    field: &FieldParams<T>,
    encoding: &EncodingSpec,
    rays: &RayBatch<T>,
    samples: &SampleSet<T>,
    step: usize,
    background: [T; 3],
) -> Result<(RenderResult<T>, RenderCache<T>)> {
    let fs = query_field(field, encoding, rays, samples, step)?;
    let (result, trans) = composite(&fs.sigma, &fs.rgb, samples, background);
    let cache = RenderCache {
        field: fs.cache,
        sigma: fs.sigma,
        rgb: fs.rgb,
        t: samples.t.clone(),
        deltas: samples.deltas.clone(),
        trans,
        background,
    };
    Ok((result, cache))
}

/// Gradients of a loss w.r.t. per-sample density and color, given gradients on the
/// rendered color (`R x 3`), depth (`R`) and residual transmittance (`R`, optional).
pub fn composite_backward<T: Scalar>(
    sigma: &[T],
    rgb: &[T],
    t: &[T],
    deltas: &[T],
    trans: &[T],
    n_samples: usize,
    background: [T; 3],
    d_color: &[T],
    d_depth: &[T],
    d_residual: Option<&[T]>,
) -> (Vec<T>, Vec<T>) {
    let n = n_samples;
    let nr = d_depth.len();
    let mut d_sigma = vec![T::zero(); nr * n];
    let mut d_rgb = vec![T::zero(); nr * n * 3];
    let mut v = vec![T::zero(); n];
    let mut after = vec![T::zero(); n];
    for r in 0..nr {
        let g = [d_color[3 * r], d_color[3 * r + 1], d_color[3 * r + 2]];
        let gd = d_depth[r];
        // transmittance after each sample and the per-sample "value" v_j
        let mut wsum_tail = T::zero();
        for j in 0..n {
            let k = r * n + j;
            after[j] = trans[k] * (-sigma[k] * deltas[k]).exp();
            v[j] = g[0] * rgb[3 * k] + g[1] * rgb[3 * k + 1] + g[2] * rgb[3 * k + 2] + gd * t[k];
            let w = trans[k] - after[j];
            for ch in 0..3 {
                d_rgb[3 * k + ch] = w * g[ch];
            }
        }
        let a_final = after[n - 1];
        let v_final = g[0] * background[0] + g[1] * background[1] + g[2] * background[2]
            + d_residual.map_or(T::zero(), |d| d[r]);
        // dL/ds_k = v_k A_{k+1} - sum_{j>k} w_j v_j - v_final A_final, with s_k = sigma_k delta_k
        for j in (0..n).rev() {
            let k = r * n + j;
            let ds = v[j] * after[j] - wsum_tail - v_final * a_final;
            d_sigma[k] = ds * deltas[k];
            wsum_tail += (trans[k] - after[j]) * v[j];
        }
    }
    (d_sigma, d_rgb)
}

/// Backpropagates rendered-output gradients into `grads` (flat parameter gradients).
pub fn render_backward<T: Scalar>(
    field: &FieldParams<T>,
    cache: &RenderCache<T>,
    d_color: &[T],
    d_depth: &[T],
    d_residual: Option<&[T]>,
    grads: &mut [T],
) {
    let n = cache.t.len() / d_depth.len().max(1);
    let (d_sigma, d_rgb) = composite_backward(
        &cache.sigma,
        &cache.rgb,
        &cache.t,
        &cache.deltas,
        &cache.trans,
        n,
        cache.background,
        d_color,
        d_depth,
        d_residual,
    );
    field.backward(&cache.field, &d_sigma, &d_rgb, grads);
}
