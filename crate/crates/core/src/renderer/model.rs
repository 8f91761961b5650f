//! Coarse/fine radiance model: two networks sharing one encoding, rendered hierarchically.

use super::samples::{hierarchical_resample, stratified_samples, SampleSet};
use super::volume::{render_backward, render_rays, RenderCache, RenderResult};
use crate::field::{EncodingSpec, FieldArch, FieldParams};
use crate::geometry::RayBatch;
use crate::{Error, Result, Scalar};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct RadianceModel<T> {
    pub encoding: EncodingSpec,
    pub coarse: FieldParams<T>,
    /// `None` disables the hierarchical pass.
    pub fine: Option<FieldParams<T>>,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub background: [T; 3],
}

/// One rendering level with what its backward pass needs.
#[derive(Clone, Debug)]
pub struct LevelOutput<T> {
    pub result: RenderResult<T>,
    pub samples: SampleSet<T>,
    cache: Option<RenderCache<T>>,
}

#[derive(Clone, Debug)]
pub struct ModelOutput<T> {
    pub coarse: LevelOutput<T>,
    pub fine: Option<LevelOutput<T>>,
}

impl<T: Scalar> ModelOutput<T> {
    /// The fine result when present, otherwise the coarse one.
    pub fn result(&self) -> &RenderResult<T> {
        self.fine.as_ref().map_or(&self.coarse.result, |f| &f.result)
    }

    pub fn levels(&self) -> impl Iterator<Item = &LevelOutput<T>> {
        std::iter::once(&self.coarse).chain(self.fine.as_ref())
    }
}

/// Upstream gradients for one level.
#[derive(Clone, Debug)]
pub struct LevelGrad<T> {
    pub color: Vec<T>,
    pub depth: Vec<T>,
    /// Gradient on the residual transmittance.
    pub residual: Vec<T>,
}

impl<T: Scalar> LevelGrad<T> {
    pub fn zeros(n_rays: usize) -> Self {
        Self { color: vec![T::zero(); 3 * n_rays], depth: vec![T::zero(); n_rays], residual: vec![T::zero(); n_rays] }
    }
}

/// Flat gradients for both networks.
#[derive(Clone, Debug)]
pub struct ModelGrads<T> {
    pub coarse: Vec<T>,
    pub fine: Vec<T>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn len(&self) -> usize {
        self.coarse.len() + self.fine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_scaled(&mut self, other: &Self, s: T) {
        for (a, &b) in self.coarse.iter_mut().zip(&other.coarse).chain(self.fine.iter_mut().zip(&other.fine)) {
            *a += s * b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.coarse.iter().chain(&self.fine)
    }
}

impl<T: Scalar> RadianceModel<T> {
    pub fn new<R: Rng + ?Sized>(
        encoding: EncodingSpec,
        depth: usize,
        width: usize,
        head_width: usize,
        n_coarse: usize,
        n_fine: usize,
        background: [T; 3],
        rng: &mut R,
    ) -> Result<Self> {
        if n_coarse < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 coarse samples, got {n_coarse}")));
        }
        let arch = FieldArch { pos_dim: encoding.pos_dim(), dir_dim: encoding.dir_dim(), depth, width, head_width };
        let coarse = FieldParams::init(arch, rng)?;
        let fine = if n_fine > 0 { Some(FieldParams::init(arch, rng)?) } else { None };
        Ok(Self { encoding, coarse, fine, n_coarse, n_fine, background })
    }

    pub fn arch(&self) -> FieldArch {
        self.coarse.arch
    }

    pub fn num_params(&self) -> usize {
        self.coarse.num_params() + self.fine.as_ref().map_or(0, |f| f.num_params())
    }

    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            coarse: self.coarse.zero_grads(),
            fine: self.fine.as_ref().map_or_else(Vec::new, |f| f.zero_grads()),
        }
    }

    /// Mutable parameter slices paired with their gradients, coarse first.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = vec![self.coarse.params.as_mut_slice()];
        if let Some(f) = self.fine.as_mut() {
            v.push(f.params.as_mut_slice());
        }
        v
    }

    pub fn flat_params(&self) -> Vec<T> {
        let mut v = self.coarse.params.clone();
        if let Some(f) = &self.fine {
            v.extend_from_slice(&f.params);
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!("{} parameters for a model of {}", flat.len(), self.num_params())));
        }
        let nc = self.coarse.num_params();
        self.coarse.params.copy_from_slice(&flat[..nc]);
        if let Some(f) = self.fine.as_mut() {
            f.params.copy_from_slice(&flat[nc..]);
        }
        Ok(())
    }

    /// Renders rays through both levels. With `keep_cache` off, no activations are
    /// retained and [`RadianceModel::backward`] cannot be called on the output.
    pub fn render<R: Rng + ?Sized>(
        &self,
        rays: &RayBatch<T>,
        step: usize,
        jitter: bool,
        keep_cache: bool,
        rng: &mut R,
    ) -> Result<ModelOutput<T>> {
        let samples = stratified_samples(rays, self.n_coarse, jitter, rng)?;
        let (result, cache) = render_rays(&self.coarse, &self.encoding, rays, &samples, step, self.background)?;
        let fine = match &self.fine {
            Some(fine) if self.n_fine > 0 => {
                let fs = hierarchical_resample(&result.weights, &samples, self.n_fine, rng)?;
                let (fr, fc) = render_rays(fine, &self.encoding, rays, &fs, step, self.background)?;
                Some(LevelOutput { result: fr, samples: fs, cache: keep_cache.then_some(fc) })
            }
            _ => None,
        };
        Ok(ModelOutput { coarse: LevelOutput { result, samples, cache: keep_cache.then_some(cache) }, fine })
    }

    /// Forward-only rendering in ray chunks to bound memory. Returns `(color, depth)`
    /// of the final level.
    pub fn render_chunked<R: Rng + ?Sized>(
        &self,
        rays: &RayBatch<T>,
        step: usize,
        chunk: usize,
        rng: &mut R,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let chunk = chunk.max(1);
        let mut color = Vec::with_capacity(rays.len() * 3);
        let mut depth = Vec::with_capacity(rays.len());
        let mut start = 0;
        while start < rays.len() {
            let end = (start + chunk).min(rays.len());
            let part = RayBatch::new(
                rays.origins[start..end].to_vec(),
                rays.directions[start..end].to_vec(),
                rays.near,
                rays.far,
            )?;
            let out = self.render(&part, step, false, false, rng)?;
            color.extend_from_slice(&out.result().color);
            depth.extend_from_slice(&out.result().depth);
            start = end;
        }
        Ok((color, depth))
    }

    /// Accumulates parameter gradients from per-level upstream gradients.
    pub fn backward(
        &self,
        out: &ModelOutput<T>,
        d_coarse: Option<&LevelGrad<T>>,
        d_fine: Option<&LevelGrad<T>>,
        grads: &mut ModelGrads<T>,
    ) -> Result<()> {
        let missing = || Error::InvalidArgument("render output was produced without a cache".into());
        if let Some(g) = d_coarse {
            let cache = out.coarse.cache.as_ref().ok_or_else(missing)?;
            render_backward(&self.coarse, cache, &g.color, &g.depth, Some(&g.residual), &mut grads.coarse);
        }
        if let (Some(g), Some(level), Some(net)) = (d_fine, out.fine.as_ref(), self.fine.as_ref()) {
            let cache = level.cache.as_ref().ok_or_else(missing)?;
            render_backward(net, cache, &g.color, &g.depth, Some(&g.residual), &mut grads.fine);
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> RadianceModel<U> {
        RadianceModel {
            encoding: self.encoding.clone(),
            coarse: self.coarse.cast(),
            fine: self.fine.as_ref().map(|f| f.cast()),
            n_coarse: self.n_coarse,
            n_fine: self.n_fine,
            background: self.background.map(|b| U::of(b.as_f64())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vec3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(n_fine: usize) -> RadianceModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncodingSpec { num_freqs_pos: 3, num_freqs_dir: 2, anneal_steps: 10, ..Default::default() };
        RadianceModel::new(enc, 2, 16, 8, 8, n_fine, [1.0; 3], &mut rng).unwrap()
    }

    fn rays(n: usize) -> RayBatch<f64> {
        let o = vec![Vec3::new(0.0, 0.0, 3.0); n];
        let d = (0..n).map(|i| Vec3::new(0.1 * i as f64, -0.05, -1.0)).collect();
        RayBatch::new(o, d, 2.0, 4.0).unwrap()
    }

    #[test]
    fn fine_level_merges_samples() {
        let m = small(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = m.render(&rays(3), 5, true, true, &mut rng).unwrap();
        let fine = out.fine.as_ref().unwrap();
        assert_eq!(fine.samples.n_samples, 16);
        for r in 0..3 {
            let s: f64 = fine.result.weights[r * 16..(r + 1) * 16].iter().sum::<f64>() + fine.result.residual[r];
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn chunked_matches_single_pass_without_fine() {
        let m = small(0);
        let r = rays(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let whole = m.render(&r, 3, false, false, &mut rng).unwrap();
        let (c, d) = m.render_chunked(&r, 3, 2, &mut rng).unwrap();
        for (a, b) in c.iter().zip(&whole.result().color) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in d.iter().zip(&whole.result().depth) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_without_cache_errors() {
        let m = small(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = m.render(&rays(2), 0, false, false, &mut rng).unwrap();
        let mut g = m.zero_grads();
        assert!(m.backward(&out, Some(&LevelGrad::zeros(2)), None, &mut g).is_err());
    }
}
