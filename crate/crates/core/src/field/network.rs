//! The radiance-field MLP: encoded position and direction to density and color.
//!
//! Density is read from the position trunk only; color additionally sees the
//! direction encoding through a small head. Parameters live in one flat buffer so
//! optimizers, clipping, hashing and checkpoints treat them uniformly.

use crate::{Error, Result, Scalar};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldArch {
    pub pos_dim: usize,
    pub dir_dim: usize,
    /// Number of hidden layers in the position trunk.
    pub depth: usize,
    pub width: usize,
    pub head_width: usize,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

impl Dense {
    fn end(&self) -> usize {
        self.b + self.fan_out
    }
}

#[derive(Clone, Debug)]
struct Layout {
    trunk: Vec<Dense>,
    sigma: Dense,
    feature: Dense,
    color_hidden: Dense,
    color_out: Dense,
    len: usize,
}

impl Layout {
    fn new(a: &FieldArch) -> Self {
        let mut off = 0;
        let mut dense = |fan_in: usize, fan_out: usize| {
            let d = Dense { fan_in, fan_out, w: off, b: off + fan_in * fan_out };
            off = d.end();
            d
        };
        let mut trunk = vec![dense(a.pos_dim, a.width)];
        for _ in 1..a.depth {
            trunk.push(dense(a.width, a.width));
        }
        let sigma = dense(a.width, 1);
        let feature = dense(a.width, a.width);
        let color_hidden = dense(a.width + a.dir_dim, a.head_width);
        let color_out = dense(a.head_width, 3);
        Self { trunk, sigma, feature, color_hidden, color_out, len: off }
    }
}

/// Parameters of one radiance-field network.
#[derive(Clone, Debug)]
pub struct FieldParams<T> {
    pub arch: FieldArch,
    pub params: Vec<T>,
    layout: Layout,
}

/// Per-point outputs of a batched forward pass.
#[derive(Clone, Debug)]
pub struct FieldOutput<T> {
    pub sigma: Vec<T>,
    /// `N x 3`, in `[0, 1]`.
    pub rgb: Vec<T>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct FieldCache<T> {
    n: usize,
    x_enc: Vec<T>,
    trunk: Vec<Vec<T>>,
    sigma_raw: Vec<T>,
    color_in: Vec<T>,
    hidden: Vec<T>,
    rgb: Vec<T>,
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn dense_forward<T: Scalar>(p: &[T], l: &Dense, x: &[T], n: usize, y: &mut [T]) {
    let (w, b) = (&p[l.w..l.b], &p[l.b..l.end()]);
    for row in y.chunks_exact_mut(l.fan_out) {
        row.copy_from_slice(b);
    }
    T::gemm(n, l.fan_in, l.fan_out, T::one(), x, l.fan_in, 1, w, l.fan_out, 1, T::one(), y, l.fan_out, 1);
}

/// Accumulates weight/bias gradients and optionally `dx += dy * W^T`.
fn dense_backward<T: Scalar>(p: &[T], l: &Dense, x: &[T], dy: &[T], n: usize, grads: &mut [T], dx: Option<&mut [T]>) {
    let (gw, gb) = grads[l.w..l.end()].split_at_mut(l.fan_in * l.fan_out);
    T::gemm(l.fan_in, n, l.fan_out, T::one(), x, 1, l.fan_in, dy, l.fan_out, 1, T::one(), gw, l.fan_out, 1);
    for row in dy.chunks_exact(l.fan_out) {
        for (g, &d) in gb.iter_mut().zip(row) {
            *g += d;
        }
    }
    if let Some(dx) = dx {
        let w = &p[l.w..l.b];
        T::gemm(n, l.fan_out, l.fan_in, T::one(), dy, l.fan_out, 1, w, 1, l.fan_out, T::one(), dx, l.fan_in, 1);
    }
}

fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn relu_mask<T: Scalar>(grad: &mut [T], activation: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Scalar> FieldParams<T> {
    /// Randomly initialized network (He-uniform for ReLU layers, Glorot for heads).
    pub fn init<R: Rng + ?Sized>(arch: FieldArch, rng: &mut R) -> Result<Self> {
        if arch.depth == 0 || arch.width == 0 || arch.head_width == 0 || arch.pos_dim == 0 {
            return Err(Error::InvalidArgument(format!("degenerate field architecture {arch:?}")));
        }
        let layout = Layout::new(&arch);
        let mut params = vec![T::zero(); layout.len];
        let mut fill = |l: &Dense, gain: f64| {
            let bound = (gain / l.fan_in as f64).sqrt();
            for v in &mut params[l.w..l.b] {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        };
        for l in &layout.trunk {
            fill(l, 6.0);
        }
        fill(&layout.color_hidden, 6.0);
        for l in [&layout.sigma, &layout.feature, &layout.color_out] {
            fill(l, 3.0);
        }
        Ok(Self { arch, params, layout })
    }

    /// Rebuilds a network from a flat parameter buffer.
    pub fn from_flat(arch: FieldArch, params: Vec<T>) -> Result<Self> {
        let layout = Layout::new(&arch);
        if params.len() != layout.len {
            return Err(Error::ShapeMismatch(format!("{} parameters for an architecture needing {}", params.len(), layout.len)));
        }
        Ok(Self { arch, params, layout })
    }

    pub fn num_params(&self) -> usize {
        self.layout.len
    }

    pub fn zero_grads(&self) -> Vec<T> {
        vec![T::zero(); self.layout.len]
    }

    /// Batched forward pass over `n` points.
    pub fn forward(&self, x_enc: &[T], d_enc: &[T], n: usize) -> Result<(FieldOutput<T>, FieldCache<T>)> {
        let a = &self.arch;
        if x_enc.len() != n * a.pos_dim || d_enc.len() != n * a.dir_dim {
            return Err(Error::ShapeMismatch(format!(
                "field input: {} position / {} direction values for {n} points of dims {}/{}",
                x_enc.len(),
                d_enc.len(),
                a.pos_dim,
                a.dir_dim
            )));
        }
        let p = &self.params;
        let l = &self.layout;
        let mut trunk = Vec::with_capacity(l.trunk.len());
        let mut input = x_enc;
        for layer in &l.trunk {
            let mut y = vec![T::zero(); n * layer.fan_out];
            dense_forward(p, layer, input, n, &mut y);
            relu_in_place(&mut y);
            trunk.push(y);
            input = trunk.last().map(|v| v.as_slice()).unwrap_or(x_enc);
        }
        let last = trunk.last().expect("non-empty trunk");
        let mut sigma_raw = vec![T::zero(); n];
        dense_forward(p, &l.sigma, last, n, &mut sigma_raw);
        let sigma = sigma_raw.iter().map(|&r| softplus(r)).collect();

        let mut feat = vec![T::zero(); n * a.width];
        dense_forward(p, &l.feature, last, n, &mut feat);
        let cin = a.width + a.dir_dim;
        let mut color_in = vec![T::zero(); n * cin];
        for i in 0..n {
            color_in[i * cin..i * cin + a.width].copy_from_slice(&feat[i * a.width..(i + 1) * a.width]);
            color_in[i * cin + a.width..(i + 1) * cin].copy_from_slice(&d_enc[i * a.dir_dim..(i + 1) * a.dir_dim]);
        }
        let mut hidden = vec![T::zero(); n * a.head_width];
        dense_forward(p, &l.color_hidden, &color_in, n, &mut hidden);
        relu_in_place(&mut hidden);
        let mut rgb = vec![T::zero(); n * 3];
        dense_forward(p, &l.color_out, &hidden, n, &mut rgb);
        for v in rgb.iter_mut() {
            *v = sigmoid(*v);
        }
        let out = FieldOutput { sigma, rgb: rgb.clone() };
        let cache = FieldCache { n, x_enc: x_enc.to_vec(), trunk, sigma_raw, color_in, hidden, rgb };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients for output gradients `d_sigma` (N) and `d_rgb` (N x 3).
    pub fn backward(&self, cache: &FieldCache<T>, d_sigma: &[T], d_rgb: &[T], grads: &mut [T]) {
        let n = cache.n;
        let a = &self.arch;
        let p = &self.params;
        let l = &self.layout;
        assert_eq!(grads.len(), l.len, "gradient buffer size");
        assert_eq!(d_sigma.len(), n);
        assert_eq!(d_rgb.len(), 3 * n);

        let d_logit: Vec<T> = d_rgb.iter().zip(&cache.rgb).map(|(&g, &c)| g * c * (T::one() - c)).collect();
        let mut d_hidden = vec![T::zero(); n * a.head_width];
        dense_backward(p, &l.color_out, &cache.hidden, &d_logit, n, grads, Some(&mut d_hidden));
        relu_mask(&mut d_hidden, &cache.hidden);
        let cin = a.width + a.dir_dim;
        let mut d_color_in = vec![T::zero(); n * cin];
        dense_backward(p, &l.color_hidden, &cache.color_in, &d_hidden, n, grads, Some(&mut d_color_in));
        let mut d_feat = vec![T::zero(); n * a.width];
        for i in 0..n {
            d_feat[i * a.width..(i + 1) * a.width].copy_from_slice(&d_color_in[i * cin..i * cin + a.width]);
        }

        let last = cache.trunk.last().expect("non-empty trunk");
        let mut d_trunk = vec![T::zero(); n * a.width];
        dense_backward(p, &l.feature, last, &d_feat, n, grads, Some(&mut d_trunk));
        let d_raw: Vec<T> = d_sigma.iter().zip(&cache.sigma_raw).map(|(&g, &r)| g * sigmoid(r)).collect();
        dense_backward(p, &l.sigma, last, &d_raw, n, grads, Some(&mut d_trunk));

        for k in (0..l.trunk.len()).rev() {
            relu_mask(&mut d_trunk, &cache.trunk[k]);
            let input = if k == 0 { &cache.x_enc } else { &cache.trunk[k - 1] };
            if k == 0 {
                dense_backward(p, &l.trunk[0], input, &d_trunk, n, grads, None);
            } else {
                let mut d_prev = vec![T::zero(); n * l.trunk[k].fan_in];
                dense_backward(p, &l.trunk[k], input, &d_trunk, n, grads, Some(&mut d_prev));
                d_trunk = d_prev;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> FieldParams<U> {
        FieldParams { arch: self.arch, params: self.params.iter().map(|v| U::of(v.as_f64())).collect(), layout: self.layout.clone() }
    }
}

/// Evaluates the field at a single encoded point, returning `(rgb, sigma)`.
pub fn field_eval<T: Scalar>(params: &FieldParams<T>, x_enc: &[T], d_enc: &[T]) -> Result<([T; 3], T)> {
    let (out, _) = params.forward(x_enc, d_enc, 1)?;
    Ok(([out.rgb[0], out.rgb[1], out.rgb[2]], out.sigma[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> FieldArch {
        FieldArch { pos_dim: 9, dir_dim: 5, depth: 3, width: 12, head_width: 6 }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FieldParams::<f64>::init(arch(), &mut rng).unwrap();
        assert!(field_eval(&f, &[0.0; 8], &[0.0; 5]).is_err());
        assert!(field_eval(&f, &[0.0; 9], &[0.0; 4]).is_err());
    }

    #[test]
    fn from_flat_checks_length() {
        assert!(FieldParams::<f32>::from_flat(arch(), vec![0.0; 3]).is_err());
    }
}
