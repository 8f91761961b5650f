//! Adam with value-then-norm gradient clipping.

use crate::Scalar;
use serde::{Deserialize, Serialize};

/// Clamps every entry to `[-clip_value, clip_value]`, then rescales the whole set so
/// its global L2 norm is at most `clip_norm`. Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut [&mut [T]], clip_value: f64, clip_norm: f64) -> f64 {
    let pre = global_norm(grads);
    let cv = T::of(clip_value);
    for g in grads.iter_mut() {
        for x in g.iter_mut() {
            *x = x.max(-cv).min(cv);
        }
    }
    let norm = global_norm(grads);
    if norm > clip_norm {
        let s = T::of(clip_norm / norm);
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    pre
}

pub fn global_norm<T: Scalar>(grads: &[&mut [T]]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub params: AdamParams,
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Number of updates applied.
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, params: AdamParams) -> Self {
        Self { params, m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    /// One bias-corrected update. `params` and `grads` are parallel slice lists whose
    /// concatenation matches the moment vectors.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) {
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let step = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(eps);
        let mut off = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            debug_assert_eq!(p.len(), g.len());
            let m = &mut self.m[off..off + p.len()];
            let v = &mut self.v[off..off + p.len()];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                p[i] -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
            off += p.len();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_clip_happens_before_norm_clip() {
        let mut a = vec![5.0f64, -5.0];
        let mut b = vec![0.01f64];
        let pre = clip_gradients(&mut [&mut a, &mut b], 0.1, 0.1);
        assert!((pre - (50.0f64 + 1e-4).sqrt()).abs() < 1e-12);
        // after value clip: (0.1, -0.1, 0.01), norm sqrt(0.0201), rescaled to 0.1
        let s = 0.1 / 0.0201f64.sqrt();
        assert!((a[0] - 0.1 * s).abs() < 1e-15);
        assert!((b[0] - 0.01 * s).abs() < 1e-15);
        assert!(global_norm(&[&mut a, &mut b]) <= 0.1 + 1e-12);
    }

    #[test]
    fn small_gradients_untouched() {
        let mut a = vec![0.01f32, 0.02];
        clip_gradients(&mut [&mut a], 0.1, 0.1);
        assert_eq!(a, vec![0.01, 0.02]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::<f64>::new(2, AdamParams { beta1: 0.9, beta2: 0.999, eps: 0.0 });
        let mut p = vec![1.0, 1.0];
        adam.update(&mut [&mut p], &[&[0.3, -2.0]], 0.01);
        assert!((p[0] - 0.99).abs() < 1e-12 && (p[1] - 1.01).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::<f64>::new(1, AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 });
        let mut x = vec![3.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 1.0)];
            adam.update(&mut [&mut x], &[&g], 0.01);
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }
}
