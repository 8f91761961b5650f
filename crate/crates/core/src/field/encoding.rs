//! Fourier positional encoding with coarse-to-fine frequency annealing.

use crate::linalg::Vec3;
use crate::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    /// Frequency bands for positions.
    pub num_freqs_pos: usize,
    /// Frequency bands for view directions.
    pub num_freqs_dir: usize,
    /// Steps until every band reaches full weight.
    pub anneal_steps: usize,
    /// Prepend the raw input to the Fourier features.
    pub include_identity: bool,
    /// Apply the annealing window to the position encoding.
    pub anneal_positions: bool,
    /// Apply the annealing window to the direction encoding.
    pub anneal_directions: bool,
}

impl Default for EncodingSpec {
    fn default() -> Self {
        Self {
            num_freqs_pos: 10,
            num_freqs_dir: 4,
            anneal_steps: 15_000,
            include_identity: true,
            anneal_positions: true,
            anneal_directions: false,
        }
    }
}

impl EncodingSpec {
    pub fn pos_dim(&self) -> usize {
        encoded_dim(self.num_freqs_pos, self.include_identity)
    }

    pub fn dir_dim(&self) -> usize {
        encoded_dim(self.num_freqs_dir, self.include_identity)
    }

    pub fn position_weights<T: Scalar>(&self, step: usize) -> Vec<T> {
        if self.anneal_positions {
            band_weights(self.num_freqs_pos, self.anneal_steps, step)
        } else {
            vec![T::one(); self.num_freqs_pos]
        }
    }

    pub fn direction_weights<T: Scalar>(&self, step: usize) -> Vec<T> {
        if self.anneal_directions {
            band_weights(self.num_freqs_dir, self.anneal_steps, step)
        } else {
            vec![T::one(); self.num_freqs_dir]
        }
    }
}

pub fn encoded_dim(num_freqs: usize, include_identity: bool) -> usize {
    3 * usize::from(include_identity) + 6 * num_freqs
}

/// `alpha(t) = m * min(t, K) / K`.
pub fn anneal_alpha<T: Scalar>(num_freqs: usize, anneal_steps: usize, step: usize) -> T {
    let k = anneal_steps.max(1);
    T::of_usize(num_freqs) * T::of_usize(step.min(k)) / T::of_usize(k)
}

/// Per-band weights `(1 - cos(pi * clamp(alpha - k, 0, 1))) / 2`.
pub fn band_weights<T: Scalar>(num_freqs: usize, anneal_steps: usize, step: usize) -> Vec<T> {
    let alpha: T = anneal_alpha(num_freqs, anneal_steps, step);
    (0..num_freqs)
        .map(|k| {
            let x = (alpha - T::of_usize(k)).max(T::zero()).min(T::one());
            (T::one() - (T::PI() * x).cos()) * T::of(0.5)
        })
        .collect()
}

/// Encodes one 3-vector into `out` (length `encoded_dim`).
#[inline]
pub fn encode_into<T: Scalar>(x: [T; 3], weights: &[T], include_identity: bool, out: &mut [T]) {
    let mut o = 0;
    if include_identity {
        out[..3].copy_from_slice(&x);
        o = 3;
    }
    let mut freq = T::PI();
    for &w in weights {
        for c in 0..3 {
            let (s, co) = (freq * x[c]).sin_cos();
            out[o + c] = w * s;
            out[o + 3 + c] = w * co;
        }
        o += 6;
        freq = freq + freq;
    }
}

/// Which input an encoding call refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    Position,
    Direction,
}

/// Encodes a single position or (unit) direction at training step `step`.
pub fn encode<T: Scalar>(x: [T; 3], spec: &EncodingSpec, step: usize, input: Input) -> Vec<T> {
    let (weights, dim) = match input {
        Input::Position => (spec.position_weights(step), spec.pos_dim()),
        Input::Direction => (spec.direction_weights(step), spec.dir_dim()),
    };
    let mut out = vec![T::zero(); dim];
    encode_into(x, &weights, spec.include_identity, &mut out);
    out
}

/// Row-major `N x dim` encoding of a batch of points.
pub fn encode_batch<T: Scalar>(points: &[Vec3<T>], weights: &[T], include_identity: bool) -> Vec<T> {
    let dim = encoded_dim(weights.len(), include_identity);
    let mut out = vec![T::zero(); points.len() * dim];
    for (p, row) in points.iter().zip(out.chunks_exact_mut(dim)) {
        encode_into(p.to_array(), weights, include_identity, row);
    }
    out
}
