use crate::geometry::RayBatch;
use crate::{Error, Result, Scalar};
use rand::Rng;

/// Per-ray sorted sample distances and quadrature intervals.
///
/// `deltas[j] = t[j+1] - t[j]`, and the last interval runs to `far`.
#[derive(Clone, Debug)]
pub struct SampleSet<T> {
    pub n_rays: usize,
    pub n_samples: usize,
    /// `n_rays x n_samples`.
    pub t: Vec<T>,
    pub deltas: Vec<T>,
    pub near: T,
    pub far: T,
    pub jittered: bool,
}

impl<T: Scalar> SampleSet<T> {
    pub fn from_t(n_rays: usize, n_samples: usize, t: Vec<T>, near: T, far: T, jittered: bool) -> Result<Self> {
        if t.len() != n_rays * n_samples {
            return Err(Error::ShapeMismatch(format!("{} sample distances for {n_rays}x{n_samples}", t.len())));
        }
        let mut deltas = vec![T::zero(); t.len()];
        if n_samples > 0 {
            for (row, d) in t.chunks_exact(n_samples).zip(deltas.chunks_exact_mut(n_samples)) {
                for j in 0..n_samples - 1 {
                    d[j] = row[j + 1] - row[j];
                }
                d[n_samples - 1] = far - row[n_samples - 1];
            }
        }
        Ok(Self { n_rays, n_samples, t, deltas, near, far, jittered })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.t[r * self.n_samples..(r + 1) * self.n_samples]
    }
}

/// `n` stratified samples per ray: bin centers, or a uniform draw inside each bin when jittered.
pub fn stratified_samples<T: Scalar, R: Rng + ?Sized>(
    rays: &RayBatch<T>,
    n: usize,
    jitter: bool,
    rng: &mut R,
) -> Result<SampleSet<T>> {
    stratified(rays.len(), rays.near, rays.far, n, jitter, rng)
}

pub(crate) fn stratified<T: Scalar, R: Rng + ?Sized>(
    n_rays: usize,
    near: T,
    far: T,
    n: usize,
    jitter: bool,
    rng: &mut R,
) -> Result<SampleSet<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples per ray, got {n}")));
    }
    let mut t = Vec::with_capacity(n_rays * n);
    for _ in 0..n_rays {
        t.extend(stratified_row(near, far, n, jitter, rng));
    }
    SampleSet::from_t(n_rays, n, t, near, far, jitter)
}

fn stratified_row<T: Scalar, R: Rng + ?Sized>(near: T, far: T, n: usize, jitter: bool, rng: &mut R) -> Vec<T> {
    let bin = (far - near) / T::of_usize(n);
    (0..n)
        .map(|k| {
            let off = if jitter { T::of(rng.gen::<f64>()) } else { T::of(0.5) };
            near + bin * (T::of_usize(k) + off)
        })
        .collect()
}

/// Inverse-CDF sampling of `n_fine` extra distances per ray proportional to `weights`,
/// merged and sorted with the input samples.
///
/// Bin edges are `near`, the midpoints between consecutive samples, and `far`. Rays
/// whose weights sum to zero fall back to stratified samples.
pub fn hierarchical_resample<T: Scalar, R: Rng + ?Sized>(
    weights: &[T],
    samples: &SampleSet<T>,
    n_fine: usize,
    rng: &mut R,
) -> Result<SampleSet<T>> {
    let n = samples.n_samples;
    if weights.len() != samples.n_rays * n {
        return Err(Error::ShapeMismatch(format!("{} weights for {}x{n} samples", weights.len(), samples.n_rays)));
    }
    let total = n + n_fine;
    let mut t = Vec::with_capacity(samples.n_rays * total);
    let eps = T::of(1e-5);
    let mut edges = vec![T::zero(); n + 1];
    let mut cdf = vec![T::zero(); n + 1];
    for r in 0..samples.n_rays {
        let row = samples.row(r);
        let w = &weights[r * n..(r + 1) * n];
        let sum: T = w.iter().map(|&x| x.max(T::zero())).sum();
        let mut merged: Vec<T> = row.to_vec();
        if !(sum > T::zero()) || n_fine == 0 {
            if n_fine >= 1 {
                merged.extend(stratified_row(samples.near, samples.far, n_fine, true, rng));
            }
        } else {
            edges[0] = samples.near;
            for k in 1..n {
                edges[k] = (row[k - 1] + row[k]) * T::of(0.5);
            }
            edges[n] = samples.far;
            let norm = sum + eps * T::of_usize(n);
            cdf[0] = T::zero();
            for k in 0..n {
                cdf[k + 1] = cdf[k] + (w[k].max(T::zero()) + eps) / norm;
            }
            cdf[n] = T::one();
            for i in 0..n_fine {
                let u = (T::of_usize(i) + T::of(rng.gen::<f64>())) / T::of_usize(n_fine);
                // last k with cdf[k] <= u
                let k = cdf[1..n].partition_point(|&c| c <= u);
                let span = cdf[k + 1] - cdf[k];
                let frac = if span > T::zero() { ((u - cdf[k]) / span).min(T::one()) } else { T::zero() };
                merged.push(edges[k] + frac * (edges[k + 1] - edges[k]));
            }
        }
        merged.sort_by(|a, b| a.partial_cmp(b).expect("finite sample distances"));
        t.extend(merged);
    }
    SampleSet::from_t(samples.n_rays, total, t, samples.near, samples.far, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bin_centers_without_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = stratified::<f64, _>(1, 0.0, 1.0, 4, false, &mut rng).unwrap();
        assert_eq!(s.t, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(s.deltas, vec![0.25, 0.25, 0.25, 0.125]);
    }

    #[test]
    fn too_few_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(stratified::<f32, _>(3, 0.0, 1.0, 1, true, &mut rng).is_err());
    }

    #[test]
    fn zero_weights_fall_back_to_stratified() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = stratified::<f64, _>(2, 1.0, 3.0, 8, false, &mut rng).unwrap();
        let f = hierarchical_resample(&vec![0.0; 16], &s, 8, &mut rng).unwrap();
        assert_eq!(f.n_samples, 16);
        for r in 0..2 {
            let row = f.row(r);
            assert!(row.windows(2).all(|w| w[0] <= w[1]));
            // one fine sample in each of the 8 bins
            for k in 0..8 {
                let lo = 1.0 + 0.25 * k as f64;
                assert_eq!(row.iter().filter(|&&t| t >= lo && t < lo + 0.25).count(), 2);
            }
        }
    }
}
