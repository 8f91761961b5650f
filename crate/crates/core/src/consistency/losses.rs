//! Masked feature consistency, masked pixel loss and edge-aware disparity smoothness.
//!
//! Each loss returns its value together with the gradient with respect to the
//! rendered (or depth) input. The warped image is always a constant.

use super::features::FeatureExtractor;
use crate::geometry::{downsample_mask, OcclusionMask};
use crate::image::{DepthMap, Image};
use crate::{Error, Result, Scalar};
use serde::Serialize;

/// One pyramid level's share of the consistency loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LayerTerm {
    pub value: f64,
    /// `m_l / (H_l W_l)`.
    pub fill_ratio: f64,
}

/// Loss values for one training step. Consistency terms are `None` on steps (or in
/// modes) where they are not evaluated.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub obs_loss: f64,
    pub cons_loss: Option<f64>,
    pub pix_loss: Option<f64>,
    pub reg_loss: f64,
    pub layers: Vec<LayerTerm>,
    /// Fraction of the consistency patch kept by the mask.
    pub mask_fill: Option<f64>,
    /// Weighted sum actually minimized.
    pub total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl LossReport {
    pub fn is_valid(&self) -> bool {
        [self.obs_loss, self.reg_loss, self.total]
            .into_iter()
            .chain(self.cons_loss)
            .chain(self.pix_loss)
            .chain(self.layers.iter().map(|l| l.value))
            .all(|v| v.is_finite() && v >= 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct ConsistencyLoss<T> {
    pub value: T,
    pub layers: Vec<LayerTerm>,
}

#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn check_inputs<T: Scalar>(warped: &Image<T>, rendered: &Image<T>, mask: &OcclusionMask<T>) -> Result<()> {
    warped.ensure_same_shape(rendered, "rendered patch")?;
    if mask.width != warped.width || mask.height != warped.height {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} mask for a {}x{} patch",
            mask.width, mask.height, warped.width, warped.height
        )));
    }
    Ok(())
}

/// `sum_l 1/(C_l m_l) * || M_l . (F_l(warped) - F_l(rendered)) ||_1`, where `M_l` is the
/// mask resized to level `l` and `m_l` its count. Levels with `m_l = 0` contribute 0.
pub fn masked_consistency_loss<T: Scalar>(
    extractor: &FeatureExtractor<T>,
    warped: &Image<T>,
    rendered: &Image<T>,
    mask: &OcclusionMask<T>,
) -> Result<ConsistencyLoss<T>> {
    check_inputs(warped, rendered, mask)?;
    let fw = extractor.extract(warped)?;
    let fr = extractor.extract(rendered)?;
    let (loss, _) = feature_terms(&fw.layers, &fr.layers, mask, false)?;
    Ok(loss)
}

/// [`masked_consistency_loss`] plus its gradient with respect to `rendered`.
pub fn masked_consistency_loss_grad<T: Scalar>(
    extractor: &FeatureExtractor<T>,
    warped: &Image<T>,
    rendered: &Image<T>,
    mask: &OcclusionMask<T>,
) -> Result<(ConsistencyLoss<T>, Image<T>)> {
    check_inputs(warped, rendered, mask)?;
    // the warped branch never records a cache: no gradient can reach it
    let fw = extractor.extract(warped)?;
    let (fr, cache) = extractor.extract_with_cache(rendered)?;
    let (loss, d_layers) = feature_terms(&fw.layers, &fr.layers, mask, true)?;
    let d = extractor.backward(&cache, &d_layers)?;
    Ok((loss, d))
}

fn feature_terms<T: Scalar>(
    fw: &[Image<T>],
    fr: &[Image<T>],
    mask: &OcclusionMask<T>,
    want_grad: bool,
) -> Result<(ConsistencyLoss<T>, Vec<Image<T>>)> {
    let mut total = T::zero();
    let mut layers = Vec::with_capacity(fw.len());
    let mut grads = Vec::new();
    for (a, b) in fw.iter().zip(fr) {
        let m = downsample_mask(mask, [a.width, a.height])?;
        let count = m.count();
        let mut g = if want_grad { Image::new(b.width, b.height, b.channels) } else { Image::new(0, 0, 0) };
        let mut term = T::zero();
        if count > 0 {
            let norm = T::one() / (T::of_usize(a.channels) * T::of_usize(count));
            for (p, _) in m.values.iter().enumerate().filter(|(_, &v)| v) {
                let base = p * a.channels;
                for c in 0..a.channels {
                    let diff = a.data[base + c] - b.data[base + c];
                    term += diff.abs();
                    if want_grad {
                        g.data[base + c] = -sign(diff) * norm;
                    }
                }
            }
            term *= norm;
        }
        total += term;
        layers.push(LayerTerm { value: term.as_f64(), fill_ratio: m.fill_ratio() });
        if want_grad {
            grads.push(g);
        }
    }
    Ok((ConsistencyLoss { value: total, layers }, grads))
}

/// Mean absolute color difference over unmasked pixels and all channels, with its
/// gradient with respect to `rendered`. An empty mask gives 0.
pub fn pixel_loss<T: Scalar>(warped: &Image<T>, rendered: &Image<T>, mask: &OcclusionMask<T>) -> Result<(T, Image<T>)> {
    check_inputs(warped, rendered, mask)?;
    let ch = warped.channels;
    let mut g = Image::new(rendered.width, rendered.height, ch);
    let count = mask.count();
    if count == 0 {
        return Ok((T::zero(), g));
    }
    let norm = T::one() / T::of_usize(count * ch);
    let mut sum = T::zero();
    for (p, _) in mask.values.iter().enumerate().filter(|(_, &v)| v) {
        for c in p * ch..(p + 1) * ch {
            let diff = rendered.data[c] - warped.data[c];
            sum += diff.abs();
            g.data[c] = sign(diff) * norm;
        }
    }
    Ok((sum * norm, g))
}

/// Edge-aware smoothness of mean-normalized disparity, with its gradient with respect
/// to depth.
///
/// `d = 1/depth`, `d* = d / mean(d)`; the loss is
/// `mean(|dx d*| exp(-|dx I|)) + mean(|dy d*| exp(-|dy I|))` using forward differences
/// and channel-averaged image gradients.
pub fn disparity_smoothness<T: Scalar>(depth: &DepthMap<T>, image: &Image<T>) -> Result<(T, DepthMap<T>)> {
    if depth.width != image.width || depth.height != image.height || depth.channels != 1 {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} depth for a {}x{} image",
            depth.width, depth.height, depth.channels, image.width, image.height
        )));
    }
    if let Some((index, &v)) = depth.data.iter().enumerate().find(|(_, &v)| !(v > T::zero() && v.is_finite())) {
        return Err(Error::InvalidDepth { index, value: v.as_f64() });
    }
    let (w, h) = (depth.width, depth.height);
    let n = w * h;
    let disp: Vec<T> = depth.data.iter().map(|&z| T::one() / z).collect();
    let mean = disp.iter().copied().sum::<T>() / T::of_usize(n);
    let dn: Vec<T> = disp.iter().map(|&d| d / mean).collect();
    let edge = |a: (usize, usize), b: (usize, usize)| -> T {
        let ch = image.channels;
        let s: T = (0..ch).map(|c| (image.at(b.0, b.1, c) - image.at(a.0, a.1, c)).abs()).sum();
        (-(s / T::of_usize(ch))).exp()
    };
    let mut loss = T::zero();
    let mut g_dn = vec![T::zero(); n];
    let mut add = |pairs: usize, a: usize, b: usize, wgt: T, loss: &mut T| {
        let inv = T::one() / T::of_usize(pairs);
        let diff = dn[b] - dn[a];
        *loss += diff.abs() * wgt * inv;
        let g = sign(diff) * wgt * inv;
        g_dn[b] += g;
        g_dn[a] -= g;
    };
    if w > 1 {
        let pairs = (w - 1) * h;
        for y in 0..h {
            for x in 0..w - 1 {
                add(pairs, y * w + x, y * w + x + 1, edge((x, y), (x + 1, y)), &mut loss);
            }
        }
    }
    if h > 1 {
        let pairs = w * (h - 1);
        for y in 0..h - 1 {
            for x in 0..w {
                add(pairs, y * w + x, (y + 1) * w + x, edge((x, y), (x, y + 1)), &mut loss);
            }
        }
    }
    // through d* = d / mean(d), then d = 1/z
    let proj: T = g_dn.iter().zip(&dn).map(|(&g, &d)| g * d).sum::<T>() / T::of_usize(n);
    let mut grad = Image::new(w, h, 1);
    for p in 0..n {
        let g_d = (g_dn[p] - proj) / mean;
        grad.data[p] = -g_d * disp[p] * disp[p];
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, seed: f64) -> Image<f64> {
        Image::from_fn(w, h, 3, |x, y, c| 0.5 + 0.45 * ((x as f64 * 1.3 + y as f64 * 0.7 + c as f64 * 2.1 + seed).sin()))
    }

    #[test]
    fn pixel_loss_examples() {
        let a = img(6, 4, 0.0);
        let full = OcclusionMask::filled(6, 4, true);
        assert_eq!(pixel_loss(&a, &a, &full).unwrap().0, 0.0);
        let b = a.map(|v| v + 0.5);
        assert!((pixel_loss(&a, &b, &full).unwrap().0 - 0.5).abs() < 1e-12);
        let half = OcclusionMask::from_values(6, 4, (0..24).map(|i| i % 2 == 0).collect()).unwrap();
        assert!((pixel_loss(&a, &b, &half).unwrap().0 - 0.5).abs() < 1e-12);
        assert!(pixel_loss(&a, &img(5, 4, 0.0), &full).is_err());
    }

    #[test]
    fn smoothness_constant_and_scale_invariance() {
        let im = img(8, 8, 1.0);
        let flat = Image::filled(8, 8, 1, 2.5);
        assert_eq!(disparity_smoothness(&flat, &im).unwrap().0, 0.0);
        let d = Image::from_fn(8, 8, 1, |x, y, _| 1.0 + 0.1 * (x * y) as f64);
        let a = disparity_smoothness(&d, &im).unwrap().0;
        let b = disparity_smoothness(&d.map(|v| 7.0 * v), &im).unwrap().0;
        assert!((a - b).abs() < 1e-12);
        let bad = d.map(|v| v - 1.0);
        assert!(matches!(disparity_smoothness(&bad, &im), Err(Error::InvalidDepth { .. })));
    }

    #[test]
    fn consistency_is_zero_at_equality_and_under_empty_mask() {
        let e = FeatureExtractor::<f64>::new("random-small", None).unwrap();
        let a = img(16, 16, 0.0);
        let b = img(16, 16, 0.4);
        let full = OcclusionMask::filled(16, 16, true);
        assert_eq!(masked_consistency_loss(&e, &a, &a, &full).unwrap().value, 0.0);
        let none = OcclusionMask::filled(16, 16, false);
        let (l, g) = masked_consistency_loss_grad(&e, &a, &b, &none).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
        assert!(masked_consistency_loss(&e, &a, &b, &full).unwrap().value > 0.0);
    }
}
