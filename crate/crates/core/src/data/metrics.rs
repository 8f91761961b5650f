//! Image-quality metrics.

use crate::image::Image;
use crate::{Result, Scalar};
use serde::{Deserialize, Serialize};

/// One evaluation row. `psnr` is `+inf` for identical images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scene: String,
    /// Test-view index, or `None` for the mean row.
    pub view: Option<usize>,
    pub n_views: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub avg_err: f64,
    pub config_hash: String,
}

pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.ensure_same_shape(b, "metric input")?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / n)
}

/// `-10 log10(mse)`; `+inf` when the images are identical.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a single-channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5), constants
/// `(0.01)^2` and `(0.03)^2` for a unit dynamic range, valid-region averaging. The
/// window shrinks to the largest odd size that fits smaller images.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.ensure_same_shape(b, "metric input")?;
    let (w, h) = (a.width, a.height);
    let mut size = 11.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size.max(1), 1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for c in 0..a.channels {
        let pa: Vec<f64> = (0..w * h).map(|p| a.data[p * a.channels + c].as_f64()).collect();
        let pb: Vec<f64> = (0..w * h).map(|p| b.data[p * b.channels + c].as_f64()).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let (mu_a, ow, oh) = filter_valid(&pa, w, h, &k);
        let (mu_b, ..) = filter_valid(&pb, w, h, &k);
        let (aa, ..) = filter_valid(&prod(&pa, &pa), w, h, &k);
        let (bb, ..) = filter_valid(&prod(&pb, &pb), w, h, &k);
        let (ab, ..) = filter_valid(&prod(&pa, &pb), w, h, &k);
        let mut s = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = (aa[i] - ma * ma).max(0.0);
            let vb = (bb[i] - mb * mb).max(0.0);
            let cov = ab[i] - ma * mb;
            s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += s / (ow * oh) as f64;
    }
    Ok(total / a.channels as f64)
}

/// Geometric mean of `10^(-psnr/10)`, `sqrt(1 - ssim)` and `lpips` when given.
///
/// An infinite PSNR makes its term 0, and so the mean 0.
pub fn avg_err(psnr: f64, ssim: f64, lpips: Option<f64>) -> f64 {
    let mut terms = vec![10f64.powf(-psnr / 10.0), (1.0 - ssim).max(0.0).sqrt()];
    terms.extend(lpips);
    let n = terms.len() as f64;
    terms.iter().map(|t| t.powf(1.0 / n)).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: f64) -> Image<f64> {
        Image::from_fn(24, 20, 3, |x, y, c| 0.4 + 0.3 * ((x as f64 * 0.4 + y as f64 * 0.9 + c as f64 + seed).sin()))
    }

    #[test]
    fn identical_images() {
        let a = img(0.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(avg_err(f64::INFINITY, 1.0, None), 0.0);
    }

    #[test]
    fn constant_offset_psnr() {
        let a = img(0.0);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric() {
        let (a, b) = (img(0.0), img(0.5));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn published_triple() {
        let expect = (10f64.powf(-1.923) * 0.134f64.sqrt() * 0.201).cbrt();
        assert!((avg_err(19.23, 0.866, Some(0.201)) - expect).abs() < 1e-12);
        assert!((avg_err(19.23, 0.866, Some(0.201)) - 0.096).abs() < 0.002);
    }
}
