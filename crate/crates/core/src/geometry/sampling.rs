//! Differentiable bilinear sampling on images with pixel-center coordinates.

use crate::image::Image;
use crate::Scalar;

/// Result of sampling an image at a set of continuous coordinates.
#[derive(Clone, Debug)]
pub struct Samples<T> {
    pub channels: usize,
    /// `N x C` interpolated values (border-clamped outside the image).
    pub values: Vec<T>,
    /// Whether each coordinate had all four neighbors inside the image.
    pub in_bounds: Vec<bool>,
}

/// Neighbor indices and weights for one coordinate.
#[derive(Clone, Copy, Debug)]
struct Stencil<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    ax: T,
    ay: T,
    /// Coordinate was clamped along x / y (gradient vanishes there).
    cx: bool,
    cy: bool,
    inside: bool,
}

/// Distance in pixels past the outermost centers still reported as in bounds.
pub const BORDER_TOLERANCE: f64 = 1e-4;

#[inline]
fn axis<T: Scalar>(c: T, n: usize) -> (usize, usize, T, bool, bool) {
    let hi = T::of_usize(n - 1);
    let p = c - T::of(0.5);
    let finite = p.is_finite();
    let strict = finite && p >= T::zero() && p <= hi;
    // reprojected border pixel centers land a rounding error outside the grid
    let tol = T::of(BORDER_TOLERANCE);
    let inside = finite && p >= -tol && p <= hi + tol;
    let clamped = if !finite { T::zero() } else { p.max(T::zero()).min(hi) };
    let i0 = clamped.floor().to_usize().unwrap_or(0).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    let a = clamped - T::of_usize(i0);
    (i0, i1, a, !strict, inside)
}

#[inline]
fn stencil<T: Scalar>(w: usize, h: usize, uv: [T; 2]) -> Stencil<T> {
    let (x0, x1, ax, cx, inx) = axis(uv[0], w);
    let (y0, y1, ay, cy, iny) = axis(uv[1], h);
    Stencil { x0, x1, y0, y1, ax, ay, cx, cy, inside: inx && iny }
}

/// Interpolates `image` at `uv` into `out` and reports whether the point was in bounds.
#[inline]
pub fn sample_point<T: Scalar>(image: &Image<T>, uv: [T; 2], out: &mut [T]) -> bool {
    let s = stencil(image.width, image.height, uv);
    let one = T::one();
    let w00 = (one - s.ax) * (one - s.ay);
    let w10 = s.ax * (one - s.ay);
    let w01 = (one - s.ax) * s.ay;
    let w11 = s.ax * s.ay;
    let p00 = image.pixel(s.x0, s.y0);
    let p10 = image.pixel(s.x1, s.y0);
    let p01 = image.pixel(s.x0, s.y1);
    let p11 = image.pixel(s.x1, s.y1);
    for c in 0..image.channels {
        out[c] = w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
    }
    s.inside
}

/// Bilinear interpolation of the four pixel centers around each coordinate.
///
/// Coordinates outside `[0.5, W-0.5] x [0.5, H-0.5]` return the border-clamped value
/// and a cleared in-bounds flag.
pub fn bilinear_sample<T: Scalar>(image: &Image<T>, coords: &[[T; 2]]) -> Samples<T> {
    let c = image.channels;
    let mut values = vec![T::zero(); coords.len() * c];
    let mut in_bounds = Vec::with_capacity(coords.len());
    for (uv, out) in coords.iter().zip(values.chunks_exact_mut(c)) {
        in_bounds.push(sample_point(image, *uv, out));
    }
    Samples { channels: c, values, in_bounds }
}

/// Vector-Jacobian product of [`bilinear_sample`]: returns `(d_image, d_coords)`.
///
/// The coordinate gradient is zero along an axis where the coordinate was clamped.
pub fn bilinear_sample_backward<T: Scalar>(
    image: &Image<T>,
    coords: &[[T; 2]],
    d_values: &[T],
) -> (Image<T>, Vec<[T; 2]>) {
    let ch = image.channels;
    assert_eq!(d_values.len(), coords.len() * ch, "bilinear backward: gradient shape");
    let mut d_image = Image::new(image.width, image.height, ch);
    let mut d_coords = vec![[T::zero(); 2]; coords.len()];
    let one = T::one();
    for (n, uv) in coords.iter().enumerate() {
        let s = stencil(image.width, image.height, *uv);
        let g = &d_values[n * ch..(n + 1) * ch];
        let w = [
            (one - s.ax) * (one - s.ay),
            s.ax * (one - s.ay),
            (one - s.ax) * s.ay,
            s.ax * s.ay,
        ];
        let taps = [(s.x0, s.y0), (s.x1, s.y0), (s.x0, s.y1), (s.x1, s.y1)];
        for (k, &(x, y)) in taps.iter().enumerate() {
            let dst = d_image.pixel_mut(x, y);
            for c in 0..ch {
                dst[c] += w[k] * g[c];
            }
        }
        let (p00, p10, p01, p11) = (
            image.pixel(s.x0, s.y0),
            image.pixel(s.x1, s.y0),
            image.pixel(s.x0, s.y1),
            image.pixel(s.x1, s.y1),
        );
        let mut du = T::zero();
        let mut dv = T::zero();
        for c in 0..ch {
            du += g[c] * ((one - s.ay) * (p10[c] - p00[c]) + s.ay * (p11[c] - p01[c]));
            dv += g[c] * ((one - s.ax) * (p01[c] - p00[c]) + s.ax * (p11[c] - p10[c]));
        }
        d_coords[n] = [if s.cx { T::zero() } else { du }, if s.cy { T::zero() } else { dv }];
    }
    (d_image, d_coords)
}

/// Low-resolution continuous position of full-resolution pixel `a` for a strided grid.
#[inline]
fn strided_position<T: Scalar>(a: usize, stride: usize, n: usize) -> (usize, usize, T) {
    let p = T::of_usize(a) / T::of_usize(stride);
    let hi = T::of_usize(n - 1);
    let p = p.min(hi);
    let i0 = p.floor().to_usize().unwrap_or(0).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, p - T::of_usize(i0))
}

/// Bilinear upsampling of a strided grid to full resolution.
///
/// Full-resolution pixel `a` reads grid position `a / stride`, so grid nodes are
/// reproduced exactly and positions past the last node are clamped to it.
pub fn upsample_strided<T: Scalar>(grid: &Image<T>, stride: usize) -> Image<T> {
    let (w, h, ch) = (grid.width, grid.height, grid.channels);
    let mut out = Image::new(w * stride, h * stride, ch);
    let one = T::one();
    for y in 0..h * stride {
        let (y0, y1, ay) = strided_position::<T>(y, stride, h);
        for x in 0..w * stride {
            let (x0, x1, ax) = strided_position::<T>(x, stride, w);
            let dst = out.idx(x, y);
            for c in 0..ch {
                out.data[dst + c] = (one - ax) * (one - ay) * grid.at(x0, y0, c)
                    + ax * (one - ay) * grid.at(x1, y0, c)
                    + (one - ax) * ay * grid.at(x0, y1, c)
                    + ax * ay * grid.at(x1, y1, c);
            }
        }
    }
    out
}

/// Adjoint of [`upsample_strided`] (maps a full-resolution gradient back to the grid).
pub fn upsample_strided_backward<T: Scalar>(d_full: &Image<T>, stride: usize) -> Image<T> {
    let (w, h, ch) = (d_full.width / stride, d_full.height / stride, d_full.channels);
    let mut d = Image::new(w, h, ch);
    let one = T::one();
    for y in 0..h * stride {
        let (y0, y1, ay) = strided_position::<T>(y, stride, h);
        for x in 0..w * stride {
            let (x0, x1, ax) = strided_position::<T>(x, stride, w);
            let src = d_full.idx(x, y);
            for c in 0..ch {
                let g = d_full.data[src + c];
                let i00 = d.idx(x0, y0) + c;
                d.data[i00] += (one - ax) * (one - ay) * g;
                let i10 = d.idx(x1, y0) + c;
                d.data[i10] += ax * (one - ay) * g;
                let i01 = d.idx(x0, y1) + c;
                d.data[i01] += (one - ax) * ay * g;
                let i11 = d.idx(x1, y1) + c;
                d.data[i11] += ax * ay * g;
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Image<f64> {
        Image::from_fn(4, 3, 2, |x, y, c| (x * 10 + y * 100 + c) as f64)
    }

    #[test]
    fn pixel_center_identity_and_midpoint_mean() {
        let img = ramp();
        let s = bilinear_sample(&img, &[[2.5, 1.5], [2.0, 1.0]]);
        assert_eq!(&s.values[0..2], img.pixel(2, 1));
        let mean: Vec<f64> = (0..2)
            .map(|c| (img.at(1, 0, c) + img.at(2, 0, c) + img.at(1, 1, c) + img.at(2, 1, c)) / 4.0)
            .collect();
        assert_eq!(&s.values[2..4], &mean[..]);
        assert!(s.in_bounds.iter().all(|&b| b));
    }

    #[test]
    fn out_of_bounds_is_clamped_and_flagged() {
        let img = ramp();
        let s = bilinear_sample(&img, &[[-3.0, 1.5], [0.25, 0.5], [f64::NAN, 1.0]]);
        assert_eq!(&s.values[0..2], img.pixel(0, 1));
        assert_eq!(s.in_bounds, vec![false, false, false]);
    }

    #[test]
    fn upsample_reproduces_nodes_and_stride_one() {
        let g = Image::<f64>::from_fn(3, 2, 1, |x, y, _| (x * x + 3 * y) as f64);
        assert_eq!(upsample_strided(&g, 1), g);
        let up = upsample_strided(&g, 2);
        assert_eq!((up.width, up.height), (6, 4));
        for y in 0..2 {
            for x in 0..3 {
                assert_eq!(up.at(2 * x, 2 * y, 0), g.at(x, y, 0));
            }
        }
        assert_eq!(up.at(1, 0, 0), 0.5);
    }

    #[test]
    fn upsample_adjoint_identity() {
        // <U g, f> == <g, U^T f>
        let g = Image::<f64>::from_fn(3, 4, 2, |x, y, c| ((x + 2 * y + c) as f64).sin());
        let f = Image::<f64>::from_fn(6, 8, 2, |x, y, c| ((3 * x + y + 5 * c) as f64).cos());
        let lhs: f64 = upsample_strided(&g, 2).data.iter().zip(&f.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.data.iter().zip(&upsample_strided_backward(&f, 2).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
