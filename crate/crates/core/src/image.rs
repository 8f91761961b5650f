//! Dense interleaved images (`height x width x channels`, row-major).

use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

/// Single-channel image holding per-pixel depth along the camera axis.
pub type DepthMap<T> = Image<T>;

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: T) -> Self {
        Self { width, height, channels, data: vec![v; width * height * channels] }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    #[inline]
    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.idx(x, y) + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = self.idx(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = self.idx(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn same_shape(&self, o: &Self) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }

    pub fn ensure_same_shape(&self, o: &Self, what: &str) -> Result<()> {
        if self.same_shape(o) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, o.width, o.height, o.channels
            )))
        }
    }

    /// Copy of the `w x h` window whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::OutOfBounds(format!(
                "crop {w}x{h}@({x0},{y0}) of {}x{} image",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(w, h, self.channels, |x, y, c| self.at(x0 + x, y0 + y, c)))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Integer-factor box downscale.
    pub fn downscale(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "downscale factor {factor} does not divide {}x{}",
                self.width, self.height
            )));
        }
        let norm = T::one() / T::of_usize(factor * factor);
        Ok(Self::from_fn(self.width / factor, self.height / factor, self.channels, |x, y, c| {
            let mut s = T::zero();
            for dy in 0..factor {
                for dx in 0..factor {
                    s += self.at(x * factor + dx, y * factor + dy, c);
                }
            }
            s * norm
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_index_agree() {
        let img = Image::<f64>::from_fn(5, 4, 2, |x, y, c| (x * 100 + y * 10 + c) as f64);
        let c = img.crop(1, 2, 3, 2).unwrap();
        assert_eq!(c.at(0, 0, 1), 121.0);
        assert_eq!(c.at(2, 1, 0), 330.0);
        assert!(img.crop(3, 0, 3, 1).is_err());
    }

    #[test]
    fn downscale_averages_blocks() {
        let img = Image::<f32>::from_fn(4, 2, 1, |x, _, _| x as f32);
        let d = img.downscale(2).unwrap();
        assert_eq!(d.data, vec![0.5, 2.5]);
    }
}
