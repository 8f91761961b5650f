//! PNG input/output. Values are linear in `[0, 1]`; no gamma handling.

use crate::image::{DepthMap, Image};
use crate::{Error, Result, Scalar};
use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format("png", format!("{}: {e}", path.display()))
}

/// Reads an 8-bit (or stripped 16-bit) PNG as RGB, or RGBA when the file has alpha.
/// Grayscale is expanded to three channels.
pub fn read_png<T: Scalar>(path: &Path) -> Result<Image<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| decode_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_ch = info.color_type.samples();
    let out_ch = match info.color_type {
        ColorType::Rgba | ColorType::GrayscaleAlpha => 4,
        _ => 3,
    };
    let scale = T::of(1.0 / 255.0);
    let mut img = Image::new(w, h, out_ch);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * src_ch];
        for x in 0..w {
            let p = &row[x * src_ch..(x + 1) * src_ch];
            let rgba = match src_ch {
                1 => [p[0], p[0], p[0], 255],
                2 => [p[0], p[0], p[0], p[1]],
                3 => [p[0], p[1], p[2], 255],
                _ => [p[0], p[1], p[2], p[3]],
            };
            let dst = img.idx(x, y);
            for c in 0..out_ch {
                img.data[dst + c] = T::of_usize(rgba[c] as usize) * scale;
            }
        }
    }
    Ok(img)
}

/// Reads a PNG or JPEG (by extension) as RGB, or RGBA for PNGs with alpha.
pub fn read_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("jpg") | Some("jpeg") => read_jpeg(path),
        _ => read_png(path),
    }
}

pub fn read_jpeg<T: Scalar>(path: &Path) -> Result<Image<T>> {
    use zune_jpeg::zune_core::colorspace::ColorSpace;
    use zune_jpeg::zune_core::options::DecoderOptions;
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let opts = DecoderOptions::default().jpeg_set_out_colorspace(ColorSpace::RGB);
    let mut dec = zune_jpeg::JpegDecoder::new_with_options(std::io::Cursor::new(bytes), opts);
    let pixels = dec.decode().map_err(|e| Error::format("jpeg", format!("{}: {e:?}", path.display())))?;
    let (w, h) = dec.dimensions().ok_or_else(|| Error::format("jpeg", "missing dimensions"))?;
    let scale = T::of(1.0 / 255.0);
    Image::from_vec(w, h, 3, pixels.into_iter().map(|b| T::of_usize(b as usize) * scale).collect())
}

fn quantize<T: Scalar>(v: T, max: f64) -> f64 {
    (v.as_f64().clamp(0.0, 1.0) * max).round()
}

fn write(path: &Path, w: usize, h: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| decode_err(path, e))?;
    writer.write_image_data(data).map_err(|e| decode_err(path, e))?;
    writer.finish().map_err(|e| decode_err(path, e))
}

/// Writes a 1-, 3- or 4-channel image as an 8-bit PNG.
pub fn write_png<T: Scalar>(path: &Path, image: &Image<T>) -> Result<()> {
    let color = match image.channels {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        4 => ColorType::Rgba,
        c => return Err(Error::InvalidArgument(format!("cannot write a {c}-channel PNG"))),
    };
    let data: Vec<u8> = image.data.iter().map(|&v| quantize(v, 255.0) as u8).collect();
    write(path, image.width, image.height, color, BitDepth::Eight, &data)
}

/// Writes depth as a 16-bit grayscale PNG, mapping `[near, far]` linearly onto
/// `[0, 65535]` (values outside are clamped).
pub fn write_depth_png16<T: Scalar>(path: &Path, depth: &DepthMap<T>, near: f64, far: f64) -> Result<()> {
    if depth.channels != 1 || !(far > near) {
        return Err(Error::InvalidArgument(format!("depth map with {} channels over [{near}, {far}]", depth.channels)));
    }
    let mut data = Vec::with_capacity(depth.data.len() * 2);
    for &d in &depth.data {
        let v = quantize(T::of((d.as_f64() - near) / (far - near)), 65535.0) as u16;
        data.extend_from_slice(&v.to_be_bytes());
    }
    write(path, depth.width, depth.height, ColorType::Grayscale, BitDepth::Sixteen, &data)
}

/// Reads a 16-bit grayscale depth PNG back into scene units.
pub fn read_depth_png16<T: Scalar>(path: &Path, near: f64, far: f64) -> Result<DepthMap<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Decoder::new(BufReader::new(file)).read_info().map_err(|e| decode_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| decode_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    if info.color_type != ColorType::Grayscale || info.bit_depth != BitDepth::Sixteen {
        return Err(decode_err(path, "expected 16-bit grayscale"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let o = y * info.line_size + 2 * x;
            let v = u16::from_be_bytes([buf[o], buf[o + 1]]) as f64 / 65535.0;
            out.data[y * w + x] = T::of(near + v * (far - near));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::<f32>::from_fn(5, 3, 3, |x, y, c| ((x + 2 * y + c) % 7) as f32 * 40.0 / 255.0);
        write_png(&p, &img).unwrap();
        let back: Image<f32> = read_png(&p).unwrap();
        assert_eq!(back.channels, 3);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn depth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let d = Image::<f64>::from_fn(4, 4, 1, |x, y, _| 2.0 + 0.25 * (x + y) as f64);
        write_depth_png16(&p, &d, 2.0, 6.0).unwrap();
        let back: Image<f64> = read_depth_png16(&p, 2.0, 6.0).unwrap();
        for (a, b) in d.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 4.0 / 65535.0);
        }
    }

    #[test]
    fn missing_file() {
        assert!(matches!(read_png::<f32>(Path::new("/no/such.png")), Err(Error::MissingFile(_))));
    }
}
