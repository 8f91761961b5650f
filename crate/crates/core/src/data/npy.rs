//! Minimal `.npy` support: little-endian `f4`/`f8` arrays in C order.

use crate::{Error, Result};
use std::path::Path;

const MAGIC: &[u8] = b"\x93NUMPY";

/// A dense array read from an `.npy` file, widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("npy", detail)
}

fn header_value<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = header.find(&pat).ok_or_else(|| bad(format!("header lacks {key}")))? + pat.len();
    Ok(header[start..].trim_start())
}

pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("missing magic string"));
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
        v => return Err(bad(format!("unsupported version {v}"))),
    };
    let header = std::str::from_utf8(bytes.get(start..start + header_len).ok_or_else(|| bad("truncated header"))?)
        .map_err(|_| bad("header is not text"))?;
    let descr = header_value(header, "descr")?;
    let width = if descr.starts_with("'<f8'") {
        8
    } else if descr.starts_with("'<f4'") {
        4
    } else {
        return Err(bad(format!("unsupported dtype {}", descr.split(',').next().unwrap_or(""))));
    };
    if header_value(header, "fortran_order")?.starts_with("True") {
        return Err(bad("fortran-ordered arrays are not supported"));
    }
    let shape_str = header_value(header, "shape")?;
    let close = shape_str.find(')').ok_or_else(|| bad("malformed shape"))?;
    let shape: Vec<usize> = shape_str[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(format!("bad dimension {s}"))))
        .collect::<Result<_>>()?;
    let count: usize = shape.iter().product();
    let body = &bytes[start + header_len..];
    if body.len() != count * width {
        return Err(bad(format!("expected {} data bytes for shape {shape:?}, found {}", count * width, body.len())));
    }
    let data = if width == 8 {
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
    } else {
        body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect()
    };
    Ok(NpyArray { shape, data })
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_npy(&bytes)
}

/// Serializes a C-ordered `f8` array (version 1.0 header).
pub fn encode_npy(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::ShapeMismatch(format!("{} values for shape {shape:?}", data.len())));
    }
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape_txt = if dims.len() == 1 { format!("({},)", dims[0]) } else { format!("({})", dims.join(", ")) };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
    let pad = (64 - (10 + header.len() + 1) % 64) % 64;
    header.push_str(&" ".repeat(pad));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_npy(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let bytes = encode_npy(shape, data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let data: Vec<f64> = (0..34).map(|i| i as f64 * 0.5 - 3.0).collect();
        let bytes = encode_npy(&[2, 17], &data).unwrap();
        assert_eq!((bytes.len() - 34 * 8) % 64, 0);
        let a = parse_npy(&bytes).unwrap();
        assert_eq!(a.shape, vec![2, 17]);
        assert_eq!(a.data, data);
    }

    #[test]
    fn rejects_truncated_body() {
        let mut bytes = encode_npy(&[3], &[1.0, 2.0, 3.0]).unwrap();
        bytes.pop();
        assert!(parse_npy(&bytes).is_err());
    }

    #[test]
    fn reads_f4() {
        let mut bytes = encode_npy(&[2], &[0.0, 0.0]).unwrap();
        let text = String::from_utf8_lossy(&bytes[10..]).replace("<f8", "<f4");
        bytes.truncate(10);
        bytes.extend_from_slice(&text.as_bytes()[..text.len() - 16]);
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(parse_npy(&bytes).unwrap().data, vec![1.5, -2.0]);
    }
}
