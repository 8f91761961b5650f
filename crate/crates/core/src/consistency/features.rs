//! Convolutional feature pyramids with an input-gradient backward pass.
//!
//! Extractors are frozen: only gradients with respect to the input image are
//! computed. Images are HWC, which lets a 3x3 convolution be one GEMM of the
//! im2col matrix (`HW x 9C`) against the weights (`9C x C_out`).

use crate::image::Image;
use crate::{Error, Result, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::Path;

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
const RANDOM_SEED: u64 = 0x5eed_f00d;

/// Blocks of `(conv count, channels)`; the last conv of each block is tapped.
const VGG19_BLOCKS: [(usize, usize); 4] = [(2, 64), (2, 128), (4, 256), (4, 512)];
const SMALL_BLOCKS: [(usize, usize); 4] = [(2, 8), (2, 16), (2, 32), (2, 32)];
const POINTWISE_BLOCKS: [(usize, usize); 4] = [(1, 8), (1, 8), (1, 8), (1, 8)];

/// Feature extractor variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractorKind {
    /// 19-layer VGG geometry with pretrained weights from a file.
    Vgg19,
    /// VGG19 geometry with fixed-seed random weights.
    RandomVgg19,
    /// Same block structure with far fewer channels.
    RandomSmall,
    /// 1x1 convolutions with top-left subsampling between blocks: every feature cell
    /// sees exactly one input pixel.
    RandomPointwise,
}

impl ExtractorKind {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "vgg19" => Ok(Self::Vgg19),
            "random-vgg19" => Ok(Self::RandomVgg19),
            "random-small" => Ok(Self::RandomSmall),
            "random-pointwise" => Ok(Self::RandomPointwise),
            other => Err(Error::UnknownExtractor(other.to_string())),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Self::Vgg19 => "vgg19",
            Self::RandomVgg19 => "random-vgg19",
            Self::RandomSmall => "random-small",
            Self::RandomPointwise => "random-pointwise",
        }
    }

    fn blocks(self) -> &'static [(usize, usize)] {
        match self {
            Self::Vgg19 | Self::RandomVgg19 => &VGG19_BLOCKS,
            Self::RandomSmall => &SMALL_BLOCKS,
            Self::RandomPointwise => &POINTWISE_BLOCKS,
        }
    }

    fn kernel(self) -> usize {
        if self == Self::RandomPointwise {
            1
        } else {
            3
        }
    }
}

#[derive(Clone, Debug)]
struct Conv<T> {
    cin: usize,
    cout: usize,
    k: usize,
    /// `(k*k*cin) x cout`, rows ordered `(dy, dx, c_in)`.
    weight: Vec<T>,
    bias: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Conv(usize),
    Relu,
    Tap,
    MaxPool,
    Subsample,
}

/// A frozen feature extractor.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    pub kind: ExtractorKind,
    convs: Vec<Conv<T>>,
    ops: Vec<Op>,
    mean: [T; 3],
    std: [T; 3],
}

/// Multi-level feature maps, finest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T> {
    pub layers: Vec<Image<T>>,
    pub layer_ids: Vec<String>,
}

/// Intermediates for [`FeatureExtractor::backward`].
#[derive(Clone, Debug)]
pub struct FeatureCache<T> {
    /// Input to each op.
    inputs: Vec<Image<T>>,
    /// Argmax offset (0..4) per pooled output element.
    pool_arg: Vec<Vec<u8>>,
}

impl<T: Scalar> FeatureExtractor<T> {
    /// Builds an extractor by id. `weights` is required for `vgg19` only.
    pub fn new(id: &str, weights: Option<&Path>) -> Result<Self> {
        let kind = ExtractorKind::parse(id)?;
        let (convs, ops) = match kind {
            ExtractorKind::Vgg19 => {
                let path = weights.ok_or_else(|| Error::Config("the vgg19 extractor needs a weights file".into()))?;
                let geometry = layer_geometry(kind);
                let flat = read_weights(path, weight_count(&geometry))?;
                build(kind, geometry, |n| flat_slices(&flat, n))
            }
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(RANDOM_SEED);
                let geometry = layer_geometry(kind);
                build(kind, geometry, |shapes| random_weights(shapes, &mut rng))
            }
        };
        let of3 = |v: [f64; 3]| v.map(T::of);
        Ok(Self { kind, convs, ops, mean: of3(IMAGENET_MEAN), std: of3(IMAGENET_STD) })
    }

    pub fn num_layers(&self) -> usize {
        self.kind.blocks().len()
    }

    /// Channel count of each tapped layer.
    pub fn layer_channels(&self) -> Vec<usize> {
        self.kind.blocks().iter().map(|b| b.1).collect()
    }

    /// Spatial size of each tapped layer for a `w x h` input.
    pub fn layer_sizes(&self, w: usize, h: usize) -> Vec<[usize; 2]> {
        (0..self.num_layers()).map(|l| [w >> l, h >> l]).collect()
    }

    pub fn extract(&self, image: &Image<T>) -> Result<FeaturePyramid<T>> {
        Ok(self.run(image, false)?.0)
    }

    /// Forward pass that keeps what [`FeatureExtractor::backward`] needs.
    pub fn extract_with_cache(&self, image: &Image<T>) -> Result<(FeaturePyramid<T>, FeatureCache<T>)> {
        self.run(image, true)
    }

    fn run(&self, image: &Image<T>, keep: bool) -> Result<(FeaturePyramid<T>, FeatureCache<T>)> {
        let down = 1usize << (self.num_layers() - 1);
        if image.channels != 3 {
            return Err(Error::ShapeMismatch(format!("feature input has {} channels", image.channels)));
        }
        if image.width < down || image.height < down {
            return Err(Error::InvalidArgument(format!(
                "{}x{} input is smaller than the extractor's {down}x downsampling",
                image.width, image.height
            )));
        }
        let mut x = image.clone();
        for (i, v) in x.data.iter_mut().enumerate() {
            let c = i % 3;
            *v = (*v - self.mean[c]) / self.std[c];
        }
        let mut cache = FeatureCache { inputs: Vec::new(), pool_arg: Vec::new() };
        let mut layers = Vec::new();
        for op in &self.ops {
            if keep {
                cache.inputs.push(x.clone());
            }
            x = match *op {
                Op::Conv(i) => conv_forward(&self.convs[i], &x),
                Op::Relu => x.map(|v| v.max(T::zero())),
                Op::Tap => {
                    layers.push(x.clone());
                    x
                }
                Op::MaxPool => {
                    let (y, arg) = maxpool_forward(&x);
                    if keep {
                        cache.pool_arg.push(arg);
                    }
                    y
                }
                Op::Subsample => subsample(&x),
            };
        }
        let layer_ids = (1..=layers.len()).map(|l| format!("{}/tap{l}", self.kind.id())).collect();
        Ok((FeaturePyramid { layers, layer_ids }, cache))
    }

    /// Gradient with respect to the input image, given gradients on every tapped layer.
    pub fn backward(&self, cache: &FeatureCache<T>, d_layers: &[Image<T>]) -> Result<Image<T>> {
        if cache.inputs.len() != self.ops.len() {
            return Err(Error::InvalidArgument("feature cache was not recorded".into()));
        }
        if d_layers.len() != self.num_layers() {
            return Err(Error::ShapeMismatch(format!("{} layer gradients for {} layers", d_layers.len(), self.num_layers())));
        }
        let last = cache.inputs.last().expect("nonempty op list");
        let mut d: Image<T> = Image::new(last.width, last.height, last.channels);
        let mut tap = d_layers.len();
        let mut pool = cache.pool_arg.len();
        for (op, input) in self.ops.iter().zip(&cache.inputs).rev() {
            d = match *op {
                Op::Conv(i) => conv_backward(&self.convs[i], input, &d),
                Op::Relu => {
                    let mut d = d;
                    for (g, &v) in d.data.iter_mut().zip(&input.data) {
                        if v <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    d
                }
                Op::Tap => {
                    tap -= 1;
                    d_layers[tap].ensure_same_shape(input, "feature gradient")?;
                    let mut d = d;
                    for (g, &v) in d.data.iter_mut().zip(&d_layers[tap].data) {
                        *g += v;
                    }
                    d
                }
                Op::MaxPool => {
                    pool -= 1;
                    maxpool_backward(input, &d, &cache.pool_arg[pool])
                }
                Op::Subsample => subsample_backward(input, &d),
            };
        }
        for (i, v) in d.data.iter_mut().enumerate() {
            *v /= self.std[i % 3];
        }
        Ok(d)
    }
}

/// `(k, cin, cout)` of every conv in order.
fn layer_geometry(kind: ExtractorKind) -> Vec<(usize, usize, usize)> {
    let k = kind.kernel();
    let mut cin = 3;
    let mut out = Vec::new();
    for &(n, c) in kind.blocks() {
        for _ in 0..n {
            out.push((k, cin, c));
            cin = c;
        }
    }
    out
}

fn weight_count(geometry: &[(usize, usize, usize)]) -> usize {
    geometry.iter().map(|&(k, ci, co)| k * k * ci * co + co).sum()
}

fn build<T: Scalar>(
    kind: ExtractorKind,
    geometry: Vec<(usize, usize, usize)>,
    mut weights: impl FnMut(&[(usize, usize, usize)]) -> Vec<(Vec<T>, Vec<T>)>,
) -> (Vec<Conv<T>>, Vec<Op>) {
    let params = weights(&geometry);
    let convs: Vec<Conv<T>> = geometry
        .iter()
        .zip(params)
        .map(|(&(k, cin, cout), (weight, bias))| Conv { cin, cout, k, weight, bias })
        .collect();
    let mut ops = Vec::new();
    let mut i = 0;
    for (b, &(n, _)) in kind.blocks().iter().enumerate() {
        if b > 0 {
            ops.push(if kind == ExtractorKind::RandomPointwise { Op::Subsample } else { Op::MaxPool });
        }
        for _ in 0..n {
            ops.push(Op::Conv(i));
            ops.push(Op::Relu);
            i += 1;
        }
        ops.push(Op::Tap);
    }
    (convs, ops)
}

fn random_weights<T: Scalar>(geometry: &[(usize, usize, usize)], rng: &mut ChaCha8Rng) -> Vec<(Vec<T>, Vec<T>)> {
    geometry
        .iter()
        .map(|&(k, cin, cout)| {
            let fan_in = (k * k * cin) as f64;
            let a = (6.0 / fan_in).sqrt();
            let w = (0..k * k * cin * cout).map(|_| T::of(rng.gen_range(-a..a))).collect();
            let b = (0..cout).map(|_| T::of(rng.gen_range(-0.05..0.05))).collect();
            (w, b)
        })
        .collect()
}

/// Splits a flat file laid out per conv as `weight[cout][cin][ky][kx]` then `bias[cout]`
/// (the usual framework order) into the HWC-friendly layout used here.
fn flat_slices<T: Scalar>(flat: &[f32], geometry: &[(usize, usize, usize)]) -> Vec<(Vec<T>, Vec<T>)> {
    let mut off = 0;
    geometry
        .iter()
        .map(|&(k, cin, cout)| {
            let n = k * k * cin * cout;
            let src = &flat[off..off + n];
            let mut w = vec![T::zero(); n];
            for o in 0..cout {
                for c in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let row = (ky * k + kx) * cin + c;
                            w[row * cout + o] = T::of(src[((o * cin + c) * k + ky) * k + kx] as f64);
                        }
                    }
                }
            }
            off += n;
            let b = flat[off..off + cout].iter().map(|&v| T::of(v as f64)).collect();
            off += cout;
            (w, b)
        })
        .collect()
}

/// Reads `count` little-endian `f32` values; the file must hold exactly that many.
fn read_weights(path: &Path, count: usize) -> Result<Vec<f32>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * 4 {
        return Err(Error::format("feature weights", format!("expected {} bytes, found {}", count * 4, bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

fn im2col<T: Scalar>(x: &Image<T>, k: usize) -> Vec<T> {
    let (w, h, c) = (x.width, x.height, x.channels);
    let pad = k / 2;
    let row = k * k * c;
    let mut cols = vec![T::zero(); w * h * row];
    for y in 0..h {
        for xx in 0..w {
            let dst = &mut cols[(y * w + xx) * row..(y * w + xx + 1) * row];
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let sx = xx as isize + kx as isize - pad as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let s = x.idx(sx as usize, sy as usize);
                    let o = (ky * k + kx) * c;
                    dst[o..o + c].copy_from_slice(&x.data[s..s + c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], w: usize, h: usize, c: usize, k: usize) -> Image<T> {
    let pad = k / 2;
    let row = k * k * c;
    let mut out = Image::new(w, h, c);
    for y in 0..h {
        for xx in 0..w {
            let src = &cols[(y * w + xx) * row..(y * w + xx + 1) * row];
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let sx = xx as isize + kx as isize - pad as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let d = out.idx(sx as usize, sy as usize);
                    let o = (ky * k + kx) * c;
                    for ch in 0..c {
                        out.data[d + ch] += src[o + ch];
                    }
                }
            }
        }
    }
    out
}

fn conv_forward<T: Scalar>(conv: &Conv<T>, x: &Image<T>) -> Image<T> {
    debug_assert_eq!(x.channels, conv.cin);
    let n = x.width * x.height;
    let kk = conv.k * conv.k * conv.cin;
    let mut y = Image::new(x.width, x.height, conv.cout);
    for row in y.data.chunks_exact_mut(conv.cout) {
        row.copy_from_slice(&conv.bias);
    }
    let one = T::one();
    if conv.k == 1 {
        T::gemm(n, kk, conv.cout, one, &x.data, kk, 1, &conv.weight, conv.cout, 1, one, &mut y.data, conv.cout, 1);
    } else {
        let cols = im2col(x, conv.k);
        T::gemm(n, kk, conv.cout, one, &cols, kk, 1, &conv.weight, conv.cout, 1, one, &mut y.data, conv.cout, 1);
    }
    y
}

fn conv_backward<T: Scalar>(conv: &Conv<T>, x: &Image<T>, dy: &Image<T>) -> Image<T> {
    let n = x.width * x.height;
    let kk = conv.k * conv.k * conv.cin;
    let mut dcols = vec![T::zero(); n * kk];
    T::gemm(n, conv.cout, kk, T::one(), &dy.data, conv.cout, 1, &conv.weight, 1, conv.cout, T::zero(), &mut dcols, kk, 1);
    if conv.k == 1 {
        Image { width: x.width, height: x.height, channels: conv.cin, data: dcols }
    } else {
        col2im(&dcols, x.width, x.height, conv.cin, conv.k)
    }
}

fn maxpool_forward<T: Scalar>(x: &Image<T>) -> (Image<T>, Vec<u8>) {
    let (w, h, c) = (x.width / 2, x.height / 2, x.channels);
    let mut y = Image::new(w, h, c);
    let mut arg = vec![0u8; w * h * c];
    for j in 0..h {
        for i in 0..w {
            for ch in 0..c {
                let mut best = x.at(2 * i, 2 * j, ch);
                let mut a = 0u8;
                for (o, (dx, dy)) in [(1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                    let v = x.at(2 * i + dx, 2 * j + dy, ch);
                    if v > best {
                        best = v;
                        a = o as u8 + 1;
                    }
                }
                let k = y.idx(i, j) + ch;
                y.data[k] = best;
                arg[k] = a;
            }
        }
    }
    (y, arg)
}

fn maxpool_backward<T: Scalar>(x: &Image<T>, dy: &Image<T>, arg: &[u8]) -> Image<T> {
    const OFF: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];
    let mut dx = Image::new(x.width, x.height, x.channels);
    for j in 0..dy.height {
        for i in 0..dy.width {
            for ch in 0..dy.channels {
                let k = dy.idx(i, j) + ch;
                let (ox, oy) = OFF[arg[k] as usize];
                let d = dx.idx(2 * i + ox, 2 * j + oy) + ch;
                dx.data[d] += dy.data[k];
            }
        }
    }
    dx
}

/// Keeps the top-left pixel of every 2x2 cell.
fn subsample<T: Scalar>(x: &Image<T>) -> Image<T> {
    Image::from_fn(x.width / 2, x.height / 2, x.channels, |i, j, c| x.at(2 * i, 2 * j, c))
}

fn subsample_backward<T: Scalar>(x: &Image<T>, dy: &Image<T>) -> Image<T> {
    let mut dx = Image::new(x.width, x.height, x.channels);
    for j in 0..dy.height {
        for i in 0..dy.width {
            let (s, d) = (dy.idx(i, j), dx.idx(2 * i, 2 * j));
            dx.data[d..d + dy.channels].copy_from_slice(&dy.data[s..s + dy.channels]);
        }
    }
    dx
}
