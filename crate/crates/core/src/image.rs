//! Images, the degradation model, and the feature transforms feeding the
//! morphological-component and color discriminators.
//!
//! Images are planar `C×H×W` floats in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Grayscale mixing weights for (red, green, blue).
///
/// The green weight is 0.578 rather than the usual Rec.601 0.587, so the
/// weights sum to 0.991 and a white pixel maps to 0.991.
pub const GRAY_COEFFS: [f64; 3] = [0.299, 0.578, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct Image<const C: usize> {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub type ImageRgb = Image<3>;
pub type ImageGray = Image<1>;

impl<const C: usize> Image<C> {
    /// Planar data; every value must lie in `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("Image::new", format!("empty {height}×{width} image")));
        }
        if data.len() != C * height * width {
            return Err(Error::shape(
                "Image::new",
                format!("{C}×{height}×{width} needs {} values, got {}", C * height * width, data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract("Image::new", format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Like [`Image::new`] but clamps into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; C * height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        C
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Sub-image with top-left corner `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width || height == 0 || width == 0 {
            return Err(Error::contract(
                "Image::crop",
                format!(
                    "{height}×{width} at ({row},{col}) exceeds {}×{}",
                    self.height, self.width
                ),
            ));
        }
        let mut data = Vec::with_capacity(C * height * width);
        for c in 0..C {
            for y in row..row + height {
                let base = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[base + col..base + col + width]);
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// `1×C×H×W` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, C, self.height, self.width], self.data.clone()).expect("consistent")
    }

    /// Batch item `i` of an NCHW tensor, clamped into range.
    pub fn from_tensor(t: &Tensor, i: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if c != C || i >= n {
            return Err(Error::shape(
                "Image::from_tensor",
                format!("item {i} with {C} channels from {:?}", t.shape()),
            ));
        }
        let per = c * h * w;
        Self::from_clamped(h, w, t.data()[i * per..(i + 1) * per].to_vec())
    }

    /// Sample variance over all values.
    pub fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Stacks same-sized images into an `N×C×H×W` tensor.
pub fn batch_tensor<const C: usize>(images: &[Image<C>]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::contract("batch_tensor", "empty batch"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * C * h * w);
    for im in images {
        if (im.height, im.width) != (h, w) {
            return Err(Error::shape(
                "batch_tensor",
                format!("{}×{} vs {h}×{w}", im.height, im.width),
            ));
        }
        data.extend_from_slice(&im.data);
    }
    Tensor::new([images.len(), C, h, w], data)
}

pub fn load_png(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let png_err = |e: png::DecodingError| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!(
                "{:?} at {:?} bits; only 8-bit RGB is supported",
                info.color_type, info.bit_depth
            ),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Png {
        path: path.to_path_buf(),
        detail: "image too large".into(),
    })?];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let bytes = &buf[..frame.buffer_size()];
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        let row = &bytes[y * frame.line_size..];
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] = row[3 * x + c] as f32 / 255.0;
            }
        }
    }
    Image::new(h, w, data)
}

fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

pub fn save_png(image: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = (image.height, image.width);
    let mut bytes = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                bytes[(y * w + x) * 3 + c] = quantize(image.get(c, y, x));
            }
        }
    }
    write_png(path.as_ref(), w, h, png::ColorType::Rgb, &bytes)
}

pub fn save_gray_png(image: &ImageGray, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = image.data.iter().map(|&v| quantize(v)).collect();
    write_png(path.as_ref(), image.width, image.height, png::ColorType::Grayscale, &bytes)
}

pub fn to_gray(image: &ImageRgb) -> ImageGray {
    let n = image.height * image.width;
    let data = (0..n)
        .map(|i| {
            let v = GRAY_COEFFS[0] * image.data[i] as f64
                + GRAY_COEFFS[1] * image.data[n + i] as f64
                + GRAY_COEFFS[2] * image.data[2 * n + i] as f64;
            v as f32
        })
        .collect();
    Image {
        height: image.height,
        width: image.width,
        data,
    }
}

/// Differentiable grayscale conversion of an `N×3×H×W` batch.
pub fn to_gray_var<T: Scalar>(g: &mut Graph<T>, rgb: Var) -> Result<Var> {
    let coeffs = GRAY_COEFFS.map(T::of);
    g.channel_mix(rgb, &coeffs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianKernelSpec {
    pub size: usize,
    pub stride: usize,
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub normalize: bool,
}

impl Default for GaussianKernelSpec {
    /// 21×21, stride 1, centered, σ = √3 on both axes, unit sum.
    fn default() -> Self {
        Self {
            size: 21,
            stride: 1,
            mu_x: 0.0,
            mu_y: 0.0,
            sigma_x: 3f64.sqrt(),
            sigma_y: 3f64.sqrt(),
            normalize: true,
        }
    }
}

/// A square kernel, row-major, indexed by offsets `-r..=r` on both axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2d {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel2d {
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    /// Entry at offset `(x, y)` from the center.
    pub fn at(&self, x: isize, y: isize) -> f64 {
        let r = self.radius() as isize;
        self.data[((y + r) as usize) * self.size + (x + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub fn gaussian_kernel(spec: &GaussianKernelSpec) -> Result<Kernel2d> {
    if spec.size.is_multiple_of(2) || spec.size < 3 {
        return Err(Error::contract(
            "gaussian_kernel",
            format!("size must be odd and ≥ 3, got {}", spec.size),
        ));
    }
    if !(spec.sigma_x > 0.0 && spec.sigma_y > 0.0) {
        return Err(Error::contract("gaussian_kernel", "σ must be positive"));
    }
    let r = (spec.size / 2) as isize;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * spec.sigma_x * spec.sigma_y);
    let mut data = Vec::with_capacity(spec.size * spec.size);
    for y in -r..=r {
        for x in -r..=r {
            let dx = x as f64 - spec.mu_x;
            let dy = y as f64 - spec.mu_y;
            data.push(
                norm * (-(dx * dx) / (2.0 * spec.sigma_x.powi(2))
                    - (dy * dy) / (2.0 * spec.sigma_y.powi(2)))
                .exp(),
            );
        }
    }
    if spec.normalize {
        let s: f64 = data.iter().sum();
        data.iter_mut().for_each(|v| *v /= s);
    }
    Ok(Kernel2d {
        size: spec.size,
        data,
    })
}

/// Same-size convolution of every channel with `kernel`, reflect-padded at the borders.
pub fn blur<const C: usize>(image: &Image<C>, kernel: &Kernel2d) -> Result<Image<C>> {
    let r = kernel.radius();
    if r >= image.height || r >= image.width {
        return Err(Error::contract(
            "blur",
            format!(
                "kernel {}×{} is larger than the {}×{} image allows",
                kernel.size, kernel.size, image.height, image.width
            ),
        ));
    }
    let k64: Vec<f64> = kernel.data.clone();
    let x64: Vec<f64> = image.data.iter().map(|&v| v as f64).collect();
    let y = crate::kernels::blur_planes(C, image.height, image.width, &x64, &k64, kernel.size);
    Image::from_clamped(image.height, image.width, y.into_iter().map(|v| v as f32).collect())
}

/// Differentiable blur of an NCHW batch.
pub fn blur_var<T: Scalar>(g: &mut Graph<T>, x: Var, kernel: &Kernel2d) -> Result<Var> {
    let k: Vec<T> = kernel.data.iter().map(|&v| T::of(v)).collect();
    g.blur(x, &k, kernel.size)
}

/// Cubic convolution kernel with a = −0.5.
pub fn cubic(x: f64) -> f64 {
    let a = x.abs();
    let (a2, a3) = (a * a, a * a * a);
    if a <= 1.0 {
        1.5 * a3 - 2.5 * a2 + 1.0
    } else if a <= 2.0 {
        -0.5 * a3 + 2.5 * a2 - 4.0 * a + 2.0
    } else {
        0.0
    }
}

/// Per-output-sample source indices and weights along one axis.
struct Contributions {
    taps: usize,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

fn contributions(in_len: usize, out_len: usize, scale: f64, antialias: bool) -> Contributions {
    let (kscale, width) = if scale < 1.0 && antialias {
        (scale, 4.0 / scale)
    } else {
        (1.0, 4.0)
    };
    let taps = width.ceil() as usize + 2;
    let mut indices = Vec::with_capacity(out_len * taps);
    let mut weights = Vec::with_capacity(out_len * taps);
    let period = 2 * in_len as isize;
    for x in 1..=out_len {
        // 1-based source coordinate of the output sample center
        let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
        let left = (u - width / 2.0).floor() as isize;
        let start = weights.len();
        for j in 0..taps as isize {
            let idx = left + j;
            let w = kscale * cubic(kscale * (u - idx as f64));
            // symmetric extension: 1..n, n..1, repeating
            let m = (idx - 1).rem_euclid(period);
            let src = if m < in_len as isize { m } else { period - 1 - m };
            indices.push(src as usize);
            weights.push(w);
        }
        let s: f64 = weights[start..].iter().sum();
        weights[start..].iter_mut().for_each(|w| *w /= s);
    }
    Contributions {
        taps,
        indices,
        weights,
    }
}

/// Bicubic resampling following the `imresize` conventions: pixel-center
/// alignment, symmetric borders, and kernel widening by the scale when
/// downscaling with `antialias`. Output extent is `ceil(extent · scale)`.
pub fn bicubic_resize<const C: usize>(
    image: &Image<C>,
    scale: f64,
    antialias: bool,
) -> Result<Image<C>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::contract("bicubic_resize", format!("scale {scale} must be > 0")));
    }
    let out_h = (image.height as f64 * scale - 1e-9).ceil() as usize;
    let out_w = (image.width as f64 * scale - 1e-9).ceil() as usize;
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract(
            "bicubic_resize",
            format!("{}×{} at scale {scale} is degenerate", image.height, image.width),
        ));
    }
    let (h, w) = (image.height, image.width);
    let rows = contributions(h, out_h, scale, antialias);
    let cols = contributions(w, out_w, scale, antialias);
    let mut out = Vec::with_capacity(C * out_h * out_w);
    let mut tmp = vec![0.0f64; out_h * w];
    for c in 0..C {
        let plane = image.plane(c);
        // height first, then width
        for oy in 0..out_h {
            let idx = &rows.indices[oy * rows.taps..(oy + 1) * rows.taps];
            let wts = &rows.weights[oy * rows.taps..(oy + 1) * rows.taps];
            let dst = &mut tmp[oy * w..(oy + 1) * w];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for (&src, &wt) in idx.iter().zip(wts) {
                if wt == 0.0 {
                    continue;
                }
                let line = &plane[src * w..(src + 1) * w];
                for (d, &s) in dst.iter_mut().zip(line) {
                    *d += wt * s as f64;
                }
            }
        }
        for oy in 0..out_h {
            let line = &tmp[oy * w..(oy + 1) * w];
            for ox in 0..out_w {
                let idx = &cols.indices[ox * cols.taps..(ox + 1) * cols.taps];
                let wts = &cols.weights[ox * cols.taps..(ox + 1) * cols.taps];
                let v: f64 = idx.iter().zip(wts).map(|(&i, &wt)| wt * line[i]).sum();
                out.push(v as f32);
            }
        }
    }
    Image::from_clamped(out_h, out_w, out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub blur: Option<GaussianKernelSpec>,
    pub scale: usize,
    pub noise_sigma: f64,
}

impl Default for DegradationSpec {
    /// Noise-free bicubic ×4.
    fn default() -> Self {
        Self {
            blur: None,
            scale: 4,
            noise_sigma: 0.0,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 3, 4, 8].contains(&self.scale) {
            return Err(Error::contract(
                "DegradationSpec",
                format!("scale {} not in {{1,2,3,4,8}}", self.scale),
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::contract("DegradationSpec", "noise σ must be ≥ 0"));
        }
        Ok(())
    }
}

/// Blur (optional), bicubic downsampling by `scale`, then clamped additive
/// Gaussian noise. The input is first cropped to the largest region divisible
/// by the scale.
pub fn degrade(hr: &ImageRgb, spec: &DegradationSpec, seed: u64) -> Result<ImageRgb> {
    spec.validate()?;
    let s = spec.scale;
    let (h, w) = (hr.height / s * s, hr.width / s * s);
    if h == 0 || w == 0 {
        return Err(Error::contract(
            "degrade",
            format!("{}×{} smaller than scale {s}", hr.height, hr.width),
        ));
    }
    let mut img = if (h, w) == (hr.height, hr.width) {
        hr.clone()
    } else {
        hr.crop(0, 0, h, w)?
    };
    if let Some(kspec) = &spec.blur {
        img = blur(&img, &gaussian_kernel(kspec)?)?;
    }
    if s > 1 {
        img = bicubic_resize(&img, 1.0 / s as f64, true)?;
    }
    if spec.noise_sigma > 0.0 {
        img = add_gaussian_noise(&img, spec.noise_sigma, seed);
    }
    Ok(img)
}

/// Adds seeded zero-mean Gaussian noise and clamps.
pub fn add_gaussian_noise<const C: usize>(image: &Image<C>, sigma: f64, seed: u64) -> Image<C> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma).expect("σ ≥ 0");
    let data = image
        .data
        .iter()
        .map(|&v| (v as f64 + dist.sample(&mut rng)).clamp(0.0, 1.0) as f32)
        .collect();
    Image {
        height: image.height,
        width: image.width,
        data,
    }
}

#[derive(Clone, Debug)]
pub struct PatchPair {
    pub lr: ImageRgb,
    pub hr: ImageRgb,
    pub image_index: usize,
    pub lr_row: usize,
    pub lr_col: usize,
}

impl PatchPair {
    pub fn hr_row(&self, scale: usize) -> usize {
        self.lr_row * scale
    }

    pub fn hr_col(&self, scale: usize) -> usize {
        self.lr_col * scale
    }
}

/// Seeded source of aligned (LR, HR) training patches.
///
/// LR images are degraded once at construction. The patches drawn for a given
/// `draw` index depend only on the seed and that index, so a resumed run sees
/// the same batches as an uninterrupted one.
#[derive(Clone, Debug)]
pub struct PatchSampler {
    pairs: Vec<(ImageRgb, ImageRgb)>,
    source_index: Vec<usize>,
    lr_patch: usize,
    scale: usize,
    seed: u64,
}

impl PatchSampler {
    pub fn new(
        hr_images: &[ImageRgb],
        degradation: &DegradationSpec,
        lr_patch: usize,
        seed: u64,
    ) -> Result<Self> {
        if lr_patch == 0 {
            return Err(Error::contract("PatchSampler", "lr_patch must be ≥ 1"));
        }
        let scale = degradation.scale;
        let need = lr_patch * scale;
        let mut pairs = Vec::new();
        let mut source_index = Vec::new();
        for (i, hr) in hr_images.iter().enumerate() {
            if hr.height < need || hr.width < need {
                log::warn!(
                    "skipping image {i}: {}×{} is smaller than the {need}×{need} HR patch",
                    hr.height,
                    hr.width
                );
                continue;
            }
            let (h, w) = (hr.height / scale * scale, hr.width / scale * scale);
            let hr = hr.crop(0, 0, h, w)?;
            let lr = degrade(&hr, degradation, seed.wrapping_add(i as u64))?;
            pairs.push((hr, lr));
            source_index.push(i);
        }
        if pairs.is_empty() {
            return Err(Error::Data(format!(
                "no image is at least {need}×{need}; nothing to sample"
            )));
        }
        Ok(Self {
            pairs,
            source_index,
            lr_patch,
            scale,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn lr_patch(&self) -> usize {
        self.lr_patch
    }

    /// `count` uniformly random patch pairs for draw number `draw`.
    pub fn sample(&self, draw: u64, count: usize) -> Result<Vec<PatchPair>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(draw);
        let p = self.lr_patch;
        (0..count)
            .map(|_| {
                let k = rng.random_range(0..self.pairs.len());
                let (hr, lr) = &self.pairs[k];
                let r = rng.random_range(0..=lr.height - p);
                let c = rng.random_range(0..=lr.width - p);
                Ok(PatchPair {
                    lr: lr.crop(r, c, p, p)?,
                    hr: hr.crop(r * self.scale, c * self.scale, p * self.scale, p * self.scale)?,
                    image_index: self.source_index[k],
                    lr_row: r,
                    lr_col: c,
                })
            })
            .collect()
    }

    /// `(LR, HR)` batch tensors for draw number `draw`.
    pub fn batch(&self, draw: u64, count: usize) -> Result<(Tensor, Tensor)> {
        let pairs = self.sample(draw, count)?;
        let lr: Vec<ImageRgb> = pairs.iter().map(|p| p.lr.clone()).collect();
        let hr: Vec<ImageRgb> = pairs.iter().map(|p| p.hr.clone()).collect();
        Ok((batch_tensor(&lr)?, batch_tensor(&hr)?))
    }
}

/// Aligned patch pairs from noise-free bicubic degradation of `hr_images`.
pub fn sample_patches(
    hr_images: &[ImageRgb],
    lr_patch: usize,
    scale: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PatchPair>> {
    let spec = DegradationSpec {
        scale,
        ..DegradationSpec::default()
    };
    PatchSampler::new(hr_images, &spec, lr_patch, seed)?.sample(0, count)
}

/// Random `H×W` image with i.i.d. uniform values, for tests and demos.
pub fn random_image<const C: usize>(height: usize, width: usize, seed: u64) -> Image<C> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..C * height * width).map(|_| rng.random::<f32>()).collect();
    Image {
        height,
        width,
        data,
    }
}
