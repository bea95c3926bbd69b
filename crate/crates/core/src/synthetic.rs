//! Procedural image corpora used where no natural-image dataset is available.
//!
//! * [`dead_leaves`]: occluding disks with power-law radii. Its local statistics are
//!   close enough to natural images for NIQE model fitting.
//! * [`gradient_shapes`]: a smooth two-color gradient with a few anti-aliased
//!   shapes on top. This is the pretraining corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::ImageRgb;

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Planar RGB canvas with coverage-weighted painting.
struct Canvas {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; 3 * h * w],
        }
    }

    fn blend(&mut self, y: usize, x: usize, color: [f32; 3], coverage: f32) {
        let n = self.h * self.w;
        for (c, &v) in color.iter().enumerate() {
            let p = &mut self.data[c * n + y * self.w + x];
            *p += coverage * (v - *p);
        }
    }

    /// Paints a disk with a one-pixel anti-aliased rim.
    fn disk(&mut self, cy: f32, cx: f32, r: f32, color: [f32; 3]) {
        let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
        let y1 = ((cy + r + 1.0).ceil() as usize).min(self.h);
        let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((cx + r + 1.0).ceil() as usize).min(self.w);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = ((y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2)).sqrt();
                let cov = (r + 0.5 - d).clamp(0.0, 1.0);
                if cov > 0.0 {
                    self.blend(y, x, color, cov);
                }
            }
        }
    }

    /// Paints an axis-aligned rectangle rotated by `angle` about its center.
    fn rect(&mut self, cy: f32, cx: f32, hh: f32, hw: f32, angle: f32, color: [f32; 3]) {
        let (s, c) = angle.sin_cos();
        let reach = (hh * hh + hw * hw).sqrt() + 1.0;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(self.h);
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(self.w);
        for y in y0..y1 {
            for x in x0..x1 {
                let dy = y as f32 + 0.5 - cy;
                let dx = x as f32 + 0.5 - cx;
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                let cov = (hw + 0.5 - u.abs()).clamp(0.0, 1.0) * (hh + 0.5 - v.abs()).clamp(0.0, 1.0);
                if cov > 0.0 {
                    self.blend(y, x, color, cov);
                }
            }
        }
    }

    fn finish(self) -> ImageRgb {
        ImageRgb::from_clamped(self.h, self.w, self.data).expect("canvas dimensions are positive")
    }
}

/// Dead-leaves image: disks with radius density ∝ r⁻³ on `[2, extent/4]`,
/// painted back to front until the canvas is covered several times over.
pub fn dead_leaves(height: usize, width: usize, seed: u64) -> ImageRgb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = Canvas::new(height, width);
    let (rmin, rmax) = (2.0f64, (height.min(width) as f64 / 4.0).max(3.0));
    let target = 4.0 * (height * width) as f64;
    let mut painted = 0.0;
    while painted < target {
        // inverse CDF of the truncated r^-3 density
        let u: f64 = rng.random();
        let r = (rmin.powi(-2) - u * (rmin.powi(-2) - rmax.powi(-2))).powf(-0.5);
        let cy = rng.random::<f32>() * height as f32;
        let cx = rng.random::<f32>() * width as f32;
        canvas.disk(cy, cx, r as f32, random_color(&mut rng));
        painted += std::f64::consts::PI * r * r;
    }
    canvas.finish()
}

/// Two-color linear gradient in a random direction plus 3 to 6 random disks and rectangles.
pub fn gradient_shapes(height: usize, width: usize, seed: u64) -> ImageRgb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (random_color(&mut rng), random_color(&mut rng));
    let angle: f32 = rng.random::<f32>() * std::f32::consts::TAU;
    let (s, c) = angle.sin_cos();
    let mut canvas = Canvas::new(height, width);
    let n = height * width;
    let half = 0.5 * ((height * height + width * width) as f32).sqrt();
    for y in 0..height {
        for x in 0..width {
            let t = ((x as f32 - width as f32 / 2.0) * c + (y as f32 - height as f32 / 2.0) * s)
                / (2.0 * half)
                + 0.5;
            for ch in 0..3 {
                canvas.data[ch * n + y * width + x] = a[ch] + t * (b[ch] - a[ch]);
            }
        }
    }
    let extent = height.min(width) as f32;
    for _ in 0..rng.random_range(3..=6) {
        let cy = rng.random::<f32>() * height as f32;
        let cx = rng.random::<f32>() * width as f32;
        let color = random_color(&mut rng);
        if rng.random::<bool>() {
            let r = extent * (0.05 + 0.2 * rng.random::<f32>());
            canvas.disk(cy, cx, r, color);
        } else {
            let hh = extent * (0.04 + 0.2 * rng.random::<f32>());
            let hw = extent * (0.04 + 0.2 * rng.random::<f32>());
            let ang = rng.random::<f32>() * std::f32::consts::PI;
            canvas.rect(cy, cx, hh, hw, ang, color);
        }
    }
    canvas.finish()
}

/// `count` images from `generator`, seeded `seed, seed+1, …`.
pub fn corpus(
    generator: fn(usize, usize, u64) -> ImageRgb,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Vec<ImageRgb> {
    (0..count as u64)
        .map(|i| generator(height, width, seed.wrapping_add(i)))
        .collect()
}
