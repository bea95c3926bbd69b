//! PSNR, NIQE and the perceptual index.
//!
//! NIQE follows the standard construction: grayscale on the [0, 255] scale,
//! MSCN coefficients from a 7×7 Gaussian window (σ = 7/6), 18 AGGD features
//! per 96×96 patch at full and half resolution, and a Mahalanobis-style
//! distance between the test image's feature distribution and a multivariate
//! Gaussian fitted to sharp pristine patches.

use std::path::Path;
use std::sync::OnceLock;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::image::{bicubic_resize, ImageGray, ImageRgb};
use crate::tensor::Tensor;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio over all RGB values with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(
            "psnr",
            format!("{}×{} vs {}×{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `((10 − ma) + niqe) / 2`.
pub fn pi_score(ma: f64, niqe: f64) -> f64 {
    ((10.0 - ma) + niqe) / 2.0
}

/// Luma on the [0, 255] scale with the Rec.601 weights NIQE models are built on.
pub fn luma_255(image: &ImageRgb) -> Vec<f64> {
    let n = image.height() * image.width();
    let d = image.data();
    (0..n)
        .map(|i| 255.0 * (0.2989 * d[i] as f64 + 0.5870 * d[n + i] as f64 + 0.1140 * d[2 * n + i] as f64))
        .collect()
}

const WINDOW: usize = 7;

fn gaussian_window() -> &'static [f64; WINDOW * WINDOW] {
    static W: OnceLock<[f64; WINDOW * WINDOW]> = OnceLock::new();
    W.get_or_init(|| {
        let sigma = 7.0 / 6.0;
        let r = (WINDOW / 2) as isize;
        let mut w = [0.0; WINDOW * WINDOW];
        for y in -r..=r {
            for x in -r..=r {
                w[((y + r) as usize) * WINDOW + (x + r) as usize] =
                    (-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        w
    })
}

/// Windowed weighted average with replicated borders.
fn local_filter(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_window();
    let r = (WINDOW / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let mut s = 0.0;
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let row = &x[yy * w..(yy + 1) * w];
                let krow = &k[((dy + r) as usize) * WINDOW..][..WINDOW];
                for dx in -r..=r {
                    let xi = (xx as isize + dx).clamp(0, w as isize - 1) as usize;
                    s += krow[(dx + r) as usize] * row[xi];
                }
            }
            out[y * w + xx] = s;
        }
    }
    out
}

/// MSCN coefficients `(I − μ)/(σ + 1)` and the local deviation map σ.
fn mscn_planes(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mu = local_filter(x, h, w);
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mu2 = local_filter(&sq, h, w);
    let sigma: Vec<f64> = mu2.iter().zip(&mu).map(|(a, m)| (a - m * m).abs().sqrt()).collect();
    let coeffs = x
        .iter()
        .zip(&mu)
        .zip(&sigma)
        .map(|((v, m), s)| (v - m) / (s + 1.0))
        .collect();
    (coeffs, sigma)
}

/// MSCN map of a gray image in [0, 1], computed on the [0, 255] scale. Row-major, same extent.
pub fn mscn(gray: &ImageGray) -> Result<Vec<f64>> {
    if gray.height() < WINDOW || gray.width() < WINDOW {
        return Err(Error::contract(
            "mscn",
            format!("{}×{} is smaller than the {WINDOW}×{WINDOW} window", gray.height(), gray.width()),
        ));
    }
    let x: Vec<f64> = gray.data().iter().map(|&v| 255.0 * v as f64).collect();
    Ok(mscn_planes(&x, gray.height(), gray.width()).0)
}

/// Asymmetric generalized Gaussian parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggdParams {
    pub alpha: f64,
    pub beta_l: f64,
    pub beta_r: f64,
    /// Mean of the distribution.
    pub eta: f64,
}

const SHAPE_MIN: f64 = 0.2;
const SHAPE_STEP: f64 = 0.001;

/// `(α, r(α))` with `r(α) = Γ(2/α)² / (Γ(1/α)·Γ(3/α))` on `α = 0.2, 0.201, …, 10`.
fn ratio_table() -> &'static [(f64, f64)] {
    static T: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    T.get_or_init(|| {
        (0..=9800)
            .map(|i| {
                let a = SHAPE_MIN + i as f64 * SHAPE_STEP;
                (a, gamma(2.0 / a).powi(2) / (gamma(1.0 / a) * gamma(3.0 / a)))
            })
            .collect()
    })
}

pub const AGGD_MIN_SAMPLES: usize = 100;

/// Moment-matching AGGD fit.
pub fn aggd_fit(samples: &[f64]) -> Result<AggdParams> {
    if samples.len() < AGGD_MIN_SAMPLES {
        return Err(Error::DegenerateFit(format!(
            "{} samples, need at least {AGGD_MIN_SAMPLES}",
            samples.len()
        )));
    }
    aggd_fit_unchecked(samples)
}

fn aggd_fit_unchecked(samples: &[f64]) -> Result<AggdParams> {
    let (mut sl, mut nl, mut sr, mut nr, mut abs, mut sq) = (0.0, 0usize, 0.0, 0usize, 0.0, 0.0);
    for &v in samples {
        if v < 0.0 {
            sl += v * v;
            nl += 1;
        } else if v > 0.0 {
            sr += v * v;
            nr += 1;
        }
        abs += v.abs();
        sq += v * v;
    }
    let first = samples[0];
    if samples.iter().all(|&v| v == first) || sq == 0.0 {
        return Err(Error::DegenerateFit("all samples are equal".into()));
    }
    let n = samples.len() as f64;
    let left = if nl > 0 { (sl / nl as f64).sqrt() } else { 0.0 };
    let right = if nr > 0 { (sr / nr as f64).sqrt() } else { 0.0 };
    if right == 0.0 {
        return Err(Error::DegenerateFit("no positive samples".into()));
    }
    let gh = left / right;
    let rhat = (abs / n).powi(2) / (sq / n);
    let rnorm = rhat * (gh.powi(3) + 1.0) * (gh + 1.0) / (gh * gh + 1.0).powi(2);
    let &(alpha, _) = ratio_table()
        .iter()
        .min_by(|a, b| (a.1 - rnorm).powi(2).total_cmp(&(b.1 - rnorm).powi(2)))
        .expect("non-empty table");
    let k = (gamma(1.0 / alpha) / gamma(3.0 / alpha)).sqrt();
    let (beta_l, beta_r) = (left * k, right * k);
    let eta = (beta_r - beta_l) * gamma(2.0 / alpha) / gamma(1.0 / alpha);
    Ok(AggdParams {
        alpha,
        beta_l,
        beta_r,
        eta,
    })
}

pub const FEATURES_PER_SCALE: usize = 18;
pub const FEATURES: usize = 2 * FEATURES_PER_SCALE;

/// Neighbour offsets `(dy, dx)` for the pairwise products: horizontal, vertical, two diagonals.
const SHIFTS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// 18 features of an MSCN block (row-major `size×size`); pairwise shifts wrap within the block.
fn block_features(block: &[f64], size: usize, out: &mut Vec<f64>) -> Result<()> {
    let p = aggd_fit_unchecked(block)?;
    out.push(p.alpha);
    out.push((p.beta_l + p.beta_r) / 2.0);
    let mut pair = vec![0.0; block.len()];
    for (dy, dx) in SHIFTS {
        for y in 0..size {
            let sy = (y as isize - dy).rem_euclid(size as isize) as usize;
            for x in 0..size {
                let sx = (x as isize - dx).rem_euclid(size as isize) as usize;
                pair[y * size + x] = block[y * size + x] * block[sy * size + sx];
            }
        }
        let q = aggd_fit_unchecked(&pair)?;
        out.extend_from_slice(&[q.alpha, q.eta, q.beta_l, q.beta_r]);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NiqeConfig {
    pub patch: usize,
    /// Fit-time patches are kept when their mean local deviation reaches this
    /// fraction of the corpus maximum.
    pub sharpness_threshold: f64,
    pub ridge: f64,
}

impl Default for NiqeConfig {
    fn default() -> Self {
        Self {
            patch: 96,
            sharpness_threshold: 0.75,
            ridge: 1e-6,
        }
    }
}

/// Per-patch features of one image and each patch's sharpness.
struct PatchFeatures {
    features: Vec<Vec<f64>>,
    sharpness: Vec<f64>,
}

fn image_patch_features(image: &ImageRgb, patch: usize) -> Result<PatchFeatures> {
    if !patch.is_multiple_of(2) || patch < 2 * WINDOW {
        return Err(Error::contract("niqe", format!("patch size {patch} must be even and ≥ {}", 2 * WINDOW)));
    }
    let (rows, cols) = (image.height() / patch, image.width() / patch);
    if rows == 0 || cols == 0 {
        return Err(Error::contract(
            "niqe",
            format!("{}×{} image holds no {patch}×{patch} patch", image.height(), image.width()),
        ));
    }
    let (h, w) = (rows * patch, cols * patch);
    let cropped = image.crop(0, 0, h, w)?;
    let luma = luma_255(&cropped);
    let mut features = vec![Vec::with_capacity(FEATURES); rows * cols];
    let mut sharpness = vec![0.0; rows * cols];
    let mut plane = luma;
    let (mut sh, mut sw, mut sp) = (h, w, patch);
    for scale in 0..2 {
        let (coeffs, sigma) = mscn_planes(&plane, sh, sw);
        let mut block = vec![0.0; sp * sp];
        for br in 0..rows {
            for bc in 0..cols {
                let mut sig = 0.0;
                for y in 0..sp {
                    let src = (br * sp + y) * sw + bc * sp;
                    block[y * sp..(y + 1) * sp].copy_from_slice(&coeffs[src..src + sp]);
                    sig += sigma[src..src + sp].iter().sum::<f64>();
                }
                let idx = br * cols + bc;
                if scale == 0 {
                    sharpness[idx] = sig / (sp * sp) as f64;
                }
                block_features(&block, sp, &mut features[idx])?;
            }
        }
        if scale == 0 {
            let gray = ImageGray::from_clamped(sh, sw, plane.iter().map(|&v| (v / 255.0) as f32).collect())?;
            let half = bicubic_resize(&gray, 0.5, true)?;
            plane = half.data().iter().map(|&v| 255.0 * v as f64).collect();
            sh = half.height();
            sw = half.width();
            sp /= 2;
        }
    }
    Ok(PatchFeatures { features, sharpness })
}

fn mean_cov(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mu = DVector::zeros(d);
    for r in rows {
        mu += DVector::from_column_slice(r);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    if n > 1 {
        for r in rows {
            let c = DVector::from_column_slice(r) - &mu;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
    }
    (mu, cov)
}

/// Pristine-patch feature model.
#[derive(Clone, Debug, PartialEq)]
pub struct NiqeModel {
    /// Feature mean, length [`FEATURES`].
    pub mu: Vec<f32>,
    /// Feature covariance, row-major `FEATURES×FEATURES`.
    pub sigma: Vec<f32>,
    pub patch: usize,
    pub images: usize,
    pub patches: usize,
}

/// Fits a model to `images`. Needs at least 5 images, each at least two patches on both axes.
pub fn niqe_fit(images: &[ImageRgb], config: &NiqeConfig) -> Result<NiqeModel> {
    if images.len() < 5 {
        return Err(Error::Data(format!("NIQE fit needs at least 5 images, got {}", images.len())));
    }
    let need = 2 * config.patch;
    if let Some((i, im)) = images.iter().enumerate().find(|(_, im)| im.height() < need || im.width() < need) {
        return Err(Error::Data(format!(
            "image {i} is {}×{}; NIQE fitting needs at least {need}×{need}",
            im.height(),
            im.width()
        )));
    }
    let per_image = images
        .iter()
        .map(|im| image_patch_features(im, config.patch))
        .collect::<Result<Vec<_>>>()?;
    let max_sharp = per_image
        .iter()
        .flat_map(|p| p.sharpness.iter().copied())
        .fold(0.0, f64::max);
    let threshold = config.sharpness_threshold * max_sharp;
    let kept: Vec<Vec<f64>> = per_image
        .into_iter()
        .flat_map(|p| {
            p.features
                .into_iter()
                .zip(p.sharpness)
                .filter(|(_, s)| *s > 0.0 && *s >= threshold)
                .map(|(f, _)| f)
        })
        .collect();
    if kept.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "{} patch(es) passed sharpness selection; need at least 2",
            kept.len()
        )));
    }
    let (mu, cov) = mean_cov(&kept);
    let mut sigma = vec![0.0f32; FEATURES * FEATURES];
    for i in 0..FEATURES {
        for j in 0..FEATURES {
            // symmetrize exactly before rounding to f32
            sigma[i * FEATURES + j] = (0.5 * (cov[(i, j)] + cov[(j, i)])) as f32;
        }
    }
    Ok(NiqeModel {
        mu: mu.iter().map(|&v| v as f32).collect(),
        sigma,
        patch: config.patch,
        images: images.len(),
        patches: kept.len(),
    })
}

impl NiqeModel {
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(FEATURES, FEATURES, self.sigma.iter().map(|&v| v as f64))
    }

    /// Rank of the covariance plus `ridge·I`, by singular values above `1e-12·max`.
    pub fn ridged_rank(&self, ridge: f64) -> usize {
        let m = self.covariance() + DMatrix::identity(FEATURES, FEATURES) * ridge;
        let sv = m.singular_values();
        let max = sv.max();
        sv.iter().filter(|&&s| s > 1e-12 * max).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors = vec![
            ("mu".to_string(), Tensor::new([FEATURES], self.mu.clone())?),
            ("sigma".to_string(), Tensor::new([FEATURES, FEATURES], self.sigma.clone())?),
        ];
        let meta = format!(
            "kind=niqe_model\npatch={}\nimages={}\npatches={}\n",
            self.patch, self.images, self.patches
        );
        checkpoint::write_container(path, &tensors, 0, &meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = checkpoint::read_container(path)?;
        let mu = c.tensor("mu")?;
        let sigma = c.tensor("sigma")?;
        if mu.shape() != [FEATURES] || sigma.shape() != [FEATURES, FEATURES] {
            return Err(Error::Import(vec![format!(
                "NIQE model tensors have shapes {:?} and {:?}",
                mu.shape(),
                sigma.shape()
            )]));
        }
        let meta = |k: &str| c.config_value(k).and_then(|v| v.parse::<usize>().ok());
        Ok(Self {
            mu: mu.data().to_vec(),
            sigma: sigma.data().to_vec(),
            patch: meta("patch").unwrap_or(96),
            images: meta("images").unwrap_or(0),
            patches: meta("patches").unwrap_or(0),
        })
    }
}

/// NIQE score of `image` against `model`, using every patch of the image.
pub fn niqe_score(image: &ImageRgb, model: &NiqeModel) -> Result<f64> {
    niqe_score_with(image, model, NiqeConfig::default().ridge)
}

pub fn niqe_score_with(image: &ImageRgb, model: &NiqeModel, ridge: f64) -> Result<f64> {
    let pf = image_patch_features(image, model.patch)?;
    let (mu_d, cov_d) = mean_cov(&pf.features);
    let mu_p = DVector::from_iterator(FEATURES, model.mu.iter().map(|&v| v as f64));
    let pooled = (model.covariance() + cov_d) * 0.5 + DMatrix::identity(FEATURES, FEATURES) * ridge;
    let d = mu_p - mu_d;
    let solved = match pooled.clone().cholesky() {
        Some(ch) => ch.solve(&d),
        None => pooled
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::DegenerateFit(format!("pooled covariance: {e}")))?
            * &d,
    };
    let q = d.dot(&solved);
    if !q.is_finite() {
        return Err(Error::NonFinite {
            context: "NIQE distance".into(),
        });
    }
    Ok(q.max(0.0).sqrt())
}

/// One row of an evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub name: String,
    pub psnr_db: Option<f64>,
    pub niqe: Option<f64>,
    pub ma: Option<f64>,
    pub pi: Option<f64>,
}

impl ScoreRow {
    /// Fills `pi` from `ma` and `niqe` when both are present.
    pub fn new(name: impl Into<String>, psnr_db: Option<f64>, niqe: Option<f64>, ma: Option<f64>) -> Self {
        let pi = match (ma, niqe) {
            (Some(m), Some(n)) => Some(pi_score(m, n)),
            _ => None,
        };
        Self {
            name: name.into(),
            psnr_db,
            niqe,
            ma,
            pi,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl ScoreReport {
    /// Column means over the rows that have a value, reported as the `AVE` row.
    pub fn average(&self) -> ScoreRow {
        ScoreRow {
            name: "AVE".into(),
            psnr_db: mean_of(self.rows.iter().map(|r| r.psnr_db)),
            niqe: mean_of(self.rows.iter().map(|r| r.niqe)),
            ma: mean_of(self.rows.iter().map(|r| r.ma)),
            pi: mean_of(self.rows.iter().map(|r| r.pi)),
        }
    }

    /// CSV with header `name,psnr_db,niqe,ma,pi`; absent values are empty cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["name", "psnr_db", "niqe", "ma", "pi"]).map_err(csv_err)?;
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in self.rows.iter().chain(std::iter::once(&self.average())) {
            w.write_record([r.name.clone(), cell(r.psnr_db), cell(r.niqe), cell(r.ma), cell(r.pi)])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `name,ma` CSV (header optional).
pub fn read_ma_csv(path: impl AsRef<Path>) -> Result<IndexMap<String, f64>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = IndexMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if rec.len() < 2 {
            return Err(Error::Data(format!("{}: line {} has fewer than 2 fields", path.display(), i + 1)));
        }
        match rec[1].parse::<f64>() {
            Ok(v) => {
                out.insert(rec[0].to_string(), v);
            }
            Err(_) if i == 0 => {} // header
            Err(_) => {
                return Err(Error::Data(format!(
                    "{}: line {}: bad Ma value {:?}",
                    path.display(),
                    i + 1,
                    &rec[1]
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn psnr_closed_forms() {
        let a = ImageRgb::filled(4, 4, 0.5).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = ImageRgb::filled(4, 4, 0.6).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn pi_closed_forms() {
        assert_eq!(pi_score(10.0, 0.0), 0.0);
        assert_eq!(pi_score(0.0, 10.0), 10.0);
        assert!((pi_score(8.999, 3.081) - 2.041).abs() < 5e-4);
    }

    #[test]
    fn mscn_of_constant_is_zero() {
        let g = ImageGray::filled(20, 24, 0.4).unwrap();
        let m = mscn(&g).unwrap();
        assert_eq!(m.len(), 20 * 24);
        assert!(m.iter().all(|v| v.abs() < 1e-6));
        assert!(mscn(&ImageGray::filled(5, 30, 0.4).unwrap()).is_err());
    }

    #[test]
    fn aggd_gaussian_and_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = Normal::new(0.0, 1.0).unwrap();
        let s: Vec<f64> = (0..20_000).map(|_| n.sample(&mut rng)).collect();
        let p = aggd_fit(&s).unwrap();
        assert!((p.alpha - 2.0).abs() < 0.15, "{p:?}");
        let skew: Vec<f64> = s.iter().map(|&v| if v > 0.0 { 2.0 * v } else { v }).collect();
        let q = aggd_fit(&skew).unwrap();
        assert!(q.beta_r > q.beta_l);
        assert!(matches!(aggd_fit(&[1.0; 200]), Err(Error::DegenerateFit(_))));
        assert!(matches!(aggd_fit(&[1.0; 10]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn report_average_and_pi_presence() {
        let rep = ScoreReport {
            rows: vec![
                ScoreRow::new("a", Some(30.0), Some(3.081), Some(8.999)),
                ScoreRow::new("b", Some(20.0), Some(5.0), None),
            ],
        };
        assert!(rep.rows[1].pi.is_none());
        let ave = rep.average();
        assert_eq!(ave.psnr_db, Some(25.0));
        assert!((ave.pi.unwrap() - 2.041).abs() < 1e-12);
    }
}
