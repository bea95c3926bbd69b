//! Discriminator, adversarial, pixel, content and weighted-content losses,
//! and their weighted combinations.
//!
//! All graph losses return a scalar [`Var`]; the plain `f64` combiners
//! [`combine_adv`] and [`combine_total`] exist for reporting and tests.

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::graph::{Graph, Var};
use crate::params::Binding;
use crate::tensor::Scalar;

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContentMode {
    /// Plain feature-space MSE (`GAN-IMC`).
    Content,
    /// Feature MSE with per-location saliency weights on the low tap (`GAN-IMCW`).
    Weighted,
}

impl ContentMode {
    pub fn label(self) -> &'static str {
        match self {
            ContentMode::Content => "GAN-IMC",
            ContentMode::Weighted => "GAN-IMCW",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "GAN-IMC" => Some(ContentMode::Content),
            "GAN-IMCW" => Some(ContentMode::Weighted),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_adv_mc: f64,
    pub w_adv_color: f64,
    pub w_high: f64,
    pub w_adv_total: f64,
    pub w_wc: f64,
    pub mode: ContentMode,
    /// Also divide the low-tap term by its channel count.
    pub low_channel_norm: bool,
    pub disc_reduction: Reduction,
    pub gen_reduction: Reduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_adv_mc: 1e-1,
            w_adv_color: 4e-3,
            w_high: 1e-5,
            w_adv_total: 1e-3,
            w_wc: 2e-4,
            mode: ContentMode::Weighted,
            low_channel_norm: false,
            disc_reduction: Reduction::Mean,
            gen_reduction: Reduction::Sum,
        }
    }
}

impl LossWeights {
    /// Pixel loss only.
    pub fn pretraining() -> Self {
        Self {
            w_adv_total: 0.0,
            w_wc: 0.0,
            ..Self::default()
        }
    }

    /// Image discriminator only: the SRGAN-MSE baseline configuration.
    pub fn image_only(self) -> Self {
        Self {
            w_adv_mc: 0.0,
            w_adv_color: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("w_adv_mc", self.w_adv_mc),
            ("w_adv_color", self.w_adv_color),
            ("w_high", self.w_high),
            ("w_adv_total", self.w_adv_total),
            ("w_wc", self.w_wc),
        ];
        let problems: Vec<String> = fields
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(k, v)| format!("{k} must be a finite value ≥ 0, got {v}"))
            .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

fn reduce<T: Scalar>(g: &mut Graph<T>, x: Var, r: Reduction) -> Var {
    match r {
        Reduction::Mean => g.mean(x),
        Reduction::Sum => g.sum(x),
    }
}

fn clamp_prob<T: Scalar>(g: &mut Graph<T>, p: Var) -> Var {
    g.clamp(p, T::of(PROB_EPS), T::of(1.0 - PROB_EPS))
}

/// Mean of `(a − b)²` over every element, i.e. the per-image `1/(h·w·c)`
/// normalized squared error averaged over the batch.
pub fn pixel_loss<T: Scalar>(g: &mut Graph<T>, sr: Var, hr: Var) -> Result<Var> {
    let d = g.sub(sr, hr)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `−ln d_real − ln(1 − d_fake)`, reduced over the batch.
pub fn discriminator_loss<T: Scalar>(
    g: &mut Graph<T>,
    d_real: Var,
    d_fake: Var,
    reduction: Reduction,
) -> Result<Var> {
    let r = clamp_prob(g, d_real);
    let f = clamp_prob(g, d_fake);
    let lr = g.ln(r);
    let one_minus = g.affine(f, T::of(-1.0), T::one());
    let lf = g.ln(one_minus);
    let both = g.add(lr, lf)?;
    let s = reduce(g, both, reduction);
    Ok(g.scale(s, T::of(-1.0)))
}

/// `−Σ ln d_fake` over the batch (or its mean under [`Reduction::Mean`]).
pub fn generator_adv_loss<T: Scalar>(g: &mut Graph<T>, d_fake: Var, reduction: Reduction) -> Var {
    let f = clamp_prob(g, d_fake);
    let l = g.ln(f);
    let s = reduce(g, l, reduction);
    g.scale(s, T::of(-1.0))
}

fn weighted_sum<T: Scalar>(g: &mut Graph<T>, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let t = if w == 1.0 { v } else { g.scale(v, T::of(w)) };
        acc = Some(match acc {
            None => t,
            Some(a) => g.add(a, t)?,
        });
    }
    acc.ok_or_else(|| Error::contract("weighted_sum", "no terms"))
}

/// `l_img + w_adv_mc·l_mc + w_adv_color·l_color`.
pub fn total_adv_loss<T: Scalar>(g: &mut Graph<T>, l_img: Var, l_mc: Var, l_color: Var, w: &LossWeights) -> Result<Var> {
    weighted_sum(g, &[(l_img, 1.0), (l_mc, w.w_adv_mc), (l_color, w.w_adv_color)])
}

/// `l_pixel + w_adv_total·l_adv + w_wc·l_wc`.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, l_pixel: Var, l_adv: Var, l_wc: Var, w: &LossWeights) -> Result<Var> {
    weighted_sum(g, &[(l_pixel, 1.0), (l_adv, w.w_adv_total), (l_wc, w.w_wc)])
}

pub fn combine_adv(l_img: f64, l_mc: f64, l_color: f64, w: &LossWeights) -> f64 {
    l_img + w.w_adv_mc * l_mc + w.w_adv_color * l_color
}

pub fn combine_total(l_pixel: f64, l_adv: f64, l_wc: f64, w: &LossWeights) -> f64 {
    l_pixel + w.w_adv_total * l_adv + w.w_wc * l_wc
}

/// Saliency weights of an N×C×H×W feature batch: the channel sum at each
/// location, L2-normalized per item. Shape N×1×H×W. An all-zero item falls back
/// to the uniform map `1/√(H·W)`.
pub fn spatial_weights<T: Scalar>(g: &mut Graph<T>, features: Var) -> Result<Var> {
    let f = g.channel_sum(features)?;
    Ok(g.normalize_per_sample(f))
}

/// Plain-value version of [`spatial_weights`] for a single C×H×W map, row-major H×W.
pub fn spatial_weight_map(features: &[f32], c: usize, h: usize, w: usize) -> Result<Vec<f32>> {
    if features.len() != c * h * w || c == 0 || h == 0 || w == 0 {
        return Err(Error::shape(
            "spatial_weights",
            format!("{} values for {c}×{h}×{w}", features.len()),
        ));
    }
    let t = crate::tensor::Tensor::new([1, c, h, w], features.to_vec())?;
    let mut g = Graph::<f32>::new();
    let v = g.constant(t);
    let a = spatial_weights(&mut g, v)?;
    Ok(g.value(a).data().to_vec())
}

/// `(1/(W·H)) Σ (α_SR·φ(SR) − α_HR·φ(HR))²` averaged over the batch, with
/// `α ≡ 1` when `weighted` is false.
fn low_term<T: Scalar>(
    g: &mut Graph<T>,
    low_sr: Var,
    low_hr: Var,
    weighted: bool,
    channel_norm: bool,
) -> Result<Var> {
    let (n, c, h, w) = g.value(low_sr).dims4()?;
    let d = if weighted {
        let a_sr = spatial_weights(g, low_sr)?;
        let a_hr = spatial_weights(g, low_hr)?;
        let ws = g.mul_spatial(low_sr, a_sr)?;
        let wh = g.mul_spatial(low_hr, a_hr)?;
        g.sub(ws, wh)?
    } else {
        g.sub(low_sr, low_hr)?
    };
    let sq = g.square(d);
    let s = g.sum(sq);
    let mut denom = (n * h * w) as f64;
    if channel_norm {
        denom *= c as f64;
    }
    Ok(g.scale(s, T::of(1.0 / denom)))
}

/// Content loss from already-extracted taps: `L_low + w_high·L_high`.
pub fn content_from_taps<T: Scalar>(
    g: &mut Graph<T>,
    sr: crate::features::Taps,
    hr: crate::features::Taps,
    weighted: bool,
    w: &LossWeights,
) -> Result<Var> {
    if g.value(sr.low).shape() != g.value(hr.low).shape() {
        return Err(Error::shape(
            "content_loss",
            format!("{:?} vs {:?}", g.value(sr.low).shape(), g.value(hr.low).shape()),
        ));
    }
    let low = low_term(g, sr.low, hr.low, weighted, w.low_channel_norm)?;
    let dh = g.sub(sr.high, hr.high)?;
    let sq = g.square(dh);
    let high = g.mean(sq);
    weighted_sum(g, &[(low, 1.0), (high, w.w_high)])
}

fn content_impl<T: Scalar>(
    g: &mut Graph<T>,
    extractor: &FeatureExtractor,
    bind: Option<&Binding>,
    sr: Var,
    hr: Var,
    weighted: bool,
    w: &LossWeights,
) -> Result<Var> {
    if g.value(sr).shape() != g.value(hr).shape() {
        return Err(Error::shape(
            "content_loss",
            format!("{:?} vs {:?}", g.value(sr).shape(), g.value(hr).shape()),
        ));
    }
    let owned;
    let bind = match bind {
        Some(b) => b,
        None => {
            owned = extractor.bind(g);
            &owned
        }
    };
    let ts = extractor.extract_bound(g, bind, sr)?;
    let th = extractor.extract_bound(g, bind, hr)?;
    content_from_taps(g, ts, th, weighted, w)
}

/// Weighted content loss. Gradients reach SR through both its features and its weights.
pub fn weighted_content_loss<T: Scalar>(
    g: &mut Graph<T>,
    extractor: &FeatureExtractor,
    sr: Var,
    hr: Var,
    w: &LossWeights,
) -> Result<Var> {
    content_impl(g, extractor, None, sr, hr, true, w)
}

/// Unweighted content loss (`α ≡ 1`).
pub fn content_loss<T: Scalar>(
    g: &mut Graph<T>,
    extractor: &FeatureExtractor,
    sr: Var,
    hr: Var,
    w: &LossWeights,
) -> Result<Var> {
    content_impl(g, extractor, None, sr, hr, false, w)
}

/// Content or weighted content loss according to `w.mode`, reusing an extractor binding.
pub fn mode_content_loss<T: Scalar>(
    g: &mut Graph<T>,
    extractor: &FeatureExtractor,
    bind: &Binding,
    sr: Var,
    hr: Var,
    w: &LossWeights,
) -> Result<Var> {
    content_impl(g, extractor, Some(bind), sr, hr, w.mode == ContentMode::Weighted, w)
}
