//! `key = value` training configuration files.
//!
//! Blank lines and `#` comments are ignored. Unknown keys, duplicate keys,
//! unparsable values and out-of-range values are all collected and reported
//! together in one [`Error::Config`].

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::ExtractorSource;
use crate::image::GaussianKernelSpec;
use crate::losses::ContentMode;
use crate::trainer::TrainConfig;

pub const KEYS: [&str; 21] = [
    "scale",
    "lr_patch",
    "batch_size",
    "lr",
    "beta1",
    "pretrain_iters",
    "gan_iters",
    "lr_decay_at",
    "seed",
    "mode",
    "w_adv_total",
    "w_adv_mc",
    "w_adv_color",
    "w_wc",
    "w_high",
    "extractor_source",
    "noise_sigma",
    "blur",
    "res_blocks",
    "gen_channels",
    "low_channel_norm",
];

fn number<T: FromStr>(key: &str, value: &str, problems: &mut Vec<String>) -> Option<T>
where
    T::Err: Display,
{
    match value.parse() {
        Ok(v) => Some(v),
        Err(e) => {
            problems.push(format!("{key}: cannot parse {value:?} ({e})"));
            None
        }
    }
}

fn on_off(key: &str, value: &str, problems: &mut Vec<String>) -> Option<bool> {
    match value {
        "on" | "true" => Some(true),
        "off" | "false" => Some(false),
        _ => {
            problems.push(format!("{key}: expected on or off, got {value:?}"));
            None
        }
    }
}

/// Parses a configuration, starting from [`TrainConfig::default`].
pub fn parse(text: &str) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    let mut problems = Vec::new();
    let mut seen = Vec::<String>::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {}: expected key = value, got {line:?}", n + 1));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            problems.push(format!("line {}: unknown key {key:?}", n + 1));
            continue;
        }
        if seen.iter().any(|k| k == key) {
            problems.push(format!("line {}: duplicate key {key:?}", n + 1));
            continue;
        }
        seen.push(key.to_string());
        let p = &mut problems;
        match key {
            "scale" => {
                if let Some(s) = number(key, value, p) {
                    c.generator.scale = s;
                    c.degradation.scale = s;
                }
            }
            "lr_patch" => c.lr_patch = number(key, value, p).unwrap_or(c.lr_patch),
            "batch_size" => c.batch_size = number(key, value, p).unwrap_or(c.batch_size),
            "lr" => c.lr = number(key, value, p).unwrap_or(c.lr),
            "beta1" => c.beta1 = number(key, value, p).unwrap_or(c.beta1),
            "pretrain_iters" => c.pretrain_iters = number(key, value, p).unwrap_or(c.pretrain_iters),
            "gan_iters" => c.gan_iters = number(key, value, p).unwrap_or(c.gan_iters),
            "lr_decay_at" => c.lr_decay_at = number(key, value, p).unwrap_or(c.lr_decay_at),
            "seed" => c.seed = number(key, value, p).unwrap_or(c.seed),
            "mode" => match ContentMode::parse(value) {
                Some(m) => c.weights.mode = m,
                None => p.push(format!("mode: expected GAN-IMC or GAN-IMCW, got {value:?}")),
            },
            "w_adv_total" => c.weights.w_adv_total = number(key, value, p).unwrap_or(c.weights.w_adv_total),
            "w_adv_mc" => c.weights.w_adv_mc = number(key, value, p).unwrap_or(c.weights.w_adv_mc),
            "w_adv_color" => c.weights.w_adv_color = number(key, value, p).unwrap_or(c.weights.w_adv_color),
            "w_wc" => c.weights.w_wc = number(key, value, p).unwrap_or(c.weights.w_wc),
            "w_high" => c.weights.w_high = number(key, value, p).unwrap_or(c.weights.w_high),
            "extractor_source" => match value.parse() {
                Ok(s) => c.extractor = s,
                Err(e) => p.push(format!("extractor_source: {e}")),
            },
            "noise_sigma" => c.degradation.noise_sigma = number(key, value, p).unwrap_or(c.degradation.noise_sigma),
            "blur" => {
                if let Some(b) = on_off(key, value, p) {
                    c.degradation.blur = b.then(GaussianKernelSpec::default);
                }
            }
            "res_blocks" => c.generator.res_blocks = number(key, value, p).unwrap_or(c.generator.res_blocks),
            "gen_channels" => c.generator.channels = number(key, value, p).unwrap_or(c.generator.channels),
            "low_channel_norm" => {
                if let Some(b) = on_off(key, value, p) {
                    c.weights.low_channel_norm = b;
                }
            }
            _ => unreachable!("key list and match arms agree"),
        }
    }
    if problems.is_empty() {
        problems.extend(c.violations());
    }
    if problems.is_empty() {
        Ok(c)
    } else {
        Err(Error::Config(problems))
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

/// Canonical text form; [`parse`] reads it back to an equal config.
pub fn to_text(c: &TrainConfig) -> String {
    let w = &c.weights;
    let on = |b: bool| if b { "on" } else { "off" };
    let source = match &c.extractor {
        ExtractorSource::Seeded(s) => format!("seeded:{s}"),
        ExtractorSource::Import(p) => p.display().to_string(),
    };
    format!(
        "scale={}\nlr_patch={}\nbatch_size={}\nlr={:e}\nbeta1={}\npretrain_iters={}\ngan_iters={}\n\
         lr_decay_at={}\nseed={}\nmode={}\nw_adv_total={:e}\nw_adv_mc={:e}\nw_adv_color={:e}\nw_wc={:e}\n\
         w_high={:e}\nextractor_source={source}\nnoise_sigma={}\nblur={}\nres_blocks={}\ngen_channels={}\n\
         low_channel_norm={}\n",
        c.generator.scale,
        c.lr_patch,
        c.batch_size,
        c.lr,
        c.beta1,
        c.pretrain_iters,
        c.gan_iters,
        c.lr_decay_at,
        c.seed,
        w.mode.label(),
        w.w_adv_total,
        w.w_adv_mc,
        w.w_adv_color,
        w.w_wc,
        w.w_high,
        c.degradation.noise_sigma,
        on(c.degradation.blur.is_some()),
        c.generator.res_blocks,
        c.generator.channels,
        on(w.low_channel_norm),
    )
}
