//! The `mfsr` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical abort.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::checkpoint;
use crate::config;
use crate::error::{Error, Result};
use crate::features::{ExtractorSource, FeatureExtractor};
use crate::graph::Graph;
use crate::image::{self, degrade, save_gray_png, save_png, DegradationSpec, GaussianKernelSpec, ImageGray, ImageRgb};
use crate::losses::spatial_weight_map;
use crate::metrics::{self, NiqeConfig, NiqeModel, ScoreReport, ScoreRow};
use crate::trainer::{self, Trainer};

#[derive(Parser, Debug)]
#[command(name = "mfsr", version, about = "Multi-feature-discriminator super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Blur, bicubic-downsample and add noise to every PNG of a directory.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, value_enum, default_value_t = OnOff::Off)]
        blur: OnOff,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pixel-loss pretraining of the generator.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Alternating adversarial training.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Super-resolve one PNG or every PNG of a directory.
    Sr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR, NIQE and (with Ma scores) PI per image plus their average.
    Eval {
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        niqe_model: PathBuf,
        #[arg(long)]
        ma: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Fit a NIQE model to a directory of pristine PNGs.
    NiqeFit {
        #[arg(long)]
        pristine: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 96)]
        patch: usize,
    },
    /// Export the spatial weight map of one image as an 8-bit grayscale PNG.
    WeightsMap {
        #[arg(long, default_value = "seeded")]
        extractor: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::NumericalAbort { .. } | Error::NonFinite { .. } | Error::DegenerateFit(_) => 3,
        _ => 2,
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Degrade {
            input,
            out,
            scale,
            noise_sigma,
            blur,
            seed,
        } => {
            let spec = DegradationSpec {
                blur: (blur == OnOff::On).then(GaussianKernelSpec::default),
                scale,
                noise_sigma,
            };
            spec.validate().map_err(|e| Error::Config(vec![e.to_string()]))?;
            degrade_dir(&input, &out, &spec, seed).map(|_| ())
        }
        Command::Pretrain { config, hr, init, out } => train_command(&config, &hr, init.as_deref(), &out, false),
        Command::Train { config, hr, init, out } => train_command(&config, &hr, init.as_deref(), &out, true),
        Command::Sr { model, input, out } => sr_command(&model, &input, &out),
        Command::Eval {
            sr,
            hr,
            niqe_model,
            ma,
            report,
        } => eval_command(&sr, &hr, &niqe_model, ma.as_deref(), &report),
        Command::NiqeFit { pristine, out, patch } => {
            let images: Vec<ImageRgb> = load_dir(&pristine)?.into_iter().map(|(_, im)| im).collect();
            let config = NiqeConfig {
                patch,
                ..NiqeConfig::default()
            };
            let model = metrics::niqe_fit(&images, &config)?;
            info!("fitted on {} patches of {} images", model.patches, model.images);
            model.save(out)
        }
        Command::WeightsMap { extractor, input, out } => {
            let source: ExtractorSource = extractor.parse().map_err(|e| Error::Config(vec![e]))?;
            let extractor = FeatureExtractor::build(&source)?;
            let map = weight_map_image(&extractor, &image::load_png(&input)?)?;
            save_gray_png(&map, out)
        }
    }
}

/// Sorted `(basename, path)` of the PNG files in `dir`.
pub fn png_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Every readable PNG of `dir`; unreadable ones are skipped with a warning.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, ImageRgb)>> {
    let mut out = Vec::new();
    for (name, path) in png_files(dir)? {
        match image::load_png(&path) {
            Ok(im) => out.push((name, im)),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no readable PNG images in {}", dir.display())));
    }
    Ok(out)
}

/// Degrades every PNG of `input` into `out` (same basenames) and writes
/// `manifest.txt`. Image `i` in sorted order uses noise seed `seed + i`.
pub fn degrade_dir(input: &Path, out: &Path, spec: &DegradationSpec, seed: u64) -> Result<usize> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let blur = match &spec.blur {
        Some(k) => format!("gaussian size={} sigma_x={} sigma_y={} normalize={}", k.size, k.sigma_x, k.sigma_y, k.normalize),
        None => "off".into(),
    };
    let mut manifest = format!(
        "scale={}\nnoise_sigma={}\nblur={blur}\nseed={seed}\nresize=bicubic antialiased\n",
        spec.scale, spec.noise_sigma
    );
    let mut written = 0;
    for (i, (name, path)) in png_files(input)?.into_iter().enumerate() {
        let hr = match image::load_png(&path) {
            Ok(im) => im,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let lr = degrade(&hr, spec, seed.wrapping_add(i as u64))?;
        save_png(&lr, out.join(&name))?;
        manifest.push_str(&format!("file={name} {}x{} -> {}x{}\n", hr.width(), hr.height(), lr.width(), lr.height()));
        written += 1;
    }
    if written == 0 {
        return Err(Error::Data(format!("no readable PNG images in {}", input.display())));
    }
    let m = out.join("manifest.txt");
    fs::write(&m, manifest).map_err(|e| Error::io(&m, e))?;
    Ok(written)
}

/// `<out>.trace.csv`, written next to the checkpoint.
pub fn trace_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".trace.csv");
    PathBuf::from(p)
}

fn train_command(config_path: &Path, hr_dir: &Path, init: Option<&Path>, out: &Path, adversarial: bool) -> Result<()> {
    let config = config::load(config_path)?;
    let images: Vec<ImageRgb> = load_dir(hr_dir)?.into_iter().map(|(_, im)| im).collect();
    let mut t = match init {
        Some(p) => {
            let c = checkpoint::read_container(p)?;
            let extractor = FeatureExtractor::build(&config.extractor)?;
            Trainer::from_container(&c, config, extractor)?
        }
        None => {
            if adversarial {
                warn!("no --init given; pretraining from scratch first");
            }
            Trainer::new(config)?
        }
    };
    let data = t.sampler(&images)?;
    let pre = t.config.pretrain_iters.saturating_sub(t.pretrain_done);
    let run = (|| -> Result<()> {
        if !adversarial || init.is_none() {
            info!("pretraining for {pre} iterations");
            t.pretrain(&data, pre)?;
        }
        if adversarial {
            let adv = t.config.gan_iters.saturating_sub(t.adversarial_done);
            info!("adversarial training for {adv} iterations in {} mode", t.config.weights.mode.label());
            t.train_adversarial(&data, adv)?;
        }
        Ok(())
    })();
    let rows: Vec<_> = t
        .trace
        .iter()
        .filter(|r| (r.phase == trainer::Phase::Adversarial) == adversarial)
        .cloned()
        .collect();
    trainer::write_trace_csv(&rows, trace_path(out))?;
    run?;
    t.save(out)
}

fn sr_command(model: &Path, input: &Path, out: &Path) -> Result<()> {
    let g = trainer::load_generator(model)?;
    if input.is_dir() {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (name, im) in load_dir(input)? {
            save_png(&super_resolve(&g, &im)?, out.join(name))?;
        }
        Ok(())
    } else {
        save_png(&super_resolve(&g, &image::load_png(input)?)?, out)
    }
}

pub fn super_resolve(g: &crate::networks::Generator, lr: &ImageRgb) -> Result<ImageRgb> {
    let sr = g.generate(&lr.to_tensor())?;
    ImageRgb::from_tensor(&sr, 0)
}

/// Writes the report with every matched image; unmatched basenames are an error
/// raised after the partial report is on disk.
fn eval_command(sr_dir: &Path, hr_dir: &Path, niqe_model: &Path, ma: Option<&Path>, report: &Path) -> Result<()> {
    let model = NiqeModel::load(niqe_model)?;
    let ma = ma.map(metrics::read_ma_csv).transpose()?;
    let sr = load_dir(sr_dir)?;
    let hr: Vec<(String, PathBuf)> = png_files(hr_dir)?;
    let mut rows = ScoreReport::default();
    let mut gaps = Vec::new();
    for (name, s) in &sr {
        let Some((_, hp)) = hr.iter().find(|(n, _)| n == name) else {
            gaps.push(format!("{name} has no HR counterpart"));
            continue;
        };
        let h = image::load_png(hp)?;
        let psnr = metrics::psnr(s, &h)?;
        let niqe = metrics::niqe_score(s, &model)?;
        let m = match &ma {
            Some(table) => {
                let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
                let v = table.get(name).or_else(|| table.get(stem)).copied();
                if v.is_none() {
                    gaps.push(format!("{name} has no Ma score"));
                }
                v
            }
            None => None,
        };
        rows.rows.push(ScoreRow::new(name.clone(), Some(psnr), Some(niqe), m));
    }
    for (name, _) in &hr {
        if !sr.iter().any(|(n, _)| n == name) {
            gaps.push(format!("{name} has no SR counterpart"));
        }
    }
    rows.write_csv(report)?;
    if gaps.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("unmatched images: {}", gaps.join("; "))))
    }
}

/// Spatial weights of the low tap, min-max scaled to [0, 1]. A spatially
/// uniform map becomes uniform mid-gray.
pub fn weight_map_image(extractor: &FeatureExtractor, image: &ImageRgb) -> Result<ImageGray> {
    let mut g = Graph::<f32>::new();
    let x = g.constant(image.to_tensor());
    let taps = extractor.extract(&mut g, x)?;
    let low = g.value(taps.low);
    let &[_, c, h, w] = low.shape() else {
        return Err(Error::shape("weight_map_image", format!("low tap has shape {:?}", low.shape())));
    };
    let alpha = spatial_weight_map(low.data(), c, h, w)?;
    let (lo, hi) = alpha.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let data = if span > 1e-6 * hi.abs().max(1e-12) {
        alpha.iter().map(|&v| (v - lo) / span).collect()
    } else {
        vec![0.5; alpha.len()]
    };
    ImageGray::from_clamped(h, w, data)
}
