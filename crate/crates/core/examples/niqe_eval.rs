//! Fit a NIQE model on synthetic pristine images, then score clean, noisy and
//! blurred versions of held-out images. PI uses a fixed Ma score for illustration.
//!
//! cargo run --release --example niqe_eval

use mfsr::image::{add_gaussian_noise, blur, gaussian_kernel, GaussianKernelSpec};
use mfsr::metrics::{niqe_fit, niqe_score, NiqeConfig, ScoreReport, ScoreRow};
use mfsr::synthetic::{corpus, dead_leaves};

fn main() -> mfsr::Result<()> {
    let pristine = corpus(dead_leaves, 20, 288, 288, 900);
    let t0 = std::time::Instant::now();
    let model = niqe_fit(&pristine, &NiqeConfig::default())?;
    println!("model from {} patches of {} images ({:.1?})", model.patches, model.images, t0.elapsed());

    let kernel = gaussian_kernel(&GaussianKernelSpec { size: 19, sigma_x: 3.0, sigma_y: 3.0, ..GaussianKernelSpec::default() })?;
    let mut report = ScoreReport::default();
    for (i, im) in corpus(dead_leaves, 4, 192, 192, 901).iter().enumerate() {
        let variants = [
            ("clean", im.clone()),
            ("noisy", add_gaussian_noise(im, 0.1, 5000 + i as u64)),
            ("blurred", blur(im, &kernel)?),
        ];
        for (kind, v) in variants {
            report.rows.push(ScoreRow::new(format!("img{i}_{kind}"), None, Some(niqe_score(&v, &model)?), Some(5.0)));
        }
    }
    for r in report.rows.iter().chain(std::iter::once(&report.average())) {
        println!("{:>14}  niqe {:7.3}  pi {:7.3}", r.name, r.niqe.unwrap_or(f64::NAN), r.pi.unwrap_or(f64::NAN));
    }
    Ok(())
}
