//! Pretrain a small generator, then run the alternating adversarial loop on
//! synthetic dead-leaves images and print the loss components.
//!
//! cargo run --release --example adversarial_toy -- [iterations] [GAN-IMC|GAN-IMCW]

use mfsr::losses::ContentMode;
use mfsr::networks::GeneratorSpec;
use mfsr::synthetic::{corpus, dead_leaves};
use mfsr::trainer::{Trainer, TrainConfig};

fn main() -> mfsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let mode = args.next().and_then(|a| ContentMode::parse(&a)).unwrap_or(ContentMode::Weighted);

    let mut config = TrainConfig {
        lr_patch: 8,
        batch_size: 2,
        generator: GeneratorSpec {
            res_blocks: 2,
            channels: 32,
            ..GeneratorSpec::default()
        },
        ..TrainConfig::default()
    };
    config.weights.mode = mode;

    let images = corpus(dead_leaves, 12, 64, 64, 7);
    let mut trainer = Trainer::new(config)?;
    let data = trainer.sampler(&images)?;

    let t0 = std::time::Instant::now();
    trainer.pretrain(&data, 50)?;
    println!("pretrain: pixel loss {:.5} -> {:.5} ({:.1?})",
        trainer.trace[0].l_pixel, trainer.trace.last().unwrap().l_pixel, t0.elapsed());

    let t0 = std::time::Instant::now();
    println!("{:>4} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}  D range", "it", "pixel", "adv_img", "adv_mc", "adv_col", "wc", "total");
    for _ in 0..iters {
        let r = trainer.adversarial_step(&data)?;
        let (lo, hi) = r.d_range.unwrap_or((f64::NAN, f64::NAN));
        println!(
            "{:>4} {:>9.5} {:>9.4} {:>9.4} {:>9.4} {:>9.3e} {:>9.5}  [{:e}, 1-{:e}]",
            r.iteration, r.l_pixel, r.l_adv_img, r.l_adv_mc, r.l_adv_color, r.l_wc, r.l_total, lo, 1.0 - hi
        );
    }
    println!("{} adversarial iterations in {:.1?} ({})", iters, t0.elapsed(), mode.label());
    Ok(())
}
