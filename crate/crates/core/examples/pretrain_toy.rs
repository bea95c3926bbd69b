//! Pixel-loss pretraining of a small generator on synthetic patches.
//!
//! cargo run --release --example pretrain_toy -- [iterations] [checkpoint]

use mfsr::networks::GeneratorSpec;
use mfsr::synthetic::{corpus, gradient_shapes};
use mfsr::trainer::{write_trace_csv, TrainConfig, Trainer};

fn main() -> mfsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let out = args.next();

    let config = TrainConfig {
        lr_patch: 16,
        batch_size: 4,
        generator: GeneratorSpec { res_blocks: 2, channels: 32, ..GeneratorSpec::default() },
        ..TrainConfig::default()
    };
    let images = corpus(gradient_shapes, 20, 64, 64, 1);
    let mut t = Trainer::new(config)?;
    let data = t.sampler(&images)?;
    let t0 = std::time::Instant::now();
    for _ in 0..iters {
        let r = t.pretrain_step(&data)?;
        if r.iteration % 25 == 0 {
            println!("{:>5}  pixel {:.5}", r.iteration, r.l_pixel);
        }
    }
    println!("{iters} iterations in {:.1?}", t0.elapsed());
    if let Some(path) = out {
        t.save(&path)?;
        write_trace_csv(&t.trace, format!("{path}.trace.csv"))?;
        println!("saved {path}");
    }
    Ok(())
}
