//! Saliency weights of the low feature tap, exported as a gray map
//! next to the input image.
//!
//! cargo run --release --example weight_map -- [out_dir]

use mfsr::cli::weight_map_image;
use mfsr::features::FeatureExtractor;
use mfsr::image::{save_gray_png, save_png};
use mfsr::synthetic::dead_leaves;

fn main() -> mfsr::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "weight_map_out".into());
    std::fs::create_dir_all(&out).map_err(|e| mfsr::Error::io(&out, e))?;
    let extractor = FeatureExtractor::seeded(0);
    let im = dead_leaves(128, 128, 4);
    let map = weight_map_image(&extractor, &im)?;
    save_png(&im, format!("{out}/input.png"))?;
    save_gray_png(&map, format!("{out}/alpha.png"))?;

    let mean = map.mean();
    let bright = map.data().iter().filter(|&&v| v > 0.5).count();
    println!("alpha map {}x{} (input {}x{}), mean {mean:.3}, {bright} cells above mid-gray",
        map.width(), map.height(), im.width(), im.height());
    Ok(())
}
