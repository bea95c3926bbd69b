//! Print the layer listing, feature-map extents and parameter count of each
//! discriminator, and score a random batch with each.
//!
//! cargo run --release --example discriminator_tables -- [extent]

use mfsr::image::{batch_tensor, random_image, to_gray, ImageRgb};
use mfsr::networks::{Discriminator, DiscriminatorKind, DiscriminatorSpec};

fn main() -> mfsr::Result<()> {
    let extent: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let rgb: Vec<ImageRgb> = (0..2).map(|s| random_image(extent, extent, s)).collect();
    for kind in [DiscriminatorKind::Image, DiscriminatorKind::Morphological, DiscriminatorKind::Color] {
        let d = Discriminator::new(DiscriminatorSpec::new(kind, extent), 0)?;
        let params: usize = d.params().trainable().map(|(_, t)| t.len()).sum();
        println!("== {} ({} input channels, {params} trainable parameters)", kind.name(), kind.input_channels());
        print!("{}", d.spec_dump());
        println!("extents {:?}, flatten {}", d.spec().extents(), d.spec().flatten_size());
        let x = if kind.input_channels() == 1 {
            batch_tensor(&rgb.iter().map(to_gray).collect::<Vec<_>>())?
        } else {
            batch_tensor(&rgb)?
        };
        println!("eval outputs {:?}\n", d.discriminate(&x)?);
    }
    Ok(())
}
