//! Degrade a synthetic HR image (blur, bicubic ×4, noise) and compare the
//! bicubic re-upsampling against the original.
//!
//! cargo run --release --example degrade -- [out_dir]

use mfsr::image::{self, DegradationSpec, GaussianKernelSpec};
use mfsr::metrics::psnr;
use mfsr::synthetic::gradient_shapes;

fn main() -> mfsr::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "degrade_out".into());
    std::fs::create_dir_all(&out).map_err(|e| mfsr::Error::io(&out, e))?;
    let hr = gradient_shapes(128, 128, 3);
    image::save_png(&hr, format!("{out}/hr.png"))?;

    let specs = [
        ("bicubic", DegradationSpec::default()),
        ("blur", DegradationSpec { blur: Some(GaussianKernelSpec::default()), ..DegradationSpec::default() }),
        ("blur_noise", DegradationSpec { blur: Some(GaussianKernelSpec::default()), noise_sigma: 0.02, ..DegradationSpec::default() }),
    ];
    for (name, spec) in specs {
        let lr = image::degrade(&hr, &spec, 1)?;
        let up = image::bicubic_resize(&lr, 4.0, false)?;
        image::save_png(&lr, format!("{out}/lr_{name}.png"))?;
        println!("{name:>10}: {}x{} -> {}x{}, bicubic x4 PSNR {:.2} dB", hr.width(), hr.height(), lr.width(), lr.height(), psnr(&up, &hr)?);
    }
    Ok(())
}
