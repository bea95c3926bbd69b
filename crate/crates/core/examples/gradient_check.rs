//! Finite-difference check of the weighted content loss, differentiated
//! through the spatial weights of the SR features, at both analytic precisions.
//! On i.i.d. noise the h = 1e-4 rows agree with each other and not with the
//! oracle: the step straddles ReLU and max-pool kinks, which h = 1e-6 avoids.
//!
//! cargo run --release --example gradient_check

use mfsr::features::FeatureExtractor;
use mfsr::gradcheck::{check, GradCheckConfig, Objective};
use mfsr::graph::{Graph, Var};
use mfsr::image::random_image;
use mfsr::losses::weighted_content_loss;
use mfsr::{Result, Scalar};

struct Weighted {
    extractor: FeatureExtractor,
    hr: mfsr::Tensor<f64>,
}

impl Objective for Weighted {
    fn eval<T: Scalar>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        let hr = g.constant(self.hr.cast());
        weighted_content_loss(g, &self.extractor, x[0], hr, &Default::default())
    }
}

fn main() -> Result<()> {
    let sr: mfsr::image::ImageRgb = random_image(16, 16, 1);
    let hr: mfsr::image::ImageRgb = random_image(16, 16, 2);
    let objective = Weighted { extractor: FeatureExtractor::seeded(0), hr: hr.to_tensor().cast() };
    let modes = [
        ("f32 backward, h = 1e-4", GradCheckConfig { step: 1e-4, ..GradCheckConfig::default() }),
        ("f64 backward, h = 1e-4", GradCheckConfig { step: 1e-4, analytic_f64: true, ..GradCheckConfig::default() }),
        ("f64 backward, h = 1e-6", GradCheckConfig { step: 1e-6, analytic_f64: true, ..GradCheckConfig::default() }),
    ];
    for (label, config) in modes {
        let config = GradCheckConfig { max_coords_per_input: Some(96), ..config };
        let report = check(&objective, &[sr.to_tensor().cast()], &config)?;
        print!("{label}: {} probes, max relative error {:.2e}", report.probes.len(), report.max_rel_error);
        if let Some(p) = &report.worst {
            print!(" (index {}: analytic {:.6e}, numeric {:.6e})", p.index, p.analytic, p.numeric);
        }
        println!();
    }
    Ok(())
}
