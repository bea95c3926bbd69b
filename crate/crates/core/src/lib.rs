//! Multi-feature-discriminator super-resolution.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] and [`graph`]: dense tensors and a reverse-mode tape, with
//!   Adam in [`optim`].
//! * [`image`]: PNG I/O, the discriminator input transforms, bicubic
//!   resampling, the degradation model and patch sampling.
//! * [`features`]: a frozen VGG-shaped extractor with low and high tap points.
//! * [`networks`]: the generator and the three discriminators.
//! * [`losses`]: pixel, adversarial and (weighted) content losses.
//! * [`trainer`] and [`checkpoint`]: alternating adversarial training and the
//!   `NTCK` container.
//! * [`metrics`]: PSNR, NIQE and the perceptual index.
//! * [`cli`]: the `mfsr` command line.
//!
//! See the `examples/` directory of this crate for one runnable program per capability.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Scalar, Tensor};
