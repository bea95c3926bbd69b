//! Frozen VGG-19-shaped feature extractor with a low and a high tap point.
//!
//! The stack is five blocks of 3×3 convolutions with ReLU, channel plan
//! `64,64 | 128,128 | 256×4 | 512×4 | 512×4`, and 2×2 max-pooling between
//! blocks. The low tap is the activation of the second convolution of block 2
//! (128 channels at 1/2 extent). The high tap is the activation of the fourth
//! convolution of block 5 (512 channels at 1/16 extent).
//!
//! Weights are either seeded, He-initialized and frozen, or imported from an
//! `NTCK` checkpoint whose tensors are named `block.index.{weight,bias}`
//! (both 1-based, e.g. `2.2.weight`). An imported file may also carry a
//! 3-element `input_mean` tensor, subtracted from the input before the first
//! convolution.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{normal_init, Binding, ParamKind, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Output channels of every convolution, block by block.
pub const CHANNEL_PLAN: [&[usize]; 5] = [
    &[64, 64],
    &[128, 128],
    &[256, 256, 256, 256],
    &[512, 512, 512, 512],
    &[512, 512, 512, 512],
];

pub const LOW_CHANNELS: usize = 128;
pub const HIGH_CHANNELS: usize = 512;

/// Input extents must be multiples of this.
pub const EXTENT_MULTIPLE: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtractorSource {
    Seeded(u64),
    Import(PathBuf),
}

impl Default for ExtractorSource {
    fn default() -> Self {
        ExtractorSource::Seeded(0)
    }
}

impl fmt::Display for ExtractorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtractorSource::Seeded(s) => write!(f, "seeded:{s}"),
            ExtractorSource::Import(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for ExtractorSource {
    type Err = String;

    /// `seeded`, `seeded:<u64>`, or a checkpoint path.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "seeded" {
            return Ok(ExtractorSource::Seeded(0));
        }
        if let Some(seed) = s.strip_prefix("seeded:") {
            return seed
                .parse()
                .map(ExtractorSource::Seeded)
                .map_err(|_| format!("bad extractor seed {seed:?}"));
        }
        if s.is_empty() {
            return Err("empty extractor source".into());
        }
        Ok(ExtractorSource::Import(PathBuf::from(s)))
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    params: ParamSet,
    input_mean: Option<[f32; 3]>,
    source: ExtractorSource,
}

fn layer_names() -> impl Iterator<Item = (usize, usize, usize, usize)> {
    // (block, index, in_c, out_c), 1-based block and index
    let mut in_c = 3;
    CHANNEL_PLAN.iter().enumerate().flat_map(move |(b, convs)| {
        convs
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let layer = (b + 1, i + 1, in_c, out);
                in_c = out;
                layer
            })
            .collect::<Vec<_>>()
    })
}

/// Feature maps at both tap points.
#[derive(Clone, Copy, Debug)]
pub struct Taps {
    pub low: Var,
    pub high: Var,
}

impl FeatureExtractor {
    pub fn build(source: &ExtractorSource) -> Result<Self> {
        match source {
            ExtractorSource::Seeded(seed) => Ok(Self::seeded(*seed)),
            ExtractorSource::Import(path) => Self::import(path),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (b, i, in_c, out_c) in layer_names() {
            let fan_in = in_c * 9;
            params.insert(
                format!("{b}.{i}.weight"),
                normal_init(&mut rng, &[out_c, in_c, 3, 3], fan_in, 2f64.sqrt()),
                ParamKind::Buffer,
            );
            params.insert(format!("{b}.{i}.bias"), Tensor::zeros([out_c]), ParamKind::Buffer);
        }
        Self {
            params,
            input_mean: None,
            source: ExtractorSource::Seeded(seed),
        }
    }

    /// Loads weights from a checkpoint container, reporting every missing or
    /// mis-shaped tensor at once.
    pub fn import(path: &Path) -> Result<Self> {
        let file = checkpoint::read_container(path)?;
        let mut ex = Self::seeded(0);
        let tensors: IndexMap<String, Tensor> = file.tensors;
        ex.params.load_from(&tensors)?;
        ex.input_mean = match tensors.get("input_mean") {
            None => None,
            Some(t) if t.len() == 3 => Some([t.data()[0], t.data()[1], t.data()[2]]),
            Some(t) => {
                return Err(Error::Import(vec![format!(
                    "input_mean: shape {:?}, expected [3]",
                    t.shape()
                )]))
            }
        };
        ex.source = ExtractorSource::Import(path.to_path_buf());
        Ok(ex)
    }

    /// Writes the weights in the import format.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(n, p)| (n.to_string(), p.tensor.clone()))
            .collect();
        if let Some(m) = self.input_mean {
            tensors.push(("input_mean".into(), Tensor::new([3], m.to_vec())?));
        }
        checkpoint::write_container(path, &tensors, 0, "kind=feature_extractor\n")
    }

    pub fn source(&self) -> &ExtractorSource {
        &self.source
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    /// Places the frozen weights on `g` as constants.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>) -> Binding {
        self.params.cast::<T>().bind(g, false)
    }

    /// Runs `x` (N×3×H×W) through the stack with weights bound by [`FeatureExtractor::bind`].
    pub fn extract_bound<T: Scalar>(&self, g: &mut Graph<T>, bind: &Binding, x: Var) -> Result<Taps> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != 3 {
            return Err(Error::shape("extract", format!("expected 3 channels, got {c}")));
        }
        if h % EXTENT_MULTIPLE != 0 || w % EXTENT_MULTIPLE != 0 || h == 0 || w == 0 {
            return Err(Error::contract(
                "extract",
                format!(
                    "extent {h}×{w} is not a multiple of {EXTENT_MULTIPLE}; crop to {}×{}",
                    h / EXTENT_MULTIPLE * EXTENT_MULTIPLE,
                    w / EXTENT_MULTIPLE * EXTENT_MULTIPLE
                ),
            ));
        }
        let mut cur = match self.input_mean {
            Some(m) => {
                let shift: Vec<T> = (0..g.value(x).len())
                    .map(|i| T::of(-(m[(i / (h * w)) % 3] as f64)))
                    .collect();
                let s = g.constant(Tensor::new(g.value(x).shape().to_vec(), shift)?);
                g.add(x, s)?
            }
            None => x,
        };
        let mut low = None;
        for (b, convs) in CHANNEL_PLAN.iter().enumerate() {
            if b > 0 {
                cur = g.max_pool2(cur)?;
            }
            for i in 0..convs.len() {
                let name = format!("{}.{}", b + 1, i + 1);
                let wv = bind.var(&format!("{name}.weight"));
                let bv = bind.var(&format!("{name}.bias"));
                cur = g.conv2d(cur, wv, Some(bv), 1, 1)?;
                cur = g.relu(cur);
                if b == 1 && i == 1 {
                    low = Some(cur);
                }
            }
        }
        Ok(Taps {
            low: low.expect("block 2 has two convolutions"),
            high: cur,
        })
    }

    /// One-shot extraction that binds the weights itself.
    pub fn extract<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Taps> {
        let bind = self.bind(g);
        self.extract_bound(g, &bind, x)
    }
}
