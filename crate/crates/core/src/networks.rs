//! The generator and the three discriminators.
//!
//! Networks own a [`ParamSet`] and are evaluated on a caller-supplied
//! [`Graph`], so the same weights can run at `f32` for training and at `f64`
//! for finite-difference checks.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{BatchStats, Graph, NormMode, Var};
use crate::params::{leaky_gain, normal_init, Binding, ParamKind, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// How batch-norm layers behave during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are updated from them.
    Train,
    /// Batch statistics, running estimates left untouched. Used when a
    /// discriminator scores generator output inside the generator's step.
    TrainFrozenStats,
    /// Running estimates.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerConfig {
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            leaky_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

/// Output of one forward pass plus the batch statistics of every
/// normalization layer that ran in [`Mode::Train`].
pub struct Forward<T: Scalar> {
    pub output: Var,
    pub stats: Vec<(String, BatchStats<T>)>,
}

fn insert_bn(params: &mut ParamSet, name: &str, c: usize) {
    params.insert(format!("{name}.gamma"), Tensor::ones([c]), ParamKind::Trainable);
    params.insert(format!("{name}.beta"), Tensor::zeros([c]), ParamKind::Trainable);
    params.insert(format!("{name}.running_mean"), Tensor::zeros([c]), ParamKind::Buffer);
    params.insert(format!("{name}.running_var"), Tensor::ones([c]), ParamKind::Buffer);
}

fn insert_conv(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    in_c: usize,
    out_c: usize,
    k: usize,
    bias: bool,
    gain: f64,
) {
    params.insert(
        format!("{name}.weight"),
        normal_init(rng, &[out_c, in_c, k, k], in_c * k * k, gain),
        ParamKind::Trainable,
    );
    if bias {
        params.insert(format!("{name}.bias"), Tensor::zeros([out_c]), ParamKind::Trainable);
    }
}

fn batch_norm<T: Scalar>(
    g: &mut Graph<T>,
    bind: &Binding,
    name: &str,
    x: Var,
    mode: Mode,
    eps: f64,
    stats: &mut Vec<(String, BatchStats<T>)>,
) -> Result<Var> {
    let gamma = bind.var(&format!("{name}.gamma"));
    let beta = bind.var(&format!("{name}.beta"));
    let (y, s) = match mode {
        Mode::Eval => {
            let mean = g.value(bind.var(&format!("{name}.running_mean"))).data().to_vec();
            let var = g.value(bind.var(&format!("{name}.running_var"))).data().to_vec();
            g.batch_norm(x, gamma, beta, NormMode::Running { mean: &mean, var: &var }, T::of(eps))?
        }
        Mode::Train | Mode::TrainFrozenStats => g.batch_norm(x, gamma, beta, NormMode::Batch, T::of(eps))?,
    };
    if mode == Mode::Train {
        if let Some(s) = s {
            stats.push((name.to_string(), s));
        }
    }
    Ok(y)
}

/// Folds batch statistics into running estimates by exponential moving average.
/// The variance estimate uses the unbiased `count/(count−1)` correction.
pub fn update_running_stats(params: &mut ParamSet, stats: &[(String, BatchStats<f32>)], momentum: f64) -> Result<()> {
    let m = momentum as f32;
    for (name, s) in stats {
        let unbias = if s.count > 1 {
            s.count as f32 / (s.count - 1) as f32
        } else {
            1.0
        };
        for (key, batch, scale) in [("running_mean", &s.mean, 1.0), ("running_var", &s.var, unbias)] {
            let t = params
                .get_mut(&format!("{name}.{key}"))
                .ok_or_else(|| Error::contract("update_running_stats", format!("no {name}.{key}")))?;
            if t.len() != batch.len() {
                return Err(Error::shape("update_running_stats", format!("{name}.{key}")));
            }
            for (r, &b) in t.data_mut().iter_mut().zip(batch.iter()) {
                *r = (1.0 - m) * *r + m * b * scale;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub scale: usize,
    pub res_blocks: usize,
    pub channels: usize,
    pub layers: LayerConfig,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            scale: 4,
            res_blocks: 8,
            channels: 64,
            layers: LayerConfig::default(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if ![2, 4].contains(&self.scale) {
            problems.push(format!("generator scale must be 2 or 4, got {}", self.scale));
        }
        if self.res_blocks == 0 {
            problems.push("generator needs at least one residual block".into());
        }
        if self.channels == 0 {
            problems.push("generator channels must be ≥ 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn stages(&self) -> usize {
        if self.scale == 4 {
            2
        } else {
            1
        }
    }
}

/// Residual generator.
///
/// Head conv + LeakyReLU, `res_blocks` blocks of
/// `[conv, BN, LeakyReLU, conv, BN] + skip`, a global skip from the head to
/// the end of the trunk, one nearest-neighbour ×2 upsample + conv + LeakyReLU
/// stage per factor of two, and a linear 3-channel tail conv. Convolutions
/// feeding straight into batch-norm carry no bias, since BN would cancel it.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    params: ParamSet,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let c = spec.channels;
        let gain = leaky_gain(spec.layers.leaky_slope);
        insert_conv(&mut p, &mut rng, "head.0", 3, c, 3, true, gain);
        for b in 0..spec.res_blocks {
            for j in 1..=2 {
                insert_conv(&mut p, &mut rng, &format!("res.{b}.conv{j}"), c, c, 3, false, gain);
                insert_bn(&mut p, &format!("res.{b}.bn{j}"), c);
            }
        }
        for s in 0..spec.stages() {
            insert_conv(&mut p, &mut rng, &format!("up.{s}"), c, c, 3, true, gain);
        }
        insert_conv(&mut p, &mut rng, "tail.0", c, 3, 3, true, 0.1);
        Ok(Self { spec, params: p })
    }

    /// Rebuilds a generator around existing weights, checking names and shapes.
    pub fn from_params(spec: GeneratorSpec, params: &indexmap::IndexMap<String, Tensor>) -> Result<Self> {
        let mut g = Self::new(spec, 0)?;
        g.params.load_from(params)?;
        Ok(g)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, bind: &Binding, x: Var, mode: Mode) -> Result<Forward<T>> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != 3 {
            return Err(Error::shape("generate", format!("expected 3 input channels, got {c}")));
        }
        let slope = T::of(self.spec.layers.leaky_slope);
        let eps = self.spec.layers.bn_eps;
        let mut stats = Vec::new();
        let conv = |g: &mut Graph<T>, name: &str, x: Var, bias: bool| {
            let b = bias.then(|| bind.var(&format!("{name}.bias")));
            g.conv2d(x, bind.var(&format!("{name}.weight")), b, 1, 1)
        };
        let h = conv(g, "head.0", x, true)?;
        let head = g.leaky_relu(h, slope);
        let mut r = head;
        for b in 0..self.spec.res_blocks {
            let t = conv(g, &format!("res.{b}.conv1"), r, false)?;
            let t = batch_norm(g, bind, &format!("res.{b}.bn1"), t, mode, eps, &mut stats)?;
            let t = g.leaky_relu(t, slope);
            let t = conv(g, &format!("res.{b}.conv2"), t, false)?;
            let t = batch_norm(g, bind, &format!("res.{b}.bn2"), t, mode, eps, &mut stats)?;
            r = g.add(r, t)?;
        }
        r = g.add(r, head)?;
        for s in 0..self.spec.stages() {
            r = g.upsample_nearest(r, 2)?;
            r = conv(g, &format!("up.{s}"), r, true)?;
            r = g.leaky_relu(r, slope);
        }
        let output = conv(g, "tail.0", r, true)?;
        Ok(Forward { output, stats })
    }

    /// Inference on an N×3×h×w batch in [0,1]: running BN statistics, output clamped to [0,1].
    pub fn generate(&self, lr: &Tensor) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let bind = self.params.bind(&mut g, false);
        let x = g.constant(lr.clone());
        let f = self.forward(&mut g, &bind, x, Mode::Eval)?;
        let y = g.clamp(f.output, 0.0, 1.0);
        Ok(g.value(y).clone())
    }

    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<f32>)]) -> Result<()> {
        update_running_stats(&mut self.params, stats, self.spec.layers.bn_momentum)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiscriminatorKind {
    /// Raw RGB images.
    Image,
    /// Grayscale images, carrying edges and texture.
    Morphological,
    /// Gaussian-blurred RGB images, carrying color, brightness and contrast.
    Color,
}

impl DiscriminatorKind {
    pub const ALL: [DiscriminatorKind; 3] = [Self::Image, Self::Morphological, Self::Color];

    pub fn name(self) -> &'static str {
        match self {
            Self::Image => "img",
            Self::Morphological => "mc",
            Self::Color => "color",
        }
    }

    pub fn input_channels(self) -> usize {
        match self {
            Self::Morphological => 1,
            Self::Image | Self::Color => 3,
        }
    }

    /// Convolution rows of the architecture table.
    pub fn conv_plan(self) -> &'static [ConvRow] {
        const fn row(k: usize, s: usize, n: usize, bn: bool) -> ConvRow {
            ConvRow { k, s, n, bn }
        }
        const DEEP: [ConvRow; 8] = [
            row(3, 1, 64, false),
            row(3, 2, 64, true),
            row(3, 1, 128, true),
            row(3, 2, 128, true),
            row(3, 1, 256, true),
            row(3, 2, 256, true),
            row(3, 1, 512, true),
            row(3, 1, 512, true),
        ];
        const COLOR: [ConvRow; 6] = [
            row(11, 4, 48, false),
            row(5, 2, 64, true),
            row(3, 1, 128, true),
            row(3, 2, 128, true),
            row(3, 1, 128, true),
            row(3, 2, 64, true),
        ];
        match self {
            Self::Image | Self::Morphological => &DEEP,
            Self::Color => &COLOR,
        }
    }

    /// Product of the strides; valid input extents are multiples of it.
    pub fn total_stride(self) -> usize {
        self.conv_plan().iter().map(|r| r.s).product()
    }
}

/// One `Conv (kK, sS, nN), LeakyRelu[, BN]` row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvRow {
    pub k: usize,
    pub s: usize,
    pub n: usize,
    pub bn: bool,
}

pub const HIDDEN_FC: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorSpec {
    pub kind: DiscriminatorKind,
    pub extent: usize,
    pub layers: LayerConfig,
}

impl DiscriminatorSpec {
    pub fn new(kind: DiscriminatorKind, extent: usize) -> Self {
        Self {
            kind,
            extent,
            layers: LayerConfig::default(),
        }
    }

    /// Spatial extent after each convolution row.
    pub fn extents(&self) -> Vec<usize> {
        let mut e = self.extent;
        self.kind
            .conv_plan()
            .iter()
            .map(|r| {
                e = (e + 2 * (r.k / 2)).saturating_sub(r.k) / r.s + 1;
                e
            })
            .collect()
    }

    pub fn flatten_size(&self) -> usize {
        let last = self.kind.conv_plan().last().expect("non-empty plan");
        let e = *self.extents().last().expect("non-empty plan");
        e * e * last.n
    }

    pub fn validate(&self) -> Result<()> {
        let stride = self.kind.total_stride();
        if self.extent == 0 || !self.extent.is_multiple_of(stride) {
            return Err(Error::contract(
                "build_discriminator",
                format!(
                    "{} discriminator needs an extent divisible by {stride}; {} would flatten to {} features",
                    self.kind.name(),
                    self.extent,
                    self.flatten_size()
                ),
            ));
        }
        Ok(())
    }
}

/// Convolutional classifier: rows of conv + LeakyReLU (+ BN), then
/// FC 1024, FC 1 and a sigmoid probability head. Padding is `k/2` throughout.
#[derive(Clone, Debug)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    params: ParamSet,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let gain = leaky_gain(spec.layers.leaky_slope);
        let mut in_c = spec.kind.input_channels();
        for (i, row) in spec.kind.conv_plan().iter().enumerate() {
            insert_conv(&mut p, &mut rng, &format!("conv.{}", i + 1), in_c, row.n, row.k, true, gain);
            if row.bn {
                insert_bn(&mut p, &format!("bn.{}", i + 1), row.n);
            }
            in_c = row.n;
        }
        let flat = spec.flatten_size();
        p.insert("fc.1.weight", normal_init(&mut rng, &[HIDDEN_FC, flat], flat, 1.0), ParamKind::Trainable);
        p.insert("fc.1.bias", Tensor::zeros([HIDDEN_FC]), ParamKind::Trainable);
        p.insert("fc.2.weight", normal_init(&mut rng, &[1, HIDDEN_FC], HIDDEN_FC, 1.0), ParamKind::Trainable);
        p.insert("fc.2.bias", Tensor::zeros([1]), ParamKind::Trainable);
        Ok(Self { spec, params: p })
    }

    pub fn from_params(spec: DiscriminatorSpec, params: &indexmap::IndexMap<String, Tensor>) -> Result<Self> {
        let mut d = Self::new(spec, 0)?;
        d.params.load_from(params)?;
        Ok(d)
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn kind(&self) -> DiscriminatorKind {
        self.spec.kind
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// One line per layer in the architecture-table token format.
    pub fn spec_dump(&self) -> String {
        spec_dump(self.spec.kind)
    }

    /// Probabilities of shape `[N]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, bind: &Binding, x: Var, mode: Mode) -> Result<Forward<T>> {
        let (n, c, h, w) = g.value(x).dims4()?;
        let want_c = self.spec.kind.input_channels();
        if c != want_c || h != self.spec.extent || w != self.spec.extent {
            return Err(Error::shape(
                "discriminate",
                format!(
                    "{} discriminator expects N×{want_c}×{e}×{e}, got {n}×{c}×{h}×{w}",
                    self.spec.kind.name(),
                    e = self.spec.extent
                ),
            ));
        }
        let slope = T::of(self.spec.layers.leaky_slope);
        let mut stats = Vec::new();
        let mut cur = x;
        for (i, row) in self.spec.kind.conv_plan().iter().enumerate() {
            let name = format!("conv.{}", i + 1);
            cur = g.conv2d(
                cur,
                bind.var(&format!("{name}.weight")),
                Some(bind.var(&format!("{name}.bias"))),
                row.s,
                row.k / 2,
            )?;
            cur = g.leaky_relu(cur, slope);
            if row.bn {
                cur = batch_norm(g, bind, &format!("bn.{}", i + 1), cur, mode, self.spec.layers.bn_eps, &mut stats)?;
            }
        }
        cur = g.flatten(cur)?;
        cur = g.linear(cur, bind.var("fc.1.weight"), Some(bind.var("fc.1.bias")))?;
        cur = g.linear(cur, bind.var("fc.2.weight"), Some(bind.var("fc.2.bias")))?;
        cur = g.sigmoid(cur);
        let output = g.reshape(cur, [n])?;
        Ok(Forward { output, stats })
    }

    /// Inference-mode probabilities for a batch.
    pub fn discriminate(&self, x: &Tensor) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new();
        let bind = self.params.bind(&mut g, false);
        let v = g.constant(x.clone());
        let f = self.forward(&mut g, &bind, v, Mode::Eval)?;
        Ok(g.value(f.output).data().to_vec())
    }

    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<f32>)]) -> Result<()> {
        update_running_stats(&mut self.params, stats, self.spec.layers.bn_momentum)
    }
}

/// Architecture listing for `kind`, e.g. `Conv (k3, s2, n64), LeakyRelu, BN`.
pub fn spec_dump(kind: DiscriminatorKind) -> String {
    let mut s = String::new();
    for r in kind.conv_plan() {
        let _ = write!(s, "Conv (k{}, s{}, n{}), LeakyRelu", r.k, r.s, r.n);
        if r.bn {
            s.push_str(", BN");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "FC {HIDDEN_FC}");
    s.push_str("FC 1\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_gen() -> GeneratorSpec {
        GeneratorSpec {
            res_blocks: 1,
            channels: 8,
            ..Default::default()
        }
    }

    #[test]
    fn generator_output_extent_and_fully_convolutional() {
        let gen = Generator::new(small_gen(), 3).unwrap();
        for e in [16, 32] {
            let y = gen.generate(&Tensor::full([1, 3, e, e], 0.3)).unwrap();
            assert_eq!(y.shape(), [1, 3, 4 * e, 4 * e]);
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let two = Generator::new(GeneratorSpec { scale: 2, ..small_gen() }, 3).unwrap();
        assert_eq!(two.generate(&Tensor::zeros([2, 3, 8, 8])).unwrap().shape(), [2, 3, 16, 16]);
    }

    #[test]
    fn generator_seed_determinism() {
        let a = Generator::new(small_gen(), 11).unwrap();
        let b = Generator::new(small_gen(), 11).unwrap();
        assert_eq!(a.params().checksum(), b.params().checksum());
    }

    #[test]
    fn discriminator_geometry() {
        let color = DiscriminatorSpec::new(DiscriminatorKind::Color, 64);
        assert_eq!(color.flatten_size(), 256);
        let img = DiscriminatorSpec::new(DiscriminatorKind::Image, 64);
        assert_eq!(img.flatten_size(), 8 * 8 * 512);
        let ns: Vec<usize> = DiscriminatorKind::Image.conv_plan().iter().map(|r| r.n).collect();
        assert_eq!(ns, [64, 64, 128, 128, 256, 256, 512, 512]);
        let err = Discriminator::new(DiscriminatorSpec::new(DiscriminatorKind::Color, 48), 0).unwrap_err();
        assert!(err.to_string().contains("flatten"), "{err}");
    }

    #[test]
    fn mc_rejects_rgb_and_outputs_probabilities() {
        let d = Discriminator::new(DiscriminatorSpec::new(DiscriminatorKind::Morphological, 32), 5).unwrap();
        assert!(matches!(d.discriminate(&Tensor::zeros([1, 3, 32, 32])), Err(Error::Shape { .. })));
        let x = crate::image::batch_tensor(&[
            crate::image::random_image::<1>(32, 32, 1),
            crate::image::random_image::<1>(32, 32, 1),
        ])
        .unwrap();
        let p = d.discriminate(&x).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(p[0], p[1]);
    }
}
