//! Pixel-loss pretraining and alternating adversarial training.
//!
//! Each adversarial iteration draws one batch, runs the generator once, then
//! takes one Adam step on the image, morphological-component and color
//! discriminators (in that order, on detached generator output), and finally
//! one Adam step on the generator against the freshly updated discriminators.
//! The batch drawn at iteration `i` depends only on the seed and `i`, which
//! makes a resumed run indistinguishable from an uninterrupted one.

use std::path::Path;

use indexmap::IndexMap;

use crate::checkpoint::{self, Container};
use crate::error::{Error, Result};
use crate::features::{ExtractorSource, FeatureExtractor};
use crate::graph::{Graph, Var};
use crate::image::{batch_tensor, blur_var, gaussian_kernel, to_gray_var, DegradationSpec, GaussianKernelSpec, ImageRgb, Kernel2d, PatchSampler};
use crate::losses::{self, LossWeights};
use crate::networks::{Discriminator, DiscriminatorKind, DiscriminatorSpec, Generator, GeneratorSpec, Mode};
use crate::optim::{AdamConfig, AdamState};
use crate::params::{Binding, ParamSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub pretrain_iters: u64,
    pub gan_iters: u64,
    /// Generator updates after which the learning rate drops tenfold.
    pub lr_decay_at: u64,
    pub batch_size: usize,
    pub lr_patch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub degradation: DegradationSpec,
    pub generator: GeneratorSpec,
    pub extractor: ExtractorSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            pretrain_iters: 2000,
            gan_iters: 1000,
            lr_decay_at: 100_000,
            batch_size: 16,
            lr_patch: 16,
            seed: 0,
            weights: LossWeights::default(),
            degradation: DegradationSpec::default(),
            generator: GeneratorSpec::default(),
            extractor: ExtractorSource::default(),
        }
    }
}

impl TrainConfig {
    pub fn scale(&self) -> usize {
        self.generator.scale
    }

    /// HR patch extent, which is also the discriminator input extent.
    pub fn hr_patch(&self) -> usize {
        self.lr_patch * self.scale()
    }

    pub fn lr_at(&self, generator_updates: u64) -> f32 {
        if generator_updates >= self.lr_decay_at {
            (self.lr * 0.1) as f32
        } else {
            self.lr as f32
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1 as f32,
            ..AdamConfig::default()
        }
    }

    /// Every violated constraint, reported together.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            v.push(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            v.push(format!("beta1 must lie in [0, 1), got {}", self.beta1));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be ≥ 1".into());
        }
        if self.lr_patch == 0 {
            v.push("lr_patch must be ≥ 1".into());
        }
        if let Err(Error::Config(p)) = self.generator.validate() {
            v.extend(p);
        }
        if self.degradation.scale != self.generator.scale {
            v.push(format!(
                "degradation scale {} differs from generator scale {}",
                self.degradation.scale, self.generator.scale
            ));
        }
        if !(self.degradation.noise_sigma >= 0.0 && self.degradation.noise_sigma.is_finite()) {
            v.push(format!("noise_sigma must be ≥ 0, got {}", self.degradation.noise_sigma));
        }
        let stride = DiscriminatorKind::Color.total_stride().max(crate::features::EXTENT_MULTIPLE);
        if self.lr_patch > 0 && !self.hr_patch().is_multiple_of(stride) {
            v.push(format!(
                "HR patch lr_patch·scale = {} must be a multiple of {stride} for the discriminators",
                self.hr_patch()
            ));
        }
        if let Err(Error::Config(p)) = self.weights.validate() {
            v.extend(p);
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Adversarial,
}

/// Loss components of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub phase: Phase,
    pub iteration: u64,
    pub l_pixel: f64,
    pub l_adv_img: f64,
    pub l_adv_mc: f64,
    pub l_adv_color: f64,
    pub l_wc: f64,
    pub l_total: f64,
    pub lr: f64,
    /// Discriminator losses in update order (img, mc, color).
    pub l_disc: [f64; 3],
    /// Smallest and largest discriminator output seen this iteration; `None`
    /// while pretraining.
    pub d_range: Option<(f64, f64)>,
}

pub const TRACE_HEADER: [&str; 8] = [
    "iteration",
    "l_pixel",
    "l_adv_img",
    "l_adv_mc",
    "l_adv_color",
    "l_wc",
    "l_total",
    "lr",
];

pub fn write_trace_csv(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(TRACE_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            format!("{:e}", r.l_pixel),
            format!("{:e}", r.l_adv_img),
            format!("{:e}", r.l_adv_mc),
            format!("{:e}", r.l_adv_color),
            format!("{:e}", r.l_wc),
            format!("{:e}", r.l_total),
            format!("{:e}", r.lr),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Generator-side loss terms for one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorTerms {
    pub l_pixel: f64,
    pub l_adv_img: f64,
    pub l_adv_mc: f64,
    pub l_adv_color: f64,
    pub l_adv: f64,
    pub l_wc: f64,
    pub l_total: f64,
    pub d_range: (f64, f64),
}

/// What a generator step minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorObjective {
    /// The full perceptual loss.
    Total,
    /// Only the image-discriminator adversarial term.
    ImageAdversarial,
}

struct GeneratorGraph {
    terms: GeneratorTerms,
    total: Var,
    l_adv_img: Var,
}

/// Draw indices of the two phases live in disjoint streams.
const ADVERSARIAL_STREAM: u64 = 1 << 40;

pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminators: [Discriminator; 3],
    pub extractor: FeatureExtractor,
    pub opt_generator: AdamState,
    pub opt_discriminators: [AdamState; 3],
    pub pretrain_done: u64,
    pub adversarial_done: u64,
    pub trace: Vec<TraceRow>,
    blur_kernel: Kernel2d,
}

fn prefixed<'a>(prefix: &str, params: &'a ParamSet) -> impl Iterator<Item = (String, Tensor)> + 'a {
    let prefix = prefix.to_string();
    params.iter().map(move |(n, p)| (format!("{prefix}{n}"), {
        let mut t = p.tensor.clone();
        t.grad = None;
        t
    }))
}

fn strip_prefix(c: &Container, prefix: &str) -> IndexMap<String, Tensor> {
    c.tensors
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
        .collect()
}

fn nan_abort(iteration: u64, component: &str, detail: String) -> Error {
    Error::NumericalAbort {
        iteration: iteration as usize,
        component: component.to_string(),
        detail,
    }
}

impl Trainer {
    /// Fresh networks seeded from `config.seed` and the configured extractor.
    pub fn new(config: TrainConfig) -> Result<Self> {
        let extractor = FeatureExtractor::build(&config.extractor)?;
        Self::with_extractor(config, extractor)
    }

    pub fn with_extractor(config: TrainConfig, extractor: FeatureExtractor) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator, config.seed)?;
        let extent = config.hr_patch();
        let discriminators = [0, 1, 2].map(|i| {
            Discriminator::new(DiscriminatorSpec::new(DiscriminatorKind::ALL[i], extent), config.seed.wrapping_add(1 + i as u64))
        });
        let [a, b, c] = discriminators;
        let discriminators = [a?, b?, c?];
        let adam = config.adam();
        let opt_generator = AdamState::new(generator.params(), adam);
        let opt_discriminators = [0, 1, 2].map(|i| AdamState::new(discriminators[i].params(), adam));
        Ok(Self {
            blur_kernel: gaussian_kernel(&GaussianKernelSpec::default())?,
            config,
            generator,
            discriminators,
            extractor,
            opt_generator,
            opt_discriminators,
            pretrain_done: 0,
            adversarial_done: 0,
            trace: Vec::new(),
        })
    }

    pub fn discriminator(&self, kind: DiscriminatorKind) -> &Discriminator {
        &self.discriminators[kind_index(kind)]
    }

    /// Patch sampler over `hr_images` with this configuration's degradation and patch size.
    pub fn sampler(&self, hr_images: &[ImageRgb]) -> Result<PatchSampler> {
        PatchSampler::new(hr_images, &self.config.degradation, self.config.lr_patch, self.config.seed)
    }

    fn draw(&self, data: &PatchSampler, draw: u64) -> Result<(Tensor, Tensor, Vec<usize>)> {
        let pairs = data.sample(draw, self.config.batch_size)?;
        let lr: Vec<ImageRgb> = pairs.iter().map(|p| p.lr.clone()).collect();
        let hr: Vec<ImageRgb> = pairs.iter().map(|p| p.hr.clone()).collect();
        Ok((batch_tensor(&lr)?, batch_tensor(&hr)?, pairs.iter().map(|p| p.image_index).collect()))
    }

    /// The batch used by adversarial iteration `iteration`.
    pub fn adversarial_batch(&self, data: &PatchSampler, iteration: u64) -> Result<(Tensor, Tensor)> {
        let (l, h, _) = self.draw(data, ADVERSARIAL_STREAM + iteration)?;
        Ok((l, h))
    }

    pub fn pretrain(&mut self, data: &PatchSampler, iters: u64) -> Result<()> {
        for _ in 0..iters {
            self.pretrain_step(data)?;
        }
        Ok(())
    }

    /// One Adam step on the pixel loss.
    pub fn pretrain_step(&mut self, data: &PatchSampler) -> Result<TraceRow> {
        let it = self.pretrain_done;
        let (lr_t, hr_t, idx) = self.draw(data, it)?;
        let lr_rate = self.config.lr_at(it);
        let mut g = Graph::<f32>::new();
        let bind = self.generator.params().bind(&mut g, true);
        let x = g.constant(lr_t);
        let fwd = self.generator.forward(&mut g, &bind, x, Mode::Train)?;
        let hr = g.constant(hr_t);
        let loss = losses::pixel_loss(&mut g, fwd.output, hr)?;
        let l = g.value(loss).item()? as f64;
        if !l.is_finite() {
            return Err(nan_abort(it, "pixel loss", format!("loss {l} on images {idx:?}")));
        }
        self.step_generator(&g, &bind, loss, lr_rate)?;
        self.generator.update_running_stats(&fwd.stats)?;
        self.pretrain_done += 1;
        let row = TraceRow {
            phase: Phase::Pretrain,
            iteration: it,
            l_pixel: l,
            l_adv_img: 0.0,
            l_adv_mc: 0.0,
            l_adv_color: 0.0,
            l_wc: 0.0,
            l_total: losses::combine_total(l, 0.0, 0.0, &LossWeights::pretraining()),
            lr: lr_rate as f64,
            l_disc: [0.0; 3],
            d_range: None,
        };
        self.trace.push(row.clone());
        Ok(row)
    }

    fn step_generator(&mut self, g: &Graph<f32>, bind: &Binding, loss: Var, lr: f32) -> Result<()> {
        let grads = g.backward(loss)?;
        let params = self.generator.params_mut();
        params.zero_grad();
        params.accumulate(bind, &grads)?;
        for (name, t) in params.trainable() {
            if let Some(gr) = &t.grad {
                if gr.iter().any(|v| !v.is_finite()) {
                    return Err(nan_abort(self.adversarial_done, "generator gradient", name.to_string()));
                }
            }
        }
        self.opt_generator.step(params, lr)
    }

    pub fn train_adversarial(&mut self, data: &PatchSampler, iters: u64) -> Result<()> {
        for _ in 0..iters {
            self.adversarial_step(data)?;
        }
        Ok(())
    }

    fn disc_active(&self, kind: DiscriminatorKind) -> bool {
        let w = &self.config.weights;
        w.w_adv_total > 0.0
            && match kind {
                DiscriminatorKind::Image => true,
                DiscriminatorKind::Morphological => w.w_adv_mc > 0.0,
                DiscriminatorKind::Color => w.w_adv_color > 0.0,
            }
    }

    /// Feature transform feeding discriminator `kind`.
    fn transform<T: Scalar>(&self, g: &mut Graph<T>, kind: DiscriminatorKind, x: Var) -> Result<Var> {
        match kind {
            DiscriminatorKind::Image => Ok(x),
            DiscriminatorKind::Morphological => to_gray_var(g, x),
            DiscriminatorKind::Color => blur_var(g, x, &self.blur_kernel),
        }
    }

    /// One iteration: three discriminator steps, then one generator step.
    pub fn adversarial_step(&mut self, data: &PatchSampler) -> Result<TraceRow> {
        let it = self.adversarial_done;
        let (lr_t, hr_t, idx) = self.draw(data, ADVERSARIAL_STREAM + it)?;
        let lr_rate = self.config.lr_at(it);

        let mut g = Graph::<f32>::new();
        let gbind = self.generator.params().bind(&mut g, true);
        let x = g.constant(lr_t);
        let fwd = self.generator.forward(&mut g, &gbind, x, Mode::Train)?;
        let sr = fwd.output;
        if g.value(sr).data().iter().any(|v| !v.is_finite()) {
            return Err(nan_abort(it, "generator output", format!("images {idx:?}")));
        }
        let sr_value = g.value(sr).clone();

        let mut l_disc = [0.0; 3];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for kind in DiscriminatorKind::ALL {
            if !self.disc_active(kind) {
                continue;
            }
            let (loss, outs) = self.discriminator_step(kind, &hr_t, &sr_value, lr_rate, it, &idx)?;
            l_disc[kind_index(kind)] = loss;
            for &o in &outs {
                lo = lo.min(o as f64);
                hi = hi.max(o as f64);
            }
        }

        let hr = g.constant(hr_t);
        let gg = self.generator_graph(&mut g, sr, hr)?;
        let t = gg.terms;
        for (name, v) in [
            ("pixel loss", t.l_pixel),
            ("image adversarial loss", t.l_adv_img),
            ("morphological adversarial loss", t.l_adv_mc),
            ("color adversarial loss", t.l_adv_color),
            ("content loss", t.l_wc),
            ("total loss", t.l_total),
        ] {
            if !v.is_finite() {
                return Err(nan_abort(it, name, format!("value {v} on images {idx:?}")));
            }
        }
        self.step_generator(&g, &gbind, gg.total, lr_rate)?;
        self.generator.update_running_stats(&fwd.stats)?;
        self.adversarial_done += 1;
        let (dl, dh) = t.d_range;
        let row = TraceRow {
            phase: Phase::Adversarial,
            iteration: it,
            l_pixel: t.l_pixel,
            l_adv_img: t.l_adv_img,
            l_adv_mc: t.l_adv_mc,
            l_adv_color: t.l_adv_color,
            l_wc: t.l_wc,
            l_total: t.l_total,
            lr: lr_rate as f64,
            l_disc,
            d_range: Some((lo.min(dl), hi.max(dh))),
        };
        self.trace.push(row.clone());
        Ok(row)
    }

    fn discriminator_step(
        &mut self,
        kind: DiscriminatorKind,
        hr: &Tensor,
        sr: &Tensor,
        lr: f32,
        it: u64,
        idx: &[usize],
    ) -> Result<(f64, Vec<f32>)> {
        let k = kind_index(kind);
        let mut g = Graph::<f32>::new();
        let d = &self.discriminators[k];
        let bind = d.params().bind(&mut g, true);
        let real = g.constant(hr.clone());
        let fake = g.constant(sr.clone());
        let real = self.transform(&mut g, kind, real)?;
        let fake = self.transform(&mut g, kind, fake)?;
        let fr = d.forward(&mut g, &bind, real, Mode::Train)?;
        let ff = d.forward(&mut g, &bind, fake, Mode::Train)?;
        let loss = losses::discriminator_loss(&mut g, fr.output, ff.output, self.config.weights.disc_reduction)?;
        let l = g.value(loss).item()? as f64;
        let mut outs = g.value(fr.output).data().to_vec();
        outs.extend_from_slice(g.value(ff.output).data());
        let component = format!("{} discriminator", kind.name());
        if !l.is_finite() || outs.iter().any(|v| !v.is_finite()) {
            return Err(nan_abort(it, &component, format!("loss {l} on images {idx:?}")));
        }
        let grads = g.backward(loss)?;
        let d = &mut self.discriminators[k];
        d.params_mut().zero_grad();
        d.params_mut().accumulate(&bind, &grads)?;
        self.opt_discriminators[k].step(d.params_mut(), lr)?;
        d.update_running_stats(&fr.stats)?;
        d.update_running_stats(&ff.stats)?;
        Ok((l, outs))
    }

    /// Builds every generator-side term on `g` for SR `sr` and target `hr`.
    /// Discriminators and extractor enter as constants; discriminator
    /// batch-norm uses batch statistics without touching running estimates.
    fn generator_graph<T: Scalar>(&self, g: &mut Graph<T>, sr: Var, hr: Var) -> Result<GeneratorGraph> {
        let w = self.config.weights;
        let zero = g.constant(Tensor::scalar(T::zero()));
        let pixel = losses::pixel_loss(g, sr, hr)?;
        let mut adv = [zero; 3];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for kind in DiscriminatorKind::ALL {
            if !self.disc_active(kind) {
                continue;
            }
            let d = self.discriminator(kind);
            let bind = d.params().cast::<T>().bind(g, false);
            let input = self.transform(g, kind, sr)?;
            let f = d.forward(g, &bind, input, Mode::TrainFrozenStats)?;
            for &o in g.value(f.output).data() {
                lo = lo.min(o.f64());
                hi = hi.max(o.f64());
            }
            adv[kind_index(kind)] = losses::generator_adv_loss(g, f.output, w.gen_reduction);
        }
        let l_adv = losses::total_adv_loss(g, adv[0], adv[1], adv[2], &w)?;
        let wc = if w.w_wc > 0.0 {
            let ebind = self.extractor.bind(g);
            losses::mode_content_loss(g, &self.extractor, &ebind, sr, hr, &w)?
        } else {
            zero
        };
        let total = losses::total_loss(g, pixel, l_adv, wc, &w)?;
        let val = |g: &Graph<T>, v: Var| g.value(v).item().map(|x| x.f64());
        Ok(GeneratorGraph {
            terms: GeneratorTerms {
                l_pixel: val(g, pixel)?,
                l_adv_img: val(g, adv[0])?,
                l_adv_mc: val(g, adv[1])?,
                l_adv_color: val(g, adv[2])?,
                l_adv: val(g, l_adv)?,
                l_wc: val(g, wc)?,
                l_total: val(g, total)?,
                d_range: (lo, hi),
            },
            total,
            l_adv_img: adv[0],
        })
    }

    /// The full generator objective for SR `sr` against `hr` at any precision,
    /// exactly as a training step builds it.
    pub fn perceptual_loss<T: Scalar>(&self, g: &mut Graph<T>, sr: Var, hr: Var) -> Result<Var> {
        Ok(self.generator_graph(g, sr, hr)?.total)
    }

    /// Generator-side terms on a fixed batch without changing any state.
    /// The generator runs on batch statistics, like in a training step.
    pub fn generator_terms(&self, lr: &Tensor, hr: &Tensor) -> Result<GeneratorTerms> {
        let mut g = Graph::<f32>::new();
        let bind = self.generator.params().bind(&mut g, false);
        let x = g.constant(lr.clone());
        let sr = self.generator.forward(&mut g, &bind, x, Mode::TrainFrozenStats)?.output;
        let hr = g.constant(hr.clone());
        Ok(self.generator_graph(&mut g, sr, hr)?.terms)
    }

    /// One Adam step of discriminator `kind` on a real batch `hr` and a
    /// generated batch `sr`. The generator is not touched.
    pub fn discriminator_update(&mut self, kind: DiscriminatorKind, hr: &Tensor, sr: &Tensor, lr: f32) -> Result<f64> {
        let it = self.adversarial_done;
        self.discriminator_step(kind, hr, sr, lr, it, &[]).map(|(l, _)| l)
    }

    /// One isolated Adam step of the generator on a fixed batch, with the
    /// discriminators frozen. The step starts from fresh moments and leaves
    /// the trainer's optimizer state alone. Returns the terms measured before the step.
    pub fn generator_step_on(
        &mut self,
        lr_batch: &Tensor,
        hr_batch: &Tensor,
        lr: f32,
        objective: GeneratorObjective,
    ) -> Result<GeneratorTerms> {
        let mut g = Graph::<f32>::new();
        let bind = self.generator.params().bind(&mut g, true);
        let x = g.constant(lr_batch.clone());
        let sr = self.generator.forward(&mut g, &bind, x, Mode::TrainFrozenStats)?.output;
        let hr = g.constant(hr_batch.clone());
        let gg = self.generator_graph(&mut g, sr, hr)?;
        let target = match objective {
            GeneratorObjective::Total => gg.total,
            GeneratorObjective::ImageAdversarial => gg.l_adv_img,
        };
        let grads = g.backward(target)?;
        let params = self.generator.params_mut();
        params.zero_grad();
        params.accumulate(&bind, &grads)?;
        AdamState::new(params, self.config.adam()).step(params, lr)?;
        Ok(gg.terms)
    }

    /// Config snapshot with the phase counters appended as `state.*` lines.
    fn snapshot(&self) -> String {
        let mut s = crate::config::to_text(&self.config);
        s.push_str(&format!(
            "state.pretrain_done={}\nstate.adversarial_done={}\n",
            self.pretrain_done, self.adversarial_done
        ));
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = prefixed("g.", self.generator.params()).collect();
        for d in &self.discriminators {
            tensors.extend(prefixed(&format!("d_{}.", d.kind().name()), d.params()));
        }
        let opt = |prefix: &str, s: &AdamState| {
            s.to_tensors()
                .into_iter()
                .map(|(n, t)| (format!("{prefix}{n}"), t))
                .collect::<Vec<_>>()
        };
        tensors.extend(opt("opt.g.", &self.opt_generator));
        for (d, s) in self.discriminators.iter().zip(&self.opt_discriminators) {
            tensors.extend(opt(&format!("opt.d_{}.", d.kind().name()), s));
        }
        let total = self.pretrain_done + self.adversarial_done;
        let iteration = u32::try_from(total).map_err(|_| Error::contract("save_checkpoint", "iteration counter exceeds u32"))?;
        checkpoint::write_container(path, &tensors, iteration, &self.snapshot())
    }

    /// Restores a full training state. Nothing is returned unless every tensor matches.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = checkpoint::read_container(path)?;
        let config = crate::config::parse(&config_part(&c.config))?;
        let extractor = FeatureExtractor::build(&config.extractor)?;
        Self::from_container(&c, config, extractor)
    }

    pub fn from_container(c: &Container, config: TrainConfig, extractor: FeatureExtractor) -> Result<Self> {
        let mut t = Self::with_extractor(config, extractor)?;
        let mut problems = Vec::new();
        let mut collect = |r: Result<()>| {
            if let Err(e) = r {
                match e {
                    Error::Import(p) => problems.extend(p),
                    other => problems.push(other.to_string()),
                }
            }
        };
        collect(t.generator.params_mut().load_from(&strip_prefix(c, "g.")));
        for d in &mut t.discriminators {
            let prefix = format!("d_{}.", d.kind().name());
            collect(d.params_mut().load_from(&strip_prefix(c, &prefix)));
        }
        let adam = t.config.adam();
        let get = |prefix: String| move |n: &str| c.tensors.get(&format!("{prefix}{n}")).cloned();
        match AdamState::restore(t.generator.params(), adam, get("opt.g.".into())) {
            Ok(s) => t.opt_generator = s,
            Err(e) => collect(Err(e)),
        }
        for k in 0..3 {
            let prefix = format!("opt.d_{}.", t.discriminators[k].kind().name());
            match AdamState::restore(t.discriminators[k].params(), adam, get(prefix)) {
                Ok(s) => t.opt_discriminators[k] = s,
                Err(e) => collect(Err(e)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Import(problems));
        }
        let counter = |k: &str| -> Result<u64> {
            c.config_value(k)
                .ok_or_else(|| Error::Corrupt(format!("snapshot lacks {k}")))?
                .parse()
                .map_err(|_| Error::Corrupt(format!("bad {k} in snapshot")))
        };
        t.pretrain_done = counter("state.pretrain_done")?;
        t.adversarial_done = counter("state.adversarial_done")?;
        if t.pretrain_done + t.adversarial_done != c.iteration as u64 {
            return Err(Error::Corrupt(format!(
                "iteration counter {} disagrees with snapshot counters {} + {}",
                c.iteration, t.pretrain_done, t.adversarial_done
            )));
        }
        Ok(t)
    }
}

/// The snapshot without its `state.*` lines.
pub fn config_part(snapshot: &str) -> String {
    snapshot
        .lines()
        .filter(|l| !l.trim_start().starts_with("state."))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Loads just the generator of a training checkpoint.
pub fn load_generator(path: impl AsRef<Path>) -> Result<Generator> {
    let c = checkpoint::read_container(path)?;
    let config = crate::config::parse(&config_part(&c.config))?;
    Generator::from_params(config.generator, &strip_prefix(&c, "g."))
}

pub fn kind_index(kind: DiscriminatorKind) -> usize {
    match kind {
        DiscriminatorKind::Image => 0,
        DiscriminatorKind::Morphological => 1,
        DiscriminatorKind::Color => 2,
    }
}
