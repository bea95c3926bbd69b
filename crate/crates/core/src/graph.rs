//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are appended
//! in evaluation order, so walking the tape backwards is a valid reverse
//! topological order and `backward` needs no sort. One graph is built and
//! consumed per optimization step.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, ConvGrads};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a training-mode batch-norm, for running-stat updates.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance over N·H·W.
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a, T> {
    /// Normalize with the batch's own statistics.
    Batch,
    /// Normalize with supplied running statistics.
    Running { mean: &'a [T], var: &'a [T] },
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Sigmoid {
        input: Var,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        input: Var,
        scale: T,
    },
    Square {
        input: Var,
    },
    Ln {
        input: Var,
    },
    Clamp {
        input: Var,
        lo: T,
        hi: T,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    ChannelMix {
        input: Var,
        coeffs: Vec<T>,
    },
    MulSpatial {
        features: Var,
        weights: Var,
    },
    NormalizeSample {
        input: Var,
        norms: Vec<T>,
    },
    Blur {
        input: Var,
        kernel: Vec<T>,
        k: usize,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-node gradients returned by [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` was reachable and differentiable.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::shape(op, detail)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(value.grad.is_none());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is tracked (parameters, or inputs under a gradient check).
    pub fn variable(&mut self, mut t: Tensor<T>) -> Var {
        t.grad = None;
        self.push(t, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.grad = None;
        self.push(t, Op::Leaf, false)
    }

    /// Copies a node's value into a fresh constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let ws = self.value(weight).shape().to_vec();
        let [out_c, in_c, kh, kw] = ws[..] else {
            return Err(shape_err("conv2d", format!("weight must be OutC×InC×k×k, got {ws:?}")));
        };
        if in_c != c {
            return Err(shape_err(
                "conv2d",
                format!("input has C={c} but weight expects InC={in_c}"),
            ));
        }
        if kh != kw {
            return Err(shape_err("conv2d", format!("non-square kernel {kh}×{kw}")));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d", "stride must be ≥ 1"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh} exceeds padded input {}×{}", h + 2 * padding, w + 2 * padding),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [out_c] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias shape {:?}, expected [{out_c}]", self.value(b).shape()),
                ));
            }
        }
        let geom = ConvGeom {
            in_c,
            in_h: h,
            in_w: w,
            out_c,
            k: kh,
            stride,
            padding,
        };
        let data = kernels::conv2d_forward(
            &geom,
            n,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new([n, out_c, geom.out_h(), geom.out_w()], data)?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// `y = x·Wᵀ + b` for `x: N×F`, `W: Out×F`, `b: Out`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let ([n, f], [out, wf]) = (&xs[..], &ws[..]) else {
            return Err(shape_err(
                "fully_connected",
                format!("expected N×F input and Out×F weight, got {xs:?} and {ws:?}"),
            ));
        };
        let (n, f, out) = (*n, *f, *out);
        if *wf != f {
            return Err(shape_err(
                "fully_connected",
                format!("input has F={f} but weight expects F={wf}"),
            ));
        }
        let mut y = vec![T::zero(); n * out];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [out] {
                return Err(shape_err(
                    "fully_connected",
                    format!("bias shape {:?}, expected [{out}]", bv.shape()),
                ));
            }
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bv.data());
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            n,
            f,
            out,
            self.value(input).data(),
            (f as isize, 1),
            self.value(weight).data(),
            (1, f as isize),
            beta,
            &mut y,
            (out as isize, 1),
        );
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new([n, out], y)?,
            Op::Linear {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let out = self
            .value(input)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.rg(input);
        self.push(out, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.leaky_relu(input, T::zero())
    }

    /// Per-channel normalization of an NCHW tensor. Returns the batch statistics
    /// when normalizing with them, so the caller can update running estimates.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_, T>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (n, c, h, w) = self.value(input).dims4()?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.value(p).shape() != [c] {
                return Err(shape_err(
                    "batch_norm",
                    format!("{name} shape {:?}, input has C={c}", self.value(p).shape()),
                ));
            }
        }
        let hw = h * w;
        let count = n * hw;
        let x = self.value(input).data();
        let (mean, var, batch_stats) = match mode {
            NormMode::Batch => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for b in 0..n {
                        let base = (b * c + ch) * hw;
                        s += x[base..base + hw].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut sq = 0.0f64;
                    for b in 0..n {
                        let base = (b * c + ch) * hw;
                        sq += x[base..base + hw]
                            .iter()
                            .map(|v| (v.f64() - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = T::of(m);
                    var[ch] = T::of(sq / count as f64);
                }
                (mean, var, true)
            }
            NormMode::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err(
                        "batch_norm",
                        format!("running stats of length {}/{}, input has C={c}", mean.len(), var.len()),
                    ));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    y[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        let out = Tensor::new([n, c, h, w], y)?;
        let stats = batch_stats.then(|| BatchStats {
            mean: mean.clone(),
            var: var.clone(),
            count,
        });
        let v = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((v, stats))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        let rg = self.rg(input);
        self.push(out, Op::Sigmoid { input }, rg)
    }

    /// 2×2 max-pooling with stride 2 (odd trailing rows/columns are dropped).
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(shape_err("max_pool2", format!("input {h}×{w} too small")));
        }
        let x = self.value(input).data();
        let mut y = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    y.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::new([n, c, oh, ow], y)?,
            Op::MaxPool2 { input, argmax },
            rg,
        ))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if factor == 0 {
            return Err(Error::contract("upsample_nearest", "factor must be ≥ 1"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let x = self.value(input).data();
        let mut y = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            for oy in 0..oh {
                let src = &x[plane * h * w + (oy / factor) * w..][..w];
                let dst = &mut y[plane * oh * ow + oy * ow..][..ow];
                for (ox, v) in dst.iter_mut().enumerate() {
                    *v = src[ox / factor];
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::new([n, c, oh, ow], y)?,
            Op::Upsample { input, factor },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("shapes checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add")?;
        let out = self.zip(a, b, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub")?;
        let out = self.zip(a, b, |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul")?;
        let out = self.zip(a, b, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, input: Var, scale: T, shift: T) -> Var {
        let out = self.value(input).map(|v| scale * v + shift);
        let rg = self.rg(input);
        self.push(out, Op::Affine { input, scale }, rg)
    }

    pub fn scale(&mut self, input: Var, scale: T) -> Var {
        self.affine(input, scale, T::zero())
    }

    pub fn square(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v * v);
        let rg = self.rg(input);
        self.push(out, Op::Square { input }, rg)
    }

    pub fn ln(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.ln());
        let rg = self.rg(input);
        self.push(out, Op::Ln { input }, rg)
    }

    /// Clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, input: Var, lo: T, hi: T) -> Var {
        let out = self.value(input).map(|v| v.max(lo).min(hi));
        let rg = self.rg(input);
        self.push(out, Op::Clamp { input, lo, hi }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let rg = self.rg(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let m = t.sum() / T::of(t.len() as f64);
        let rg = self.rg(input);
        self.push(Tensor::scalar(m), Op::Mean { input }, rg)
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::Reshape { input }, rg))
    }

    /// Flattens all but the batch axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).shape();
        let n = s[0];
        let f: usize = s[1..].iter().product();
        self.reshape(input, [n, f])
    }

    /// Weighted sum over channels: `N×C×H×W → N×1×H×W`.
    pub fn channel_mix(&mut self, input: Var, coeffs: &[T]) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if coeffs.len() != c {
            return Err(shape_err(
                "channel_mix",
                format!("{} coefficients for C={c}", coeffs.len()),
            ));
        }
        let hw = h * w;
        let x = self.value(input).data();
        let mut y = vec![T::zero(); n * hw];
        for b in 0..n {
            let dst = &mut y[b * hw..(b + 1) * hw];
            for (ch, &k) in coeffs.iter().enumerate() {
                let src = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::new([n, 1, h, w], y)?,
            Op::ChannelMix {
                input,
                coeffs: coeffs.to_vec(),
            },
            rg,
        ))
    }

    pub fn channel_sum(&mut self, input: Var) -> Result<Var> {
        let c = self.value(input).dims4()?.1;
        self.channel_mix(input, &vec![T::one(); c])
    }

    /// `features[n,c,h,w] · weights[n,0,h,w]`, applying one spatial map to every channel.
    pub fn mul_spatial(&mut self, features: Var, weights: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(features).dims4()?;
        if self.value(weights).shape() != [n, 1, h, w] {
            return Err(shape_err(
                "mul_spatial",
                format!(
                    "weights {:?} do not broadcast over features {:?}",
                    self.value(weights).shape(),
                    [n, c, h, w]
                ),
            ));
        }
        let hw = h * w;
        let f = self.value(features).data();
        let a = self.value(weights).data();
        let mut y = vec![T::zero(); f.len()];
        for b in 0..n {
            let wmap = &a[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in 0..hw {
                    y[base + i] = f[base + i] * wmap[i];
                }
            }
        }
        let rg = self.rg(features) || self.rg(weights);
        Ok(self.push(
            Tensor::new([n, c, h, w], y)?,
            Op::MulSpatial { features, weights },
            rg,
        ))
    }

    /// Divides each batch item by its own L2 norm. An all-zero item maps to the
    /// uniform unit-norm vector and contributes no gradient.
    pub fn normalize_per_sample(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let n = t.shape()[0];
        let per = t.len() / n.max(1);
        let mut y = vec![T::zero(); t.len()];
        let mut norms = vec![T::zero(); n];
        for b in 0..n {
            let src = &t.data()[b * per..(b + 1) * per];
            let norm = src.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            let dst = &mut y[b * per..(b + 1) * per];
            if norm > 0.0 && norm.is_finite() {
                let inv = 1.0 / norm;
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = T::of(s.f64() * inv);
                }
                norms[b] = T::of(norm);
            } else {
                log::warn!("all-zero item {b} in normalize_per_sample; using uniform weights");
                let u = T::of(1.0 / (per as f64).sqrt());
                dst.iter_mut().for_each(|d| *d = u);
            }
        }
        let out = Tensor::new(t.shape().to_vec(), y).expect("same shape");
        let rg = self.rg(input);
        self.push(out, Op::NormalizeSample { input, norms }, rg)
    }

    /// Same-size per-plane convolution with a fixed odd `k×k` kernel and reflect padding.
    pub fn blur(&mut self, input: Var, kernel: &[T], k: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if k.is_multiple_of(2) || kernel.len() != k * k {
            return Err(Error::contract(
                "blur",
                format!("kernel must be odd square, got k={k} with {} entries", kernel.len()),
            ));
        }
        if k / 2 >= h || k / 2 >= w {
            return Err(Error::contract(
                "blur",
                format!("kernel {k}×{k} is larger than the {h}×{w} image allows"),
            ));
        }
        let y = kernels::blur_planes(n * c, h, w, self.value(input).data(), kernel, k);
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::new([n, c, h, w], y)?,
            Op::Blur {
                input,
                kernel: kernel.to_vec(),
                k,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &gout, &mut grads);
            }
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let n = self.value(*input).shape()[0];
                let mut di = self.rg(*input).then(|| take(grads, *input, self));
                let mut dw = self.rg(*weight).then(|| take(grads, *weight, self));
                let mut db = bias.filter(|b| self.rg(*b)).map(|b| take(grads, b, self));
                kernels::conv2d_backward(
                    geom,
                    n,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    gout,
                    ConvGrads {
                        dinput: di.as_deref_mut(),
                        dweight: dw.as_deref_mut(),
                        dbias: db.as_deref_mut(),
                    },
                );
                put(grads, *input, di);
                put(grads, *weight, dw);
                if let Some(b) = bias {
                    put(grads, *b, db);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let xs = self.value(*input).shape();
                let (n, f) = (xs[0], xs[1]);
                let out = self.value(*weight).shape()[0];
                if self.rg(*input) {
                    let mut dx = take(grads, *input, self);
                    // dx += g · W
                    T::gemm(
                        n,
                        out,
                        f,
                        gout,
                        (out as isize, 1),
                        self.value(*weight).data(),
                        (f as isize, 1),
                        T::one(),
                        &mut dx,
                        (f as isize, 1),
                    );
                    grads[input.0] = Some(dx);
                }
                if self.rg(*weight) {
                    let mut dw = take(grads, *weight, self);
                    // dW += gᵀ · x
                    T::gemm(
                        out,
                        n,
                        f,
                        gout,
                        (1, out as isize),
                        self.value(*input).data(),
                        (f as isize, 1),
                        T::one(),
                        &mut dw,
                        (f as isize, 1),
                    );
                    grads[weight.0] = Some(dw);
                }
                if let Some(b) = bias.filter(|b| self.rg(*b)) {
                    let mut db = take(grads, b, self);
                    for row in gout.chunks(out) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    grads[b.0] = Some(db);
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                accumulate(grads, *input, self, |i| {
                    gout[i] * if x[i] > T::zero() { T::one() } else { *slope }
                });
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = self.value(*input).dims4().expect("checked in forward");
                let hw = h * w;
                let count = T::of((n * hw) as f64);
                let gm = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for i in base..base + hw {
                            sum_g[ch] += gout[i];
                            sum_gx[ch] += gout[i] * xhat[i];
                        }
                    }
                }
                if self.rg(*gamma) {
                    let mut dg = take(grads, *gamma, self);
                    dg.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s);
                    grads[gamma.0] = Some(dg);
                }
                if self.rg(*beta) {
                    let mut dbt = take(grads, *beta, self);
                    dbt.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s);
                    grads[beta.0] = Some(dbt);
                }
                if self.rg(*input) {
                    let mut dx = take(grads, *input, self);
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            let k = gm[ch] * inv_std[ch];
                            if *batch_stats {
                                let mg = sum_g[ch] / count;
                                let mgx = sum_gx[ch] / count;
                                for i in base..base + hw {
                                    dx[i] += k * (gout[i] - mg - xhat[i] * mgx);
                                }
                            } else {
                                for i in base..base + hw {
                                    dx[i] += k * gout[i];
                                }
                            }
                        }
                    }
                    grads[input.0] = Some(dx);
                }
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                accumulate(grads, *input, self, |i| gout[i] * y[i] * (T::one() - y[i]));
            }
            Op::MaxPool2 { input, argmax } => {
                if self.rg(*input) {
                    let mut dx = take(grads, *input, self);
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src as usize] += gout[o];
                    }
                    grads[input.0] = Some(dx);
                }
            }
            Op::Upsample { input, factor } => {
                if self.rg(*input) {
                    let (_, _, h, w) = self.value(*input).dims4().expect("checked");
                    let (oh, ow) = (h * factor, w * factor);
                    let mut dx = take(grads, *input, self);
                    for (plane, chunk) in gout.chunks(oh * ow).enumerate() {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dx[plane * h * w + (oy / factor) * w + ox / factor] +=
                                    chunk[oy * ow + ox];
                            }
                        }
                    }
                    grads[input.0] = Some(dx);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, self, |i| gout[i]);
                accumulate(grads, *b, self, |i| gout[i]);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, self, |i| gout[i]);
                accumulate(grads, *b, self, |i| -gout[i]);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                accumulate(grads, *a, self, |i| gout[i] * y[i]);
                accumulate(grads, *b, self, |i| gout[i] * x[i]);
            }
            Op::Affine { input, scale } => {
                accumulate(grads, *input, self, |i| gout[i] * *scale);
            }
            Op::Square { input } => {
                let x = self.value(*input).data();
                let two = T::of(2.0);
                accumulate(grads, *input, self, |i| two * x[i] * gout[i]);
            }
            Op::Ln { input } => {
                let x = self.value(*input).data();
                accumulate(grads, *input, self, |i| gout[i] / x[i]);
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                accumulate(grads, *input, self, |i| {
                    if x[i] >= *lo && x[i] <= *hi {
                        gout[i]
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Sum { input } => {
                accumulate(grads, *input, self, |_| gout[0]);
            }
            Op::Mean { input } => {
                let g = gout[0] / T::of(self.value(*input).len() as f64);
                accumulate(grads, *input, self, |_| g);
            }
            Op::Reshape { input } => {
                accumulate(grads, *input, self, |i| gout[i]);
            }
            Op::ChannelMix { input, coeffs } => {
                let (_, c, h, w) = self.value(*input).dims4().expect("checked");
                let hw = h * w;
                accumulate(grads, *input, self, |i| {
                    let plane = i / hw;
                    let (b, ch) = (plane / c, plane % c);
                    coeffs[ch] * gout[b * hw + i % hw]
                });
            }
            Op::MulSpatial { features, weights } => {
                let (n, c, h, w) = self.value(*features).dims4().expect("checked");
                let hw = h * w;
                let f = self.value(*features).data();
                let a = self.value(*weights).data();
                accumulate(grads, *features, self, |i| {
                    let b = i / (c * hw);
                    gout[i] * a[b * hw + i % hw]
                });
                if self.rg(*weights) {
                    let mut da = take(grads, *weights, self);
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            for i in 0..hw {
                                da[b * hw + i] += gout[base + i] * f[base + i];
                            }
                        }
                    }
                    grads[weights.0] = Some(da);
                }
            }
            Op::NormalizeSample { input, norms } => {
                if self.rg(*input) {
                    let y = node.value.data();
                    let n = norms.len();
                    let per = y.len() / n.max(1);
                    let mut dx = take(grads, *input, self);
                    for b in 0..n {
                        if norms[b] == T::zero() {
                            continue;
                        }
                        let r = b * per..(b + 1) * per;
                        let dot: T = y[r.clone()]
                            .iter()
                            .zip(&gout[r.clone()])
                            .map(|(&p, &q)| p * q)
                            .sum();
                        for i in r {
                            dx[i] += (gout[i] - y[i] * dot) / norms[b];
                        }
                    }
                    grads[input.0] = Some(dx);
                }
            }
            Op::Blur { input, kernel, k } => {
                if self.rg(*input) {
                    let (n, c, h, w) = self.value(*input).dims4().expect("checked");
                    let mut dx = take(grads, *input, self);
                    kernels::blur_planes_backward(n * c, h, w, gout, kernel, *k, &mut dx);
                    grads[input.0] = Some(dx);
                }
            }
        }
    }
}

fn take<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: &Graph<T>) -> Vec<T> {
    grads[v.0]
        .take()
        .unwrap_or_else(|| vec![T::zero(); g.value(v).len()])
}

fn put<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, buf: Option<Vec<T>>) {
    if let Some(b) = buf {
        grads[v.0] = Some(b);
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    v: Var,
    g: &Graph<T>,
    f: impl Fn(usize) -> T,
) {
    if !g.rg(v) {
        return;
    }
    let mut buf = take(grads, v, g);
    for (i, d) in buf.iter_mut().enumerate() {
        *d += f(i);
    }
    grads[v.0] = Some(buf);
}
