//! Raw forward/backward kernels on flat NCHW buffers. The tape in
//! [`crate::graph`] owns shapes and bookkeeping; these only do arithmetic.

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.k) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, input: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = g.padding as isize;
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - p;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dinput: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = g.padding as isize;
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &mut dinput[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - p;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let in_per = g.in_c * g.in_h * g.in_w;
    let out_per = g.out_c * ncols;
    let mut out = vec![T::zero(); batch * out_per];
    let mut cols = vec![T::zero(); rows * ncols];
    for n in 0..batch {
        im2col(g, &input[n * in_per..(n + 1) * in_per], &mut cols);
        let dst = &mut out[n * out_per..(n + 1) * out_per];
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(ncols).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.out_c,
            rows,
            ncols,
            weight,
            (rows as isize, 1),
            &cols,
            (ncols as isize, 1),
            beta,
            dst,
            (ncols as isize, 1),
        );
    }
    out
}

/// Gradients of a convolution. Each output slot is only computed when requested.
pub struct ConvGrads<'a, T> {
    pub dinput: Option<&'a mut [T]>,
    pub dweight: Option<&'a mut [T]>,
    pub dbias: Option<&'a mut [T]>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    weight: &[T],
    dout: &[T],
    grads: ConvGrads<'_, T>,
) {
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let in_per = g.in_c * g.in_h * g.in_w;
    let out_per = g.out_c * ncols;
    let ConvGrads {
        mut dinput,
        mut dweight,
        dbias,
    } = grads;
    if let Some(db) = dbias {
        for n in 0..batch {
            for (o, chunk) in dout[n * out_per..(n + 1) * out_per]
                .chunks(ncols)
                .enumerate()
            {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    if dinput.is_none() && dweight.is_none() {
        return;
    }
    let mut cols = vec![T::zero(); rows * ncols];
    for n in 0..batch {
        let go = &dout[n * out_per..(n + 1) * out_per];
        if let Some(dw) = dweight.as_deref_mut() {
            im2col(g, &input[n * in_per..(n + 1) * in_per], &mut cols);
            // dW += dout · colsᵀ
            T::gemm(
                g.out_c,
                ncols,
                rows,
                go,
                (ncols as isize, 1),
                &cols,
                (1, ncols as isize),
                T::one(),
                dw,
                (rows as isize, 1),
            );
        }
        if let Some(di) = dinput.as_deref_mut() {
            // dcols = Wᵀ · dout
            T::gemm(
                rows,
                g.out_c,
                ncols,
                weight,
                (1, rows as isize),
                go,
                (ncols as isize, 1),
                T::zero(),
                &mut cols,
                (ncols as isize, 1),
            );
            col2im(g, &cols, &mut di[n * in_per..(n + 1) * in_per]);
        }
    }
}

/// Index of `i` reflected into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn reflect_pad<T: Scalar>(src: &[T], h: usize, w: usize, r: usize) -> Vec<T> {
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut out = vec![T::zero(); ph * pw];
    for y in 0..ph {
        let sy = reflect_index(y as isize - r as isize, h);
        for x in 0..pw {
            let sx = reflect_index(x as isize - r as isize, w);
            out[y * pw + x] = src[sy * w + sx];
        }
    }
    out
}

/// Same-size 2-D convolution of every plane with one `k×k` kernel, reflect-padded.
pub fn blur_planes<T: Scalar>(
    planes: usize,
    h: usize,
    w: usize,
    input: &[T],
    kernel: &[T],
    k: usize,
) -> Vec<T> {
    let r = k / 2;
    let pw = w + 2 * r;
    let mut out = vec![T::zero(); input.len()];
    for p in 0..planes {
        let padded = reflect_pad(&input[p * h * w..(p + 1) * h * w], h, w, r);
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let line = &mut dst[y * w..(y + 1) * w];
            for a in 0..k {
                // true convolution: B(u) · I(y − u), so kernel row a meets padded row y + k − 1 − a
                let row = &padded[(y + k - 1 - a) * pw..(y + k - a) * pw];
                for b in 0..k {
                    let kv = kernel[a * k + b];
                    let seg = &row[k - 1 - b..k - 1 - b + w];
                    for (o, &v) in line.iter_mut().zip(seg) {
                        *o += kv * v;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`blur_planes`]: scatters `dout` back through the kernel and the reflection.
pub fn blur_planes_backward<T: Scalar>(
    planes: usize,
    h: usize,
    w: usize,
    dout: &[T],
    kernel: &[T],
    k: usize,
    dinput: &mut [T],
) {
    let r = k / 2;
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut dpad = vec![T::zero(); ph * pw];
    for p in 0..planes {
        dpad.iter_mut().for_each(|v| *v = T::zero());
        let go = &dout[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let gline = &go[y * w..(y + 1) * w];
            for a in 0..k {
                let row = &mut dpad[(y + k - 1 - a) * pw..(y + k - a) * pw];
                for b in 0..k {
                    let kv = kernel[a * k + b];
                    let seg = &mut row[k - 1 - b..k - 1 - b + w];
                    for (d, &gv) in seg.iter_mut().zip(gline) {
                        *d += kv * gv;
                    }
                }
            }
        }
        let di = &mut dinput[p * h * w..(p + 1) * h * w];
        for y in 0..ph {
            let sy = reflect_index(y as isize - r as isize, h);
            for x in 0..pw {
                let sx = reflect_index(x as isize - r as isize, w);
                di[sy * w + sx] += dpad[y * pw + x];
            }
        }
    }
}
