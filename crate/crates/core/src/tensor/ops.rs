//! Forward kernels and their hand-derived adjoints.

use rayon::prelude::*;

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Convolution weights `(out_channels, in_channels, kh, kw)` with an optional bias.
///
/// Layers on the equivariant path never carry a bias: `conv(0)` must be `0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T: Real = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> ConvKernel<T> {
    pub fn new(weight: Tensor<T>) -> Self {
        Self { weight, bias: None }
    }

    pub fn with_bias(weight: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.shape().n {
            return Err(Error::invalid(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                weight.shape().n
            )));
        }
        Ok(Self {
            weight,
            bias: Some(bias),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn is_equivariant(&self) -> bool {
        self.bias.is_none()
    }
}

pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(input: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        if weight.c != input.c {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel in_channels vs input channels)",
                left: weight,
                right: input,
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let (kh, kw) = (weight.h, weight.w);
        if input.h + 2 * pad < kh || input.w + 2 * pad < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                left: weight,
                right: input,
            });
        }
        Ok(Self {
            cin: input.c,
            h: input.h,
            w: input.w,
            kh,
            kw,
            stride,
            pad,
            ho: (input.h + 2 * pad - kh) / stride + 1,
            wo: (input.w + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let p = self.p();
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *o = if ix < 0 || ix >= self.w as isize {
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

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.p();
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Zero-padded 2-D cross-correlation.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let g = ConvGeom::new(s, kernel.weight.shape(), stride, padding)?;
    let cout = kernel.out_channels();
    let (k, p) = (g.k(), g.p());
    let in_len = s.c * s.plane();
    let mut out = Tensor::zeros([s.n, cout, g.ho, g.wo]);
    let wdata = kernel.weight.data();
    out.data_mut()
        .par_chunks_mut(cout * p)
        .enumerate()
        .for_each(|(n, out_n)| {
            let x_n = &input.data()[n * in_len..(n + 1) * in_len];
            let owned;
            let cols: &[T] = if g.is_pointwise() {
                x_n
            } else {
                let mut buf = vec![T::zero(); k * p];
                g.im2col(x_n, &mut buf);
                owned = buf;
                &owned
            };
            T::gemm(
                cout,
                k,
                p,
                T::one(),
                wdata,
                k as isize,
                1,
                cols,
                p as isize,
                1,
                T::zero(),
                out_n,
                p as isize,
                1,
            );
            if let Some(bias) = &kernel.bias {
                for (o, &b) in out_n.chunks_mut(p).zip(bias) {
                    o.iter_mut().for_each(|v| *v += b);
                }
            }
        });
    Ok(out)
}

/// Adjoint of [`conv2d`] with respect to input, weight and (if present) bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    let g = ConvGeom::new(s, kernel.weight.shape(), stride, padding)?;
    let cout = kernel.out_channels();
    let expected = Shape::new(s.n, cout, g.ho, g.wo);
    grad_out.expect_shape(expected, "conv2d_backward (grad_out)")?;
    let (k, p) = (g.k(), g.p());
    let in_len = s.c * s.plane();
    let wdata = kernel.weight.data();

    let mut dx = Tensor::zeros(s);
    let partial_dw: Vec<Vec<T>> = dx
        .data_mut()
        .par_chunks_mut(in_len)
        .enumerate()
        .map(|(n, dx_n)| {
            let x_n = &input.data()[n * in_len..(n + 1) * in_len];
            let go_n = &grad_out.data()[n * cout * p..(n + 1) * cout * p];
            let mut dw = vec![T::zero(); cout * k];
            if g.is_pointwise() {
                // dW = dOut · Xᵀ, dX = Wᵀ · dOut
                T::gemm(cout, p, k, T::one(), go_n, p as isize, 1, x_n, 1, p as isize, T::zero(), &mut dw, k as isize, 1);
                T::gemm(k, cout, p, T::one(), wdata, 1, k as isize, go_n, p as isize, 1, T::zero(), dx_n, p as isize, 1);
            } else {
                let mut cols = vec![T::zero(); k * p];
                g.im2col(x_n, &mut cols);
                T::gemm(cout, p, k, T::one(), go_n, p as isize, 1, &cols, 1, p as isize, T::zero(), &mut dw, k as isize, 1);
                T::gemm(k, cout, p, T::one(), wdata, 1, k as isize, go_n, p as isize, 1, T::zero(), &mut cols, p as isize, 1);
                g.col2im(&cols, dx_n);
            }
            dw
        })
        .collect();

    let mut dw = Tensor::zeros(kernel.weight.shape());
    for part in &partial_dw {
        for (a, &b) in dw.data_mut().iter_mut().zip(part) {
            *a += b;
        }
    }
    let bias = kernel.bias.as_ref().map(|_| {
        let mut db = vec![T::zero(); cout];
        for n in 0..s.n {
            for (o, acc) in db.iter_mut().enumerate() {
                let start = (n * cout + o) * p;
                *acc += grad_out.data()[start..start + p].iter().copied().sum::<T>();
            }
        }
        db
    });
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias,
    })
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at zero is taken as zero.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_out, "relu_backward", |x, g| {
        if x > T::zero() {
            g
        } else {
            T::zero()
        }
    })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    input.map(|x| half * x * (T::one() + (c * (x + a * x * x * x)).tanh()))
}

pub fn gelu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, a, half, three) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5), T::of(3.0));
    input.zip_map(grad_out, "gelu_backward", |x, g| {
        let t = (c * (x + a * x * x * x)).tanh();
        let dt = (T::one() - t * t) * c * (T::one() + three * a * x * x);
        g * (half * (T::one() + t) + half * x * dt)
    })
}

/// ELU with alpha = 1.
pub fn elu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { x.exp_m1() })
}

pub fn elu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_out, "elu_backward", |x, g| {
        if x > T::zero() {
            g
        } else {
            g * x.exp()
        }
    })
}

/// Per-token (per-pixel, across channels) mean and population variance.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenStats<T: Real = f32> {
    pub mean: Tensor<T>,
    pub variance: Tensor<T>,
}

pub fn token_stats<T: Real>(input: &Tensor<T>) -> TokenStats<T> {
    let s = input.shape();
    let plane = s.plane();
    let inv_c = T::one() / T::of(s.c.max(1) as f64);
    let mut mean = Tensor::zeros([s.n, 1, s.h, s.w]);
    let mut variance = Tensor::zeros([s.n, 1, s.h, s.w]);
    for n in 0..s.n {
        let m = &mut mean.data_mut()[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            for (acc, &v) in m.iter_mut().zip(input.plane(n, c)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v *= inv_c);
        let var = &mut variance.data_mut()[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            for ((acc, &v), &mu) in var.iter_mut().zip(input.plane(n, c)).zip(m.iter()) {
                let d = v - mu;
                *acc += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v *= inv_c);
    }
    TokenStats { mean, variance }
}

/// Channels `[start, start + len)`.
pub fn slice_channels<T: Real>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if start + len > s.c {
        return Err(Error::invalid(format!(
            "channel slice {start}..{} out of range for {s}",
            start + len
        )));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * len * plane);
    for n in 0..s.n {
        let base = (n * s.c + start) * plane;
        data.extend_from_slice(&input.data()[base..base + len * plane]);
    }
    Tensor::from_vec(s.with_c(len), data)
}

/// First and last halves of the channel axis.
pub fn channel_split<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = input.shape().c;
    if c % 2 != 0 {
        return Err(Error::OddChannels(c));
    }
    Ok((
        slice_channels(input, 0, c / 2)?,
        slice_channels(input, c / 2, c / 2)?,
    ))
}

pub fn channel_concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::ShapeMismatch {
            op: "channel_concat",
            left: sa,
            right: sb,
        });
    }
    let plane = sa.plane();
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * sa.c * plane..(n + 1) * sa.c * plane]);
        data.extend_from_slice(&b.data()[n * sb.c * plane..(n + 1) * sb.c * plane]);
    }
    Tensor::from_vec(sa.with_c(sa.c + sb.c), data)
}

/// Depth-to-space: `(n, c*r*r, h, w) -> (n, c, h*r, w*r)`.
pub fn pixel_shuffle<T: Real>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || s.c % (r * r) != 0 {
        return Err(Error::invalid(format!(
            "pixel_shuffle: {} channels not divisible by {}",
            s.c,
            r * r
        )));
    }
    let c = s.c / (r * r);
    let mut out = Tensor::zeros([s.n, c, s.h * r, s.w * r]);
    for n in 0..s.n {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let src = input.plane(n, ci * r * r + i * r + j);
                    for y in 0..s.h {
                        for x in 0..s.w {
                            out.set(n, ci, y * r + i, x * r + j, src[y * s.w + x]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Space-to-depth, the exact inverse (and adjoint) of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || s.h % r != 0 || s.w % r != 0 {
        return Err(Error::Indivisible {
            h: s.h,
            w: s.w,
            factor: r,
            pad_h: pad_to(s.h, r.max(1)),
            pad_w: pad_to(s.w, r.max(1)),
        });
    }
    let (h, w) = (s.h / r, s.w / r);
    let mut out = Tensor::zeros([s.n, s.c * r * r, h, w]);
    for n in 0..s.n {
        for ci in 0..s.c {
            for i in 0..r {
                for j in 0..r {
                    for y in 0..h {
                        for x in 0..w {
                            let v = input.at(n, ci, y * r + i, x * r + j);
                            out.set(n, ci * r * r + i * r + j, y, x, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn pad_to(len: usize, factor: usize) -> usize {
    (factor - len % factor) % factor
}

fn check_even_spatial(s: Shape) -> Result<()> {
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::Indivisible {
            h: s.h,
            w: s.w,
            factor: 2,
            pad_h: pad_to(s.h, 2),
            pad_w: pad_to(s.w, 2),
        });
    }
    Ok(())
}

/// Stride-2 bias-free 3x3 convolution: `(n, c, h, w) -> (n, 2c, h/2, w/2)`.
pub fn downsample<T: Real>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    check_even_spatial(input.shape())?;
    let ks = kernel.weight.shape();
    if ks.h != 3 || ks.w != 3 || ks.n != 2 * ks.c {
        return Err(Error::invalid(format!(
            "downsample expects a (2c, c, 3, 3) kernel, got {ks}"
        )));
    }
    conv2d(input, kernel, 2, 1)
}

/// Bias-free 1x1 convolution to `4 * c/2` channels followed by depth-to-space:
/// `(n, c, h, w) -> (n, c/2, 2h, 2w)`.
pub fn upsample<T: Real>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    let ks = kernel.weight.shape();
    let c = input.shape().c;
    if c % 2 != 0 {
        return Err(Error::OddChannels(c));
    }
    if ks.h != 1 || ks.w != 1 || ks.n != 2 * c {
        return Err(Error::invalid(format!(
            "upsample expects a (2c, c, 1, 1) kernel, got {ks}"
        )));
    }
    pixel_shuffle(&conv2d(input, kernel, 1, 0)?, 2)
}

pub fn add_scalar<T: Real>(input: &Tensor<T>, v: T) -> Tensor<T> {
    input.map(|x| x + v)
}
