//! Forward kernels for the tensor operations, plus the matching backward
//! kernels used by [`Graph`](crate::Graph).
//!
//! All loops run in a fixed order so results are bit-identical run to run.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Output extent of a sliding window along one axis.
pub fn window_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Output positions `[lo, hi)` whose input coordinate `o*stride + k - padding`
/// falls inside `[0, input)`.
fn valid_range(out_len: usize, input: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    if input + padding <= k {
        return (0, 0);
    }
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi = out_len.min((input - 1 + padding - k) / stride + 1);
    if lo >= hi {
        (0, 0)
    } else {
        (lo, hi)
    }
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize it. Summation order is fixed.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn conv_geometry<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let [n, c, h, w] = input.dims4("conv2d")?;
    let [o, kc, kh, kw] = kernel.dims4("conv2d")?;
    if kc != c {
        return Err(Error::shape(
            "conv2d (input vs kernel channels)",
            input.shape(),
            kernel.shape(),
        ));
    }
    if bias.shape() != [o] {
        return Err(Error::shape("conv2d (kernel vs bias)", kernel.shape(), bias.shape()));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape(
            "conv2d (padded input smaller than kernel)",
            input.shape(),
            kernel.shape(),
        ));
    }
    Ok(ConvGeometry {
        n,
        c,
        h,
        w,
        o,
        kh,
        kw,
        ho: window_output_len(h, kh, stride, padding),
        wo: window_output_len(w, kw, stride, padding),
        stride,
        padding,
    })
}

/// 2-D cross-correlation with zero padding and a per-output-channel bias.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, kernel, bias, stride, padding)?;
    let (x, k, b) = (input.data(), kernel.data(), bias.data());
    let in_plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.o * out_plane];

    for n in 0..g.n {
        for o in 0..g.o {
            let dst = &mut out[(n * g.o + o) * out_plane..][..out_plane];
            dst.fill(b[o]);
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * in_plane..][..in_plane];
                let kbase = (o * g.c + c) * g.kh * g.kw;
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(g.ho, g.h, ky, g.stride, g.padding);
                    for kx in 0..g.kw {
                        let wv = k[kbase + ky * g.kw + kx];
                        let (ox0, ox1) = valid_range(g.wo, g.w, kx, g.stride, g.padding);
                        if ox0 == ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let row = &mut dst[oy * g.wo..][..g.wo];
                            let ix0 = ox0 * g.stride + kx - g.padding;
                            if g.stride == 1 {
                                let len = ox1 - ox0;
                                axpy(wv, &src[iy * g.w + ix0..][..len], &mut row[ox0..ox1]);
                            } else {
                                for (j, ox) in (ox0..ox1).enumerate() {
                                    row[ox] += wv * src[iy * g.w + ix0 + j * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![g.n, g.o, g.ho, g.wo], out))
}

/// Gradients of conv2d with respect to input, kernel and bias.
pub(crate) fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    g: &ConvGeometry,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (x, k, go) = (input.data(), kernel.data(), grad_out.data());
    let in_plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); g.o];

    for n in 0..g.n {
        for o in 0..g.o {
            let gplane = &go[(n * g.o + o) * out_plane..][..out_plane];
            gb[o] += gplane.iter().copied().sum::<T>();
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * in_plane..][..in_plane];
                let gsrc = &mut gx[(n * g.c + c) * in_plane..][..in_plane];
                let kbase = (o * g.c + c) * g.kh * g.kw;
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(g.ho, g.h, ky, g.stride, g.padding);
                    for kx in 0..g.kw {
                        let (ox0, ox1) = valid_range(g.wo, g.w, kx, g.stride, g.padding);
                        if ox0 == ox1 {
                            continue;
                        }
                        let wv = k[kbase + ky * g.kw + kx];
                        let ix0 = ox0 * g.stride + kx - g.padding;
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let grow = &gplane[oy * g.wo + ox0..oy * g.wo + ox1];
                            if g.stride == 1 {
                                let len = ox1 - ox0;
                                acc += dot(grow, &src[iy * g.w + ix0..][..len]);
                                axpy(wv, grow, &mut gsrc[iy * g.w + ix0..][..len]);
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    let idx = iy * g.w + ix0 + j * g.stride;
                                    acc += gv * src[idx];
                                    gsrc[idx] += wv * gv;
                                }
                            }
                        }
                        gk[kbase + ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(input.shape().to_vec(), gx),
        Tensor::from_parts(kernel.shape().to_vec(), gk),
        Tensor::from_parts(vec![g.o], gb),
    )
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() })
}

pub(crate) fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

/// Logistic function evaluated without overflow and clamped to the open
/// interval (0, 1): the result is never exactly 0 or 1 for finite input.
/// NaN propagates.
#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let upper = one - T::epsilon() / (one + one);
    y.max(T::min_positive_value()).min(upper)
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect();
    Tensor::from_parts(output.shape().to_vec(), data)
}

pub fn avg_pool2d<T: Real>(x: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("avg_pool2d")?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid("avg_pool2d", "window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(Error::invalid(
            "avg_pool2d",
            format!("window {window} larger than spatial dims {h}×{w}"),
        ));
    }
    let ho = window_output_len(h, window, stride, 0);
    let wo = window_output_len(w, window, stride, 0);
    let scale = T::one() / T::from_usize(window * window).unwrap();
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let p = &src[plane * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = T::zero();
                for dy in 0..window {
                    let row = (oy * stride + dy) * w + ox * stride;
                    for &v in &p[row..row + window] {
                        s += v;
                    }
                }
                out.push(s * scale);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

pub(crate) fn avg_pool2d_backward<T: Real>(
    input_shape: &[usize],
    window: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (ho, wo) = (grad_out.shape()[2], grad_out.shape()[3]);
    let planes = input_shape[0] * input_shape[1];
    let scale = T::one() / T::from_usize(window * window).unwrap();
    let go = grad_out.data();
    let mut gx = vec![T::zero(); planes * h * w];
    for plane in 0..planes {
        let gp = &mut gx[plane * h * w..][..h * w];
        let gsrc = &go[plane * ho * wo..][..ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = gsrc[oy * wo + ox] * scale;
                for dy in 0..window {
                    let row = (oy * stride + dy) * w + ox * stride;
                    for v in &mut gp[row..row + window] {
                        *v += g;
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}

/// Per-channel spatial mean: N×C×H×W → N×C.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("global_avg_pool")?;
    let plane = h * w;
    let scale = T::one() / T::from_usize(plane).unwrap();
    let out = x
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().copied().sum::<T>() * scale)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub(crate) fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let plane = input_shape[2] * input_shape[3];
    let scale = T::one() / T::from_usize(plane).unwrap();
    let mut gx = Vec::with_capacity(grad_out.numel() * plane);
    for &g in grad_out.data() {
        gx.extend(std::iter::repeat_n(g * scale, plane));
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}

/// Concatenates N×Cᵢ×H×W tensors along the channel axis, in list order.
pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "empty input list"))?;
    let [n, _, h, w] = first.dims4("concat_channels")?;
    let mut total_c = 0;
    for t in xs {
        let [tn, tc, th, tw] = t.dims4("concat_channels")?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::shape("concat_channels", first.shape(), t.shape()));
        }
        total_c += tc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total_c * plane);
    for b in 0..n {
        for t in xs {
            let tc = t.shape()[1];
            out.extend_from_slice(&t.data()[b * tc * plane..][..tc * plane]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total_c, h, w], out))
}

pub(crate) fn concat_channels_backward<T: Real>(channels: &[usize], grad_out: &Tensor<T>) -> Vec<Tensor<T>> {
    let [n, total_c, h, w] = [
        grad_out.shape()[0],
        grad_out.shape()[1],
        grad_out.shape()[2],
        grad_out.shape()[3],
    ];
    let plane = h * w;
    let go = grad_out.data();
    let mut outs: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(n * c * plane)).collect();
    for b in 0..n {
        let mut offset = b * total_c * plane;
        for (buf, &c) in outs.iter_mut().zip(channels) {
            buf.extend_from_slice(&go[offset..offset + c * plane]);
            offset += c * plane;
        }
    }
    outs.into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_parts(vec![n, c, h, w], d))
        .collect()
}

/// `x · Wᵀ + b` for x: N×C, W: M×C, b: M.
pub fn fully_connected<T: Real>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c] = x.dims2("fully_connected")?;
    let [m, wc] = weights.dims2("fully_connected")?;
    if wc != c {
        return Err(Error::shape(
            "fully_connected (input vs weights)",
            x.shape(),
            weights.shape(),
        ));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(
            "fully_connected (weights vs bias)",
            weights.shape(),
            bias.shape(),
        ));
    }
    let (xd, wd, bd) = (x.data(), weights.data(), bias.data());
    let mut out = Vec::with_capacity(n * m);
    for row in xd.chunks_exact(c) {
        for j in 0..m {
            out.push(dot(row, &wd[j * c..][..c]) + bd[j]);
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

pub(crate) fn fully_connected_backward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, m) = (x.shape()[0], x.shape()[1], weights.shape()[0]);
    let (xd, wd, go) = (x.data(), weights.data(), grad_out.data());
    let mut gx = vec![T::zero(); n * c];
    let mut gw = vec![T::zero(); m * c];
    let mut gb = vec![T::zero(); m];
    for i in 0..n {
        for j in 0..m {
            let g = go[i * m + j];
            gb[j] += g;
            axpy(g, &wd[j * c..][..c], &mut gx[i * c..][..c]);
            axpy(g, &xd[i * c..][..c], &mut gw[j * c..][..c]);
        }
    }
    (
        Tensor::from_parts(vec![n, c], gx),
        Tensor::from_parts(vec![m, c], gw),
        Tensor::from_parts(vec![m], gb),
    )
}

/// Mean over the batch of squared differences; returns a one-element tensor.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse_loss", pred.shape(), target.shape()));
    }
    let n = T::from_usize(pred.numel()).unwrap();
    let s: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(Tensor::scalar(s / n))
}

pub(crate) fn mse_loss_backward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, grad_out: T) -> (Tensor<T>, Tensor<T>) {
    let two_over_n = T::from_f64_lossy(2.0) / T::from_usize(pred.numel()).unwrap();
    let gp: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| grad_out * two_over_n * (p - t))
        .collect();
    let gt = gp.iter().map(|&g| -g).collect();
    (
        Tensor::from_parts(pred.shape().to_vec(), gp),
        Tensor::from_parts(target.shape().to_vec(), gt),
    )
}
