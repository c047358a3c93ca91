//! 3D cross-correlation and its transpose, lowered to GEMM. Stride-1
//! convolutions run one GEMM per kernel tap over a zero-padded copy of the
//! input; everything else goes through im2col/col2im. Weight layouts follow the usual convention:
//! `[out, in, kD, kH, kW]` for convolution and `[in, out, kD, kH, kW]` for the
//! transpose, so a transposed convolution with the same weight buffer is the
//! exact adjoint of the forward convolution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Backward, BackwardCtx};
use crate::error::{shape_err, Error, Result};
use crate::real::{gemm, gemm_into, Mat, MatMut};
use crate::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// Extra trailing extent added by the transpose only.
    pub output_padding: [usize; 3],
}

impl ConvGeometry {
    pub fn cube(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: [kernel; 3],
            stride: [stride; 3],
            padding: [padding; 3],
            output_padding: [0; 3],
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// `floor((in + 2·pad − kernel) / stride) + 1` per axis, rejected below 1.
    pub fn conv_out(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            let span = input[axis] + 2 * self.padding[axis];
            if self.stride[axis] == 0 || span < self.kernel[axis] || self.kernel[axis] == 0 {
                return Err(Error::Extent {
                    op: "conv3d",
                    axis,
                    input: input[axis],
                    kernel: self.kernel[axis],
                    stride: self.stride[axis],
                    padding: self.padding[axis],
                });
            }
            out[axis] = (span - self.kernel[axis]) / self.stride[axis] + 1;
        }
        Ok(out)
    }

    /// `(in − 1)·stride + kernel − 2·pad + output_padding` per axis.
    pub fn transpose_out(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            let full = (input[axis].max(1) - 1) * self.stride[axis] + self.kernel[axis] + self.output_padding[axis];
            if input[axis] == 0 || self.stride[axis] == 0 || full <= 2 * self.padding[axis] {
                return Err(Error::Extent {
                    op: "conv_transpose3d",
                    axis,
                    input: input[axis],
                    kernel: self.kernel[axis],
                    stride: self.stride[axis],
                    padding: self.padding[axis],
                });
            }
            out[axis] = full - 2 * self.padding[axis];
        }
        Ok(out)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.padding == [0; 3]
    }
}

/// Index map between a "large" volume (convolution input / transpose output)
/// and the "small" grid of kernel anchor positions.
#[derive(Clone, Copy)]
struct Lowering {
    channels: usize,
    big: [usize; 3],
    small: [usize; 3],
    geo: ConvGeometry,
}

impl Lowering {
    fn big_len(&self) -> usize {
        self.big.iter().product()
    }

    fn small_len(&self) -> usize {
        self.small.iter().product()
    }

    fn rows(&self) -> usize {
        self.channels * self.geo.taps()
    }

    /// Valid anchor range `[lo, hi)` along one axis for kernel offset `k`.
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let (s, p, n_big, n_small) = (self.geo.stride[axis], self.geo.padding[axis], self.big[axis], self.small[axis]);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if n_big + p > k { ((n_big - 1 + p - k) / s + 1).min(n_small) } else { 0 };
        (lo.min(n_small), hi.max(lo.min(n_small)))
    }

    /// Visit every (column offset, big offset, len-1 runs) pair. `f(row, col_idx, big_idx)`
    /// is called for each valid tap; invalid taps are left to the caller.
    #[inline]
    fn for_each<F: FnMut(usize, usize, usize)>(&self, mut f: F) {
        let [kd, kh, kw] = self.geo.kernel;
        let [sd, sh, sw] = self.geo.stride;
        let [pd, ph, pw] = self.geo.padding;
        let [_, bh, bw] = self.big;
        let [_, oh, ow] = self.small;
        let p = self.small_len();
        for c in 0..self.channels {
            let cbase = c * self.big_len();
            for z in 0..kd {
                let (z0, z1) = self.valid(0, z);
                for y in 0..kh {
                    let (y0, y1) = self.valid(1, y);
                    for x in 0..kw {
                        let (x0, x1) = self.valid(2, x);
                        let row = ((c * kd + z) * kh + y) * kw + x;
                        for oz in z0..z1 {
                            let iz = oz * sd + z - pd;
                            for oy in y0..y1 {
                                let iy = oy * sh + y - ph;
                                let col_base = row * p + (oz * oh + oy) * ow;
                                let big_base = cbase + (iz * bh + iy) * bw;
                                for ox in x0..x1 {
                                    let ix = ox * sw + x - pw;
                                    f(row, col_base + ox, big_base + ix);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, src: &[T], col: &mut Vec<T>) {
        col.clear();
        col.resize(self.rows() * self.small_len(), T::zero());
        self.for_each(|_, ci, bi| col[ci] = src[bi]);
    }

    fn col2im<T: Real>(&self, col: &[T], dst: &mut [T]) {
        self.for_each(|_, ci, bi| dst[bi] += col[ci]);
    }
}

/// Stride-1 convolution as a sum over kernel taps of shifted GEMMs.
///
/// Outputs are computed on the index space of the padded input: output
/// voxel `(z, y, x)` sits at `q = (z·Ph + y)·Pw + x` and tap `t` reads input
/// `q + offset(t)`. Positions of `q` that are not output voxels are computed
/// and thrown away, which is far cheaper than an im2col buffer.
#[derive(Clone, Copy)]
struct Shifted {
    channels: usize,
    big: [usize; 3],
    small: [usize; 3],
    kernel: [usize; 3],
    padding: [usize; 3],
    padded: [usize; 3],
}

impl Shifted {
    fn new(low: &Lowering) -> Option<Self> {
        if low.geo.stride != [1; 3] || low.geo.is_pointwise() {
            return None;
        }
        let padded = core::array::from_fn(|a| low.big[a] + 2 * low.geo.padding[a]);
        Some(Self {
            channels: low.channels,
            big: low.big,
            small: low.small,
            kernel: low.geo.kernel,
            padding: low.geo.padding,
            padded,
        })
    }

    fn volume(&self) -> usize {
        self.padded.iter().product()
    }

    fn q(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.padded[1] + y) * self.padded[2] + x
    }

    /// Length of the computed `q` range.
    fn span(&self) -> usize {
        let [d, h, w] = self.small;
        self.q(d - 1, h - 1, w - 1) + 1
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let [kd, kh, kw] = self.kernel;
        (0..kd * kh * kw).map(move |t| (t, self.q(t / (kh * kw), (t / kw) % kh, t % kw)))
    }

    /// `[C, big]` → zero-padded `[C, padded]`.
    fn pad<T: Real>(&self, src: &[T], dst: &mut Vec<T>) {
        dst.clear();
        dst.resize(self.channels * self.volume(), T::zero());
        let [d, h, w] = self.big;
        let [pd, ph, pw] = self.padding;
        for c in 0..self.channels {
            for z in 0..d {
                for y in 0..h {
                    let s = ((c * d + z) * h + y) * w;
                    let t = c * self.volume() + self.q(z + pd, y + ph, pw);
                    dst[t..t + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
    }

    /// Interior of `[C, padded]` → `[C, big]`.
    fn unpad<T: Real>(&self, src: &[T], dst: &mut [T]) {
        let [d, h, w] = self.big;
        let [pd, ph, pw] = self.padding;
        for c in 0..self.channels {
            for z in 0..d {
                for y in 0..h {
                    let t = ((c * d + z) * h + y) * w;
                    let s = c * self.volume() + self.q(z + pd, y + ph, pw);
                    dst[t..t + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
    }

    /// `[rows, span]` → `[rows, small]`.
    fn gather<T: Real>(&self, src: &[T], rows: usize, dst: &mut [T]) {
        let [d, h, w] = self.small;
        let span = self.span();
        for r in 0..rows {
            for z in 0..d {
                for y in 0..h {
                    let t = ((r * d + z) * h + y) * w;
                    let s = r * span + self.q(z, y, 0);
                    dst[t..t + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
    }

    /// `[rows, small]` → `[rows, span]`, zero off the output grid.
    fn scatter<T: Real>(&self, src: &[T], rows: usize, dst: &mut Vec<T>) {
        let [d, h, w] = self.small;
        let span = self.span();
        dst.clear();
        dst.resize(rows * span, T::zero());
        for r in 0..rows {
            for z in 0..d {
                for y in 0..h {
                    let s = ((r * d + z) * h + y) * w;
                    let t = r * span + self.q(z, y, 0);
                    dst[t..t + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
    }

    /// Tap `t` of a `[O, C, taps]` weight as an `[O, C]` view.
    fn tap<'a, T>(&self, w: &'a [T], out: usize, t: usize) -> Mat<'a, T> {
        let taps = self.kernel.iter().product::<usize>();
        Mat::strided(&w[t..], out, self.channels, self.channels * taps, taps)
    }

    fn forward<T: Real>(&self, x: &[T], w: &[T], out: usize, xp: &mut Vec<T>, acc: &mut Vec<T>, dst: &mut [T]) {
        let (vol, span) = (self.volume(), self.span());
        self.pad(x, xp);
        acc.clear();
        acc.resize(out * span, T::zero());
        for (t, off) in self.offsets() {
            let b = Mat::strided(&xp[off..], self.channels, span, vol, 1);
            gemm_into(self.tap(w, out, t), b, T::one(), MatMut::strided(acc, out, span, span, 1));
        }
        self.gather(acc, out, dst);
    }
}

fn check_rank5(op: &'static str, shape: &[usize]) -> Result<()> {
    if shape.len() != 5 {
        return Err(shape_err(op, format!("expected [N,C,D,H,W], got {shape:?}")));
    }
    Ok(())
}

fn sum_bias<T: Real>(grad: &Tensor<T>, channels: usize) -> Tensor<T> {
    let s = grad.shape();
    let per = s[2] * s[3] * s[4];
    let mut gb = Tensor::zeros(&[channels]);
    for (i, chunk) in grad.data().chunks(per).enumerate() {
        gb.data_mut()[i % channels] += chunk.iter().copied().sum::<T>();
    }
    gb
}

struct Conv3dRule {
    low: Lowering,
    shifted: Option<Shifted>,
    out_channels: usize,
}

impl<T: Real> Backward<T> for Conv3dRule {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let low = self.low;
        let (o, rows, p, big) = (self.out_channels, low.rows(), low.small_len(), low.big_len());
        let batch = x.shape()[0];
        let pointwise = low.geo.is_pointwise();
        let mut gx = ctx.needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gw = ctx.needs[1].then(|| Tensor::zeros(w.shape()));
        if let Some(sh) = self.shifted {
            let (vol, span) = (sh.volume(), sh.span());
            let (mut xp, mut dyq) = (Vec::new(), Vec::new());
            let mut dxp = Vec::new();
            for n in 0..batch {
                sh.scatter(&grad.data()[n * o * p..][..o * p], o, &mut dyq);
                let dy = Mat::new(&dyq, o, span);
                if let Some(gw) = gw.as_mut() {
                    sh.pad(&x.data()[n * low.channels * big..][..low.channels * big], &mut xp);
                    for (t, off) in sh.offsets() {
                        let xs = Mat::strided(&xp[off..], low.channels, span, vol, 1).t();
                        let taps = low.geo.taps();
                        let dst = MatMut::strided(&mut gw.data_mut()[t..], o, low.channels, low.channels * taps, taps);
                        gemm_into(dy, xs, T::one(), dst);
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    dxp.clear();
                    dxp.resize(low.channels * vol, T::zero());
                    for (t, off) in sh.offsets() {
                        let dst = MatMut::strided(&mut dxp[off..], low.channels, span, vol, 1);
                        gemm_into(sh.tap(w.data(), o, t).t(), dy, T::one(), dst);
                    }
                    sh.unpad(&dxp, &mut gx.data_mut()[n * low.channels * big..][..low.channels * big]);
                }
            }
            let gb = ctx.needs[2].then(|| sum_bias(grad, o));
            return vec![gx, gw, gb];
        }
        let mut col = Vec::new();
        let mut dcol = vec![T::zero(); if pointwise { 0 } else { rows * p }];
        for n in 0..batch {
            let xn = &x.data()[n * low.channels * big..][..low.channels * big];
            let dy = Mat::new(&grad.data()[n * o * p..][..o * p], o, p);
            if let Some(gw) = gw.as_mut() {
                let cols: &[T] = if pointwise {
                    xn
                } else {
                    low.im2col(xn, &mut col);
                    &col
                };
                gemm(dy, Mat::new(cols, rows, p).t(), T::one(), gw.data_mut());
            }
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx.data_mut()[n * low.channels * big..][..low.channels * big];
                let wm = Mat::new(w.data(), o, rows).t();
                if pointwise {
                    gemm(wm, dy, T::zero(), dst);
                } else {
                    gemm(wm, dy, T::zero(), &mut dcol);
                    low.col2im(&dcol, dst);
                }
            }
        }
        let gb = ctx.needs[2].then(|| sum_bias(grad, o));
        vec![gx, gw, gb]
    }
}

/// Cross-correlation of `x [N,C,D,H,W]` with `weight [O,C,kD,kH,kW]` plus
/// `bias [O]`.
pub fn conv3d<T: Real>(g: &mut Graph<T>, x: Var, weight: Var, bias: Var, geo: ConvGeometry) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let ws = g.shape(weight).to_vec();
    check_rank5("conv3d", &xs)?;
    if ws.len() != 5 || ws[1] != xs[1] || ws[2..] != geo.kernel || g.shape(bias) != [ws[0]] {
        return Err(shape_err(
            "conv3d",
            format!("input {xs:?}, weight {ws:?}, bias {:?}, kernel {:?}", g.shape(bias), geo.kernel),
        ));
    }
    let big = [xs[2], xs[3], xs[4]];
    let small = geo.conv_out(big)?;
    let low = Lowering { channels: xs[1], big, small, geo };
    let (o, rows, p) = (ws[0], low.rows(), low.small_len());
    let batch = xs[0];
    let mut out = Tensor::zeros(&[batch, o, small[0], small[1], small[2]]);
    let xv = g.value(x).data();
    let wv = g.value(weight).data();
    let bv = g.value(bias).data();
    let shifted = Shifted::new(&low);
    let (mut col, mut acc) = (Vec::new(), Vec::new());
    for n in 0..batch {
        let xn = &xv[n * low.channels * low.big_len()..][..low.channels * low.big_len()];
        let dst = &mut out.data_mut()[n * o * p..][..o * p];
        if let Some(sh) = shifted {
            sh.forward(xn, wv, o, &mut col, &mut acc, dst);
            for (chunk, &b) in dst.chunks_mut(p).zip(bv) {
                chunk.iter_mut().for_each(|v| *v += b);
            }
            continue;
        }
        for (chunk, &b) in dst.chunks_mut(p).zip(bv) {
            chunk.fill(b);
        }
        let cols: &[T] = if geo.is_pointwise() {
            xn
        } else {
            low.im2col(xn, &mut col);
            &col
        };
        gemm(Mat::new(wv, o, rows), Mat::new(cols, rows, p), T::one(), dst);
    }
    Ok(g.record(
        out,
        &[x, weight, bias],
        Conv3dRule {
            low,
            shifted,
            out_channels: o,
        },
    ))
}

struct ConvTransposeRule {
    low: Lowering,
    in_channels: usize,
}

impl<T: Real> Backward<T> for ConvTransposeRule {
    fn name(&self) -> &'static str {
        "conv_transpose3d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let low = self.low;
        let (ci, rows, p, big) = (self.in_channels, low.rows(), low.small_len(), low.big_len());
        let batch = x.shape()[0];
        let mut gx = ctx.needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gw = ctx.needs[1].then(|| Tensor::zeros(w.shape()));
        let mut col = Vec::new();
        for n in 0..batch {
            low.im2col(&grad.data()[n * low.channels * big..][..low.channels * big], &mut col);
            let cm = Mat::new(&col, rows, p);
            if let Some(gx) = gx.as_mut() {
                gemm(
                    Mat::new(w.data(), ci, rows),
                    cm,
                    T::zero(),
                    &mut gx.data_mut()[n * ci * p..][..ci * p],
                );
            }
            if let Some(gw) = gw.as_mut() {
                gemm(Mat::new(&x.data()[n * ci * p..][..ci * p], ci, p), cm.t(), T::one(), gw.data_mut());
            }
        }
        let gb = ctx.needs[2].then(|| sum_bias(grad, low.channels));
        vec![gx, gw, gb]
    }
}

/// Transposed convolution of `x [N,I,D,H,W]` with `weight [I,O,kD,kH,kW]`
/// plus `bias [O]`.
pub fn conv_transpose3d<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    weight: Var,
    bias: Var,
    geo: ConvGeometry,
) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let ws = g.shape(weight).to_vec();
    check_rank5("conv_transpose3d", &xs)?;
    if ws.len() != 5 || ws[0] != xs[1] || ws[2..] != geo.kernel || g.shape(bias) != [ws[1]] {
        return Err(shape_err(
            "conv_transpose3d",
            format!("input {xs:?}, weight {ws:?}, bias {:?}, kernel {:?}", g.shape(bias), geo.kernel),
        ));
    }
    let small = [xs[2], xs[3], xs[4]];
    let big = geo.transpose_out(small)?;
    let (ci, co) = (ws[0], ws[1]);
    let low = Lowering { channels: co, big, small, geo };
    // The anchor grid of `big` under `geo` must be exactly `small`.
    let anchors = geo.conv_out(big)?;
    if anchors != small {
        return Err(shape_err(
            "conv_transpose3d",
            format!("output {big:?} does not map back onto input {small:?}"),
        ));
    }
    let (rows, p, bl) = (low.rows(), low.small_len(), low.big_len());
    let batch = xs[0];
    let mut out = Tensor::zeros(&[batch, co, big[0], big[1], big[2]]);
    let xv = g.value(x).data();
    let wv = g.value(weight).data();
    let bv = g.value(bias).data();
    let mut col = vec![T::zero(); rows * p];
    for n in 0..batch {
        gemm(
            Mat::new(wv, ci, rows).t(),
            Mat::new(&xv[n * ci * p..][..ci * p], ci, p),
            T::zero(),
            &mut col,
        );
        let dst = &mut out.data_mut()[n * co * bl..][..co * bl];
        for (chunk, &b) in dst.chunks_mut(bl).zip(bv) {
            chunk.fill(b);
        }
        low.col2im(&col, dst);
    }
    Ok(g.record(out, &[x, weight, bias], ConvTransposeRule { low, in_channels: ci }))
}
