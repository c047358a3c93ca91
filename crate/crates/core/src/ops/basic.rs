use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Backward, BackwardCtx};
use crate::error::{shape_err, Result};
use crate::tensor::numel;
use crate::{Graph, Real, Tensor, Var};

fn same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(shape_err(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

struct AddRule;

impl<T: Real> Backward<T> for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        ctx.needs.iter().map(|&n| n.then(|| grad.clone())).collect()
    }
}

pub fn add<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "add", a, b)?;
    let out = g.value(a).zip_map(g.value(b), |x, y| x + y);
    Ok(g.record(out, &[a, b], AddRule))
}

struct SubRule;

impl<T: Real> Backward<T> for SubRule {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![
            ctx.needs[0].then(|| grad.clone()),
            ctx.needs[1].then(|| grad.map(|v| -v)),
        ]
    }
}

pub fn sub<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "sub", a, b)?;
    let out = g.value(a).zip_map(g.value(b), |x, y| x - y);
    Ok(g.record(out, &[a, b], SubRule))
}

struct MulRule;

impl<T: Real> Backward<T> for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![
            ctx.needs[0].then(|| grad.zip_map(ctx.inputs[1], |d, y| d * y)),
            ctx.needs[1].then(|| grad.zip_map(ctx.inputs[0], |d, x| d * x)),
        ]
    }
}

/// Elementwise product.
pub fn mul<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "mul", a, b)?;
    let out = g.value(a).zip_map(g.value(b), |x, y| x * y);
    Ok(g.record(out, &[a, b], MulRule))
}

struct ScaleRule<T>(T);

impl<T: Real> Backward<T> for ScaleRule<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let c = self.0;
        vec![Some(grad.map(|d| d * c))]
    }
}

/// Multiply by a constant.
pub fn scale<T: Real>(g: &mut Graph<T>, x: Var, c: T) -> Var {
    let out = g.value(x).map(|v| v * c);
    g.record(out, &[x], ScaleRule(c))
}

struct SumRule;

impl<T: Real> Backward<T> for SumRule {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(ctx.inputs[0].shape(), grad.item()))]
    }
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    let out = Tensor::scalar(g.value(x).sum());
    g.record(out, &[x], SumRule)
}

pub fn mean<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    let n = T::lit(g.value(x).numel() as f64);
    let s = sum(g, x);
    scale(g, s, T::one() / n)
}

struct AddBroadcastRule {
    inner: usize,
}

impl<T: Real> Backward<T> for AddBroadcastRule {
    fn name(&self) -> &'static str {
        "add_broadcast"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let gy = ctx.needs[1].then(|| {
            let mut acc = Tensor::zeros(ctx.inputs[1].shape());
            for chunk in grad.data().chunks(self.inner) {
                for (a, &d) in acc.data_mut().iter_mut().zip(chunk) {
                    *a += d;
                }
            }
            acc
        });
        vec![ctx.needs[0].then(|| grad.clone()), gy]
    }
}

/// `x + y` where `y`'s shape is a trailing suffix of `x`'s shape; `y` is
/// repeated over the leading axes.
pub fn add_broadcast<T: Real>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    let xs = g.shape(x);
    let ys = g.shape(y);
    if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
        return Err(shape_err("add_broadcast", format!("{ys:?} is not a suffix of {xs:?}")));
    }
    let inner = numel(ys);
    let yv = g.value(y).data();
    let mut out = g.value(x).clone();
    for chunk in out.data_mut().chunks_mut(inner) {
        for (o, &b) in chunk.iter_mut().zip(yv) {
            *o += b;
        }
    }
    Ok(g.record(out, &[x, y], AddBroadcastRule { inner }))
}

struct ReshapeRule;

impl<T: Real> Backward<T> for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = grad.clone().reshape(ctx.inputs[0].shape()).expect("reshape grad");
        vec![Some(g)]
    }
}

pub fn reshape<T: Real>(g: &mut Graph<T>, x: Var, shape: &[usize]) -> Result<Var> {
    let out = g.value(x).clone().reshape(shape)?;
    Ok(g.record(out, &[x], ReshapeRule))
}

fn permute_data<T: Real>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let src_shape = t.shape();
    let rank = src_shape.len();
    let mut src_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * src_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| src_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let src = t.data();
    let mut out = Vec::with_capacity(t.numel());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..t.numel() {
        out.push(src[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::from_vec(&out_shape, out).expect("permute shape")
}

struct PermuteRule {
    inverse: Vec<usize>,
}

impl<T: Real> Backward<T> for PermuteRule {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, _: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(permute_data(grad, &self.inverse))]
    }
}

/// Reorder axes: output axis `i` is input axis `axes[i]`.
pub fn permute<T: Real>(g: &mut Graph<T>, x: Var, axes: &[usize]) -> Result<Var> {
    let rank = g.shape(x).len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || core::mem::replace(&mut seen[a], true)) {
        return Err(shape_err("permute", format!("{axes:?} is not a permutation of rank {rank}")));
    }
    let mut inverse = vec![0; rank];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    let out = permute_data(g.value(x), axes);
    Ok(g.record(out, &[x], PermuteRule { inverse }))
}

struct ConcatRule {
    outer: usize,
    widths: Vec<usize>,
}

impl<T: Real> Backward<T> for ConcatRule {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let total: usize = self.widths.iter().sum();
        let mut start = 0;
        let mut out = Vec::with_capacity(self.widths.len());
        for (i, &w) in self.widths.iter().enumerate() {
            if ctx.needs[i] {
                let mut data = Vec::with_capacity(self.outer * w);
                for o in 0..self.outer {
                    data.extend_from_slice(&grad.data()[o * total + start..o * total + start + w]);
                }
                out.push(Some(Tensor::from_vec(ctx.inputs[i].shape(), data).expect("concat grad")));
            } else {
                out.push(None);
            }
            start += w;
        }
        out
    }
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat<T: Real>(g: &mut Graph<T>, xs: &[Var], axis: usize) -> Result<Var> {
    let first = xs.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
    let base = g.shape(*first).to_vec();
    if axis >= base.len() {
        return Err(shape_err("concat", format!("axis {axis} out of range for {base:?}")));
    }
    let mut axis_total = 0;
    for &v in xs {
        let s = g.shape(v);
        let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(shape_err("concat", format!("{s:?} vs {base:?} on axis {axis}")));
        }
        axis_total += s[axis];
    }
    let outer = numel(&base[..axis]);
    let inner = numel(&base[axis + 1..]);
    let widths: Vec<usize> = xs.iter().map(|&v| g.shape(v)[axis] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (&v, &w) in xs.iter().zip(&widths) {
            data.extend_from_slice(&g.value(v).data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = base;
    shape[axis] = axis_total;
    let out = Tensor::from_vec(&shape, data)?;
    Ok(g.record(out, xs, ConcatRule { outer, widths }))
}

struct NarrowRule {
    offset: usize,
}

impl<T: Real> Backward<T> for NarrowRule {
    fn name(&self) -> &'static str {
        "narrow_outer"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut gx = Tensor::zeros(ctx.inputs[0].shape());
        gx.data_mut()[self.offset..self.offset + grad.numel()].copy_from_slice(grad.data());
        vec![Some(gx)]
    }
}

/// Rows `start..start + len` of axis 0.
pub fn narrow_outer<T: Real>(g: &mut Graph<T>, x: Var, start: usize, len: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.is_empty() || start + len > s[0] || len == 0 {
        return Err(shape_err("narrow_outer", format!("rows {start}..{} of {s:?}", start + len)));
    }
    let row = numel(&s[1..]);
    let mut shape = s;
    shape[0] = len;
    let offset = start * row;
    let out = Tensor::from_vec(&shape, g.value(x).data()[offset..offset + len * row].to_vec())?;
    Ok(g.record(out, &[x], NarrowRule { offset }))
}

struct MaskRule {
    batch: usize,
    channels: usize,
    regions: usize,
    voxels: usize,
}

impl<T: Real> Backward<T> for MaskRule {
    fn name(&self) -> &'static str {
        "mask_channels"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (img, maps) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let (c_n, r_n, s_n) = (self.channels, self.regions, self.voxels);
        let gd = grad.data();
        let mut g_img = ctx.needs[0].then(|| Tensor::zeros(ctx.inputs[0].shape()));
        let mut g_map = ctx.needs[1].then(|| Tensor::zeros(ctx.inputs[1].shape()));
        for n in 0..self.batch {
            for r in 0..r_n {
                let m = &maps[(n * r_n + r) * s_n..][..s_n];
                for c in 0..c_n {
                    let x = &img[(n * c_n + c) * s_n..][..s_n];
                    let d = &gd[((n * r_n + r) * c_n + c) * s_n..][..s_n];
                    if let Some(gi) = g_img.as_mut() {
                        let gi = &mut gi.data_mut()[(n * c_n + c) * s_n..][..s_n];
                        for s in 0..s_n {
                            gi[s] += d[s] * m[s];
                        }
                    }
                    if let Some(gm) = g_map.as_mut() {
                        let gm = &mut gm.data_mut()[(n * r_n + r) * s_n..][..s_n];
                        for s in 0..s_n {
                            gm[s] += d[s] * x[s];
                        }
                    }
                }
            }
        }
        vec![g_img, g_map]
    }
}

/// Region-masked image channels: for `image [N,C,..]` and `maps [N,R,..]`
/// the output `[N,R·C,..]` holds `image[n,c] ⊙ maps[n,r]` at channel `r·C+c`.
pub fn mask_channels<T: Real>(g: &mut Graph<T>, image: Var, maps: Var) -> Result<Var> {
    let is = g.shape(image).to_vec();
    let ms = g.shape(maps).to_vec();
    if is.len() < 2 || ms.len() != is.len() || is[0] != ms[0] || is[2..] != ms[2..] {
        return Err(shape_err("mask_channels", format!("image {is:?} vs maps {ms:?}")));
    }
    let (batch, channels, regions) = (is[0], is[1], ms[1]);
    let voxels = numel(&is[2..]);
    let img = g.value(image).data();
    let mp = g.value(maps).data();
    let mut data = Vec::with_capacity(batch * regions * channels * voxels);
    for n in 0..batch {
        for r in 0..regions {
            let m = &mp[(n * regions + r) * voxels..][..voxels];
            for c in 0..channels {
                let x = &img[(n * channels + c) * voxels..][..voxels];
                data.extend(x.iter().zip(m).map(|(&a, &b)| a * b));
            }
        }
    }
    let mut shape = is.clone();
    shape[1] = regions * channels;
    let out = Tensor::from_vec(&shape, data)?;
    Ok(g.record(
        out,
        &[image, maps],
        MaskRule {
            batch,
            channels,
            regions,
            voxels,
        },
    ))
}

struct L1MeanRule;

impl<T: Real> Backward<T> for L1MeanRule {
    fn name(&self) -> &'static str {
        "l1_mean"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let n = T::lit(ctx.inputs[0].numel() as f64);
        let s = grad.item() / n;
        let sign = ctx.inputs[0].zip_map(ctx.inputs[1], |a, b| {
            if a > b {
                s
            } else if a < b {
                -s
            } else {
                T::zero()
            }
        });
        vec![
            ctx.needs[0].then(|| sign.clone()),
            ctx.needs[1].then(|| sign.map(|v| -v)),
        ]
    }
}

/// Mean absolute difference `Σ|a−b| / numel` as a scalar. The subgradient at
/// `a == b` is zero.
pub fn l1_mean<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "l1_mean", a, b)?;
    let (av, bv) = (g.value(a), g.value(b));
    let n = T::lit(av.numel() as f64);
    let total: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(g.record(Tensor::scalar(total / n), &[a, b], L1MeanRule))
}
