//! Instance, batch and layer normalization with affine scale/shift.
//!
//! All three share one kernel: the input is partitioned into groups (each a
//! set of equally long contiguous segments), every group is standardized with
//! its biased moments, and a per-channel or per-feature affine map follows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Backward, BackwardCtx};
use crate::error::{shape_err, Result};
use crate::tensor::numel;
use crate::{Graph, Real, Tensor, Var};

/// Default epsilon for every normalization.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy)]
enum Affine {
    /// One parameter per group, indexed `group % modulus`.
    PerGroup(usize),
    /// One parameter per position inside a segment.
    PerFeature,
}

#[derive(Clone, Copy)]
struct Layout {
    groups: usize,
    segs: usize,
    seg_len: usize,
    seg_stride: usize,
    group_stride: usize,
    affine: Affine,
}

impl Layout {
    fn count(&self) -> usize {
        self.segs * self.seg_len
    }

    #[inline]
    fn seg_start(&self, group: usize, seg: usize) -> usize {
        group * self.group_stride + seg * self.seg_stride
    }
}

struct Normalized<T> {
    out: Tensor<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
}

fn normalize<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T], eps: T, layout: Layout) -> Normalized<T> {
    let xd = x.data();
    let m = T::lit(layout.count() as f64);
    let mut out = Tensor::zeros(x.shape());
    let mut xhat = vec![T::zero(); xd.len()];
    let mut inv_std = Vec::with_capacity(layout.groups);
    let mut means = Vec::with_capacity(layout.groups);
    let mut vars = Vec::with_capacity(layout.groups);
    for gi in 0..layout.groups {
        let mut mean = T::zero();
        for s in 0..layout.segs {
            let st = layout.seg_start(gi, s);
            mean += xd[st..st + layout.seg_len].iter().copied().sum::<T>();
        }
        mean /= m;
        let mut var = T::zero();
        for s in 0..layout.segs {
            let st = layout.seg_start(gi, s);
            for &v in &xd[st..st + layout.seg_len] {
                var += (v - mean) * (v - mean);
            }
        }
        var /= m;
        let inv = T::one() / (var + eps).sqrt();
        for s in 0..layout.segs {
            let st = layout.seg_start(gi, s);
            for j in 0..layout.seg_len {
                let i = st + j;
                let h = (xd[i] - mean) * inv;
                xhat[i] = h;
                let p = match layout.affine {
                    Affine::PerGroup(modulus) => gi % modulus,
                    Affine::PerFeature => j,
                };
                out.data_mut()[i] = gamma[p] * h + beta[p];
            }
        }
        inv_std.push(inv);
        means.push(mean);
        vars.push(var);
    }
    Normalized {
        out,
        xhat,
        inv_std,
        mean: means,
        var: vars,
    }
}

struct NormRule<T> {
    layout: Layout,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    name: &'static str,
}

impl<T: Real> Backward<T> for NormRule<T> {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let layout = self.layout;
        let gamma = ctx.inputs[1].data();
        let dy = grad.data();
        let m = T::lit(layout.count() as f64);
        let mut gx = ctx.needs[0].then(|| Tensor::zeros(ctx.inputs[0].shape()));
        let mut gg = Tensor::zeros(ctx.inputs[1].shape());
        let mut gb = Tensor::zeros(ctx.inputs[2].shape());
        let param = |gi: usize, j: usize| match layout.affine {
            Affine::PerGroup(modulus) => gi % modulus,
            Affine::PerFeature => j,
        };
        for gi in 0..layout.groups {
            let mut sum1 = T::zero();
            let mut sum2 = T::zero();
            for s in 0..layout.segs {
                let st = layout.seg_start(gi, s);
                for j in 0..layout.seg_len {
                    let i = st + j;
                    let p = param(gi, j);
                    let dh = dy[i] * gamma[p];
                    sum1 += dh;
                    sum2 += dh * self.xhat[i];
                    gg.data_mut()[p] += dy[i] * self.xhat[i];
                    gb.data_mut()[p] += dy[i];
                }
            }
            if let Some(gx) = gx.as_mut() {
                let scale = self.inv_std[gi] / m;
                let gxd = gx.data_mut();
                for s in 0..layout.segs {
                    let st = layout.seg_start(gi, s);
                    for j in 0..layout.seg_len {
                        let i = st + j;
                        let dh = dy[i] * gamma[param(gi, j)];
                        gxd[i] = scale * (m * dh - sum1 - self.xhat[i] * sum2);
                    }
                }
            }
        }
        vec![gx, ctx.needs[1].then_some(gg), ctx.needs[2].then_some(gb)]
    }
}

fn check_affine<T: Real>(g: &Graph<T>, op: &'static str, x: Var, gamma: Var, beta: Var, len: usize) -> Result<()> {
    if g.shape(gamma) != [len] || g.shape(beta) != [len] {
        return Err(shape_err(
            op,
            format!(
                "input {:?} needs affine params of shape [{len}], got {:?} and {:?}",
                g.shape(x),
                g.shape(gamma),
                g.shape(beta)
            ),
        ));
    }
    Ok(())
}

fn record_norm<T: Real>(
    g: &mut Graph<T>,
    name: &'static str,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: T,
    layout: Layout,
) -> (Var, Vec<T>, Vec<T>) {
    let n = normalize(g.value(x), g.value(gamma).data(), g.value(beta).data(), eps, layout);
    let rule = NormRule {
        layout,
        xhat: n.xhat,
        inv_std: n.inv_std,
        name,
    };
    (g.record(n.out, &[x, gamma, beta], rule), n.mean, n.var)
}

/// Per-sample, per-channel standardization over the spatial voxels of
/// `x [N,C,...]`, then `gamma[c]·x̂ + beta[c]`.
pub fn instance_norm<T: Real>(g: &mut Graph<T>, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() < 3 || numel(&s[2..]) < 2 {
        return Err(shape_err("instance_norm", format!("need [N,C,spatial..] with ≥ 2 voxels, got {s:?}")));
    }
    check_affine(g, "instance_norm", x, gamma, beta, s[1])?;
    let voxels = numel(&s[2..]);
    let layout = Layout {
        groups: s[0] * s[1],
        segs: 1,
        seg_len: voxels,
        seg_stride: 0,
        group_stride: voxels,
        affine: Affine::PerGroup(s[1]),
    };
    Ok(record_norm(g, "instance_norm", x, gamma, beta, eps, layout).0)
}

/// Per-channel batch moments from a training-mode [`batch_norm`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n − 1) variance, the quantity blended into running stats.
    pub var_unbiased: Vec<T>,
}

impl<T: Real> BatchStats<T> {
    /// `running ← (1 − momentum)·running + momentum·batch` for mean and variance.
    pub fn blend_into(&self, running_mean: &mut [T], running_var: &mut [T], momentum: T) {
        let keep = T::one() - momentum;
        for (r, &b) in running_mean.iter_mut().zip(&self.mean) {
            *r = keep * *r + momentum * b;
        }
        for (r, &b) in running_var.iter_mut().zip(&self.var_unbiased) {
            *r = keep * *r + momentum * b;
        }
    }
}

/// Training-mode batch normalization of `x [N,C,...]` over batch and spatial
/// axes per channel. Returns the output and the batch moments; the caller
/// decides whether to fold them into running statistics.
pub fn batch_norm<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: T,
) -> Result<(Var, BatchStats<T>)> {
    let s = g.shape(x).to_vec();
    if s.len() < 2 || s[0] * numel(&s[2..]) < 2 {
        return Err(shape_err(
            "batch_norm",
            format!("training mode needs ≥ 2 values per channel, got {s:?}"),
        ));
    }
    check_affine(g, "batch_norm", x, gamma, beta, s[1])?;
    let voxels = numel(&s[2..]);
    let layout = Layout {
        groups: s[1],
        segs: s[0],
        seg_len: voxels,
        seg_stride: s[1] * voxels,
        group_stride: voxels,
        affine: Affine::PerGroup(s[1]),
    };
    let count = T::lit(layout.count() as f64);
    let (out, mean, var) = record_norm(g, "batch_norm", x, gamma, beta, eps, layout);
    let var_unbiased = var.iter().map(|&v| v * count / (count - T::one())).collect();
    Ok((out, BatchStats { mean, var_unbiased }))
}

struct ChannelAffineRule<T> {
    channels: usize,
    voxels: usize,
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> Backward<T> for ChannelAffineRule<T> {
    fn name(&self) -> &'static str {
        "batch_norm_eval"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let gamma = ctx.inputs[1].data();
        let c_n = self.channels;
        let mut gg = Tensor::zeros(&[c_n]);
        let mut gb = Tensor::zeros(&[c_n]);
        let mut gx = Tensor::zeros(grad.shape());
        for (i, chunk) in grad.data().chunks(self.voxels).enumerate() {
            let c = i % c_n;
            let k = gamma[c] * self.inv_std[c];
            for (j, &d) in chunk.iter().enumerate() {
                let e = i * self.voxels + j;
                gx.data_mut()[e] = d * k;
                gg.data_mut()[c] += d * self.xhat[e];
                gb.data_mut()[c] += d;
            }
        }
        vec![ctx.needs[0].then_some(gx), ctx.needs[1].then_some(gg), ctx.needs[2].then_some(gb)]
    }
}

/// Inference-mode batch normalization with frozen statistics:
/// `gamma·(x − mean)/sqrt(var + eps) + beta` per channel.
pub fn batch_norm_eval<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() < 2 {
        return Err(shape_err("batch_norm_eval", format!("need [N,C,..], got {s:?}")));
    }
    check_affine(g, "batch_norm_eval", x, gamma, beta, s[1])?;
    let c_n = s[1];
    if running_mean.len() != c_n || running_var.len() != c_n {
        return Err(shape_err("batch_norm_eval", "running statistics length"));
    }
    let voxels = numel(&s[2..]);
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let xv = g.value(x).data();
    let (gm, bt) = (g.value(gamma).data(), g.value(beta).data());
    let mut xhat = Vec::with_capacity(xv.len());
    let mut out = Vec::with_capacity(xv.len());
    for (i, chunk) in xv.chunks(voxels).enumerate() {
        let c = i % c_n;
        for &v in chunk {
            let h = (v - running_mean[c]) * inv_std[c];
            xhat.push(h);
            out.push(gm[c] * h + bt[c]);
        }
    }
    let out = Tensor::from_vec(&s, out)?;
    Ok(g.record(
        out,
        &[x, gamma, beta],
        ChannelAffineRule {
            channels: c_n,
            voxels,
            xhat,
            inv_std,
        },
    ))
}

/// Standardize every vector along the last axis of `x [.., d]`, then apply
/// `gamma [d]`, `beta [d]`.
pub fn layer_norm<T: Real>(g: &mut Graph<T>, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let d = *s.last().ok_or_else(|| shape_err("layer_norm", "rank-0 input"))?;
    check_affine(g, "layer_norm", x, gamma, beta, d)?;
    let layout = Layout {
        groups: numel(&s) / d.max(1),
        segs: 1,
        seg_len: d,
        seg_stride: 0,
        group_stride: d,
        affine: Affine::PerFeature,
    };
    Ok(record_norm(g, "layer_norm", x, gamma, beta, eps, layout).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(g: &mut Graph<f64>, c: usize, scale: f64, shift: f64) -> (Var, Var) {
        (g.constant(Tensor::full(&[c], scale)), g.constant(Tensor::full(&[c], shift)))
    }

    fn moments(v: &[f64]) -> (f64, f64) {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64)
    }

    #[test]
    fn instance_norm_constant_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 2, 2, 2, 2], 7.0));
        let (s, b) = affine(&mut g, 2, 1.0, 0.0);
        let y = instance_norm(&mut g, x, s, b, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_standardizes() {
        let mut g = Graph::<f64>::new();
        // channel 0 ~ mean 5, std 2; channel 1 arbitrary
        let x = g.constant(Tensor::from_fn(&[1, 2, 3, 3, 3], |i| {
            if i < 27 {
                5.0 + 2.0 * if i % 2 == 0 { 1.0 } else { -1.0 } * ((i % 5) as f64 * 0.5 + 0.5)
            } else {
                (i as f64).sin() * 3.0 - 1.0
            }
        }));
        let (s, b) = affine(&mut g, 2, 1.0, 0.0);
        let y = instance_norm(&mut g, x, s, b, 1e-5).unwrap();
        for c in 0..2 {
            let (m, v) = moments(&g.value(y).data()[c * 27..(c + 1) * 27]);
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-5, "{m} {v}");
        }
    }

    #[test]
    fn instance_norm_affine_override() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 1, 2, 2, 2], |i| i as f64));
        let (s, b) = affine(&mut g, 1, 0.0, 3.0);
        let y = instance_norm(&mut g, x, s, b, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn batch_norm_train_constant_and_running_blend() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 1, 2, 2, 1], 4.0));
        let (s, b) = affine(&mut g, 1, 1.0, 0.0);
        let (y, _) = batch_norm(&mut g, x, s, b, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        // values 1..=4 in one channel: mean 2.5, unbiased var 5/3
        let x = g.constant(Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let (_, stats) = batch_norm(&mut g, x, s, b, 1e-5).unwrap();
        let (mut rm, mut rv) = ([0.0], [1.0]);
        stats.blend_into(&mut rm, &mut rv, 0.1);
        assert!((rm[0] - 0.25).abs() < 1e-15);
        assert!((rv[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_needs_two_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 1, 1, 1]));
        let (s, b) = affine(&mut g, 3, 1.0, 0.0);
        assert!(batch_norm(&mut g, x, s, b, 1e-5).is_err());
    }

    #[test]
    fn batch_norm_eval_formula() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[1, 1, 2], vec![3.0, -1.0]).unwrap());
        let (s, b) = affine(&mut g, 1, 2.0, 0.5);
        let y = batch_norm_eval(&mut g, x, s, b, &[1.0], &[4.0], 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[2.5, -1.5]);
    }

    #[test]
    fn layer_norm_is_shift_scale_invariant() {
        let mut g = Graph::<f64>::new();
        let base = Tensor::from_fn(&[2, 3, 5], |i| ((i * 7919) % 23) as f64 * 0.1 - 1.0);
        let x = g.constant(base.clone());
        let x2 = g.constant(base.map(|v| 3.5 * v - 2.0));
        let (s, b) = affine(&mut g, 5, 1.0, 0.0);
        // A positive eps would break exact invariance under scaling.
        let y1 = layer_norm(&mut g, x, s, b, 0.0).unwrap();
        let y2 = layer_norm(&mut g, x2, s, b, 0.0).unwrap();
        assert!(g.value(y1).max_abs_diff(g.value(y2)) < 1e-12);
        for row in g.value(y1).data().chunks(5) {
            let (m, v) = moments(row);
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
        let c = g.constant(Tensor::full(&[1, 5], 2.0));
        let yc = layer_norm(&mut g, c, s, b, 1e-5).unwrap();
        assert!(g.value(yc).data().iter().all(|&v| v == 0.0));
    }
}
