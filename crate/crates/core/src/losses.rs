//! Segmentation objectives: mean binary cross-entropy plus soft Dice, and
//! its deep-supervision aggregate over the three decoder heads.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Backward, BackwardCtx};
use crate::error::{shape_err, Error, Result};
use crate::tensor::numel;
use crate::{ops, Graph, Real, Tensor, Var};

/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` inside the log.
pub const BCE_CLAMP: f64 = 1e-7;
/// Additive smoothing of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

/// Components of one [`bce_dice_loss`] evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BceDiceParts {
    pub bce: f64,
    /// `1 − soft Dice`, averaged over region channels; in `[0, 1]`.
    pub dice: f64,
}

struct BceDiceRule<T> {
    regions: usize,
    count: usize,
    /// Per region: (Σp·g, Σp, Σg).
    sums: Vec<(T, T, T)>,
}

impl<T: Real> BceDiceRule<T> {
    fn region_of(&self, i: usize, shape: &[usize]) -> usize {
        let inner = numel(&shape[2..]);
        (i / inner) % self.regions
    }
}

impl<T: Real> Backward<T> for BceDiceRule<T> {
    fn name(&self) -> &'static str {
        "bce_dice_loss"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (pred, gt) = (ctx.inputs[0], ctx.inputs[1]);
        let up = grad.item();
        let n = T::lit(self.count as f64);
        let r = T::lit(self.regions as f64);
        let s = T::lit(DICE_SMOOTH);
        let two = T::lit(2.0);
        let lo = T::lit(BCE_CLAMP);
        let hi = T::one() - lo;
        let per_region: Vec<(T, T)> = self
            .sums
            .iter()
            .map(|&(i, p, gs)| {
                let den = p + gs + s;
                (den, two * i + s)
            })
            .collect();
        let shape = pred.shape();
        let gp = Tensor::from_fn(shape, |i| {
            let p = pred.data()[i];
            let g = gt.data()[i];
            let d_bce = if p < lo || p > hi {
                T::zero()
            } else {
                (-g / p + (T::one() - g) / (T::one() - p)) / n
            };
            let (den, num) = per_region[self.region_of(i, shape)];
            let d_dice = -(two * g * den - num) / (den * den) / r;
            up * (d_bce + d_dice)
        });
        // The target is a constant.
        vec![Some(gp), None]
    }
}

/// `mean BCE(pred, gt) + mean_r (1 − soft Dice_r)` for `pred`, `gt` of shape
/// `[N, R, ..]`. Dice sums run over batch and voxels per region channel.
/// `gt` is treated as a constant.
pub fn bce_dice_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<(Var, BceDiceParts)> {
    let (ps, gs) = (g.shape(pred).to_vec(), g.shape(gt).to_vec());
    if ps != gs || ps.len() < 3 {
        return Err(shape_err("bce_dice_loss", format!("pred {ps:?} vs gt {gs:?}")));
    }
    let regions = ps[1];
    let inner = numel(&ps[2..]);
    let (p, t) = (g.value(pred).data(), g.value(gt).data());
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let mut bce = T::zero();
    let mut sums = vec![(T::zero(), T::zero(), T::zero()); regions];
    for (i, (&pv, &tv)) in p.iter().zip(t).enumerate() {
        let pc = pv.max(lo).min(hi);
        bce -= tv * pc.ln() + (T::one() - tv) * (T::one() - pc).ln();
        let acc = &mut sums[(i / inner) % regions];
        acc.0 += pv * tv;
        acc.1 += pv;
        acc.2 += tv;
    }
    let count = p.len();
    let bce = bce / T::lit(count as f64);
    let s = T::lit(DICE_SMOOTH);
    let dice = sums
        .iter()
        .map(|&(i, pv, tv)| T::one() - (T::lit(2.0) * i + s) / (pv + tv + s))
        .sum::<T>()
        / T::lit(regions as f64);
    let parts = BceDiceParts {
        bce: bce.as_f64(),
        dice: dice.as_f64(),
    };
    let rule = BceDiceRule { regions, count, sums };
    Ok((g.record(Tensor::scalar(bce + dice), &[pred, gt], rule), parts))
}

/// Any-voxel max pooling of a binary `[N, R, D, H, W]` map by `factor` per
/// axis: a coarse voxel is set if any of its children is.
pub fn downsample_max<T: Real>(gt: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = gt.shape();
    if s.len() != 5 || factor == 0 || s[2..].iter().any(|&e| e % factor != 0) {
        return Err(shape_err("downsample_max", format!("{s:?} by factor {factor}")));
    }
    if factor == 1 {
        return Ok(gt.clone());
    }
    let (d, h, w) = (s[2] / factor, s[3] / factor, s[4] / factor);
    let mut out = Tensor::full(&[s[0], s[1], d, h, w], T::neg_infinity());
    let src = gt.data();
    let o = out.data_mut();
    for nc in 0..s[0] * s[1] {
        for z in 0..s[2] {
            for y in 0..s[3] {
                for x in 0..s[4] {
                    let v = src[((nc * s[2] + z) * s[3] + y) * s[4] + x];
                    let dst = &mut o[((nc * d + z / factor) * h + y / factor) * w + x / factor];
                    *dst = dst.max(v);
                }
            }
        }
    }
    Ok(out)
}

/// Weighted sum of [`bce_dice_loss`] over heads at scales `1, 1/2, 1/4, ..`
/// against max-pooled targets. Returns the loss and the weighted parts.
pub fn deep_supervision_loss<T: Real>(
    g: &mut Graph<T>,
    heads: &[Var],
    gt: &Tensor<T>,
    weights: &[f64],
) -> Result<(Var, BceDiceParts)> {
    if heads.is_empty() || heads.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} heads but {} supervision weights",
            heads.len(),
            weights.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut parts = BceDiceParts::default();
    for (k, (&head, &w)) in heads.iter().zip(weights).enumerate() {
        let target = downsample_max(gt, 1 << k)?;
        let target = g.constant(target);
        let (loss, p) = bce_dice_loss(g, head, target)?;
        parts.bce += w * p.bce;
        parts.dice += w * p.dice;
        let weighted = ops::scale(g, loss, T::lit(w));
        total = Some(match total {
            Some(t) => ops::add(g, t, weighted)?,
            None => weighted,
        });
    }
    Ok((total.expect("non-empty"), parts))
}
