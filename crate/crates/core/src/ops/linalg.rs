use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Backward, BackwardCtx};
use crate::error::{shape_err, Result};
use crate::real::{gemm, Mat};
use crate::{Graph, Real, Tensor, Var};

struct LinearRule {
    rows: usize,
    fan_in: usize,
    fan_out: usize,
}

impl<T: Real> Backward<T> for LinearRule {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (r, i, o) = (self.rows, self.fan_in, self.fan_out);
        let dy = Mat::new(grad.data(), r, o);
        let gx = ctx.needs[0].then(|| {
            let mut gx = Tensor::zeros(ctx.inputs[0].shape());
            gemm(dy, Mat::new(ctx.inputs[1].data(), i, o).t(), T::zero(), gx.data_mut());
            gx
        });
        let gw = ctx.needs[1].then(|| {
            let mut gw = Tensor::zeros(ctx.inputs[1].shape());
            gemm(Mat::new(ctx.inputs[0].data(), r, i).t(), dy, T::zero(), gw.data_mut());
            gw
        });
        let gb = ctx.needs[2].then(|| {
            let mut gb = Tensor::zeros(&[o]);
            for row in grad.data().chunks(o) {
                for (b, &d) in gb.data_mut().iter_mut().zip(row) {
                    *b += d;
                }
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

/// Affine map over the last axis: `x [.., in] · w [in, out] + b [out]`.
pub fn linear<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let ws = g.shape(w);
    let fan_in = *xs.last().ok_or_else(|| shape_err("linear", "rank-0 input"))?;
    if ws.len() != 2 || ws[0] != fan_in || g.shape(b) != [ws[1]] {
        return Err(shape_err(
            "linear",
            format!("input {xs:?}, weight {ws:?}, bias {:?}", g.shape(b)),
        ));
    }
    let fan_out = ws[1];
    let rows = g.value(x).numel() / fan_in.max(1);
    let mut out_shape = xs;
    *out_shape.last_mut().unwrap() = fan_out;
    let bias = g.value(b).data();
    let mut out = Vec::with_capacity(rows * fan_out);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(
        Mat::new(g.value(x).data(), rows, fan_in),
        Mat::new(g.value(w).data(), fan_in, fan_out),
        T::one(),
        &mut out,
    );
    let out = Tensor::from_vec(&out_shape, out)?;
    Ok(g.record(out, &[x, w, b], LinearRule { rows, fan_in, fan_out }))
}

struct BmmRule {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
}

impl BmmRule {
    fn b_mat<'a, T>(&self, data: &'a [T]) -> Mat<'a, T> {
        if self.trans_b {
            Mat::new(data, self.n, self.k).t()
        } else {
            Mat::new(data, self.k, self.n)
        }
    }
}

impl<T: Real> Backward<T> for BmmRule {
    fn name(&self) -> &'static str {
        "batched_matmul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut ga = ctx.needs[0].then(|| Tensor::zeros(ctx.inputs[0].shape()));
        let mut gb = ctx.needs[1].then(|| Tensor::zeros(ctx.inputs[1].shape()));
        for bi in 0..self.batch {
            let dy = Mat::new(&grad.data()[bi * m * n..][..m * n], m, n);
            let a = Mat::new(&ctx.inputs[0].data()[bi * m * k..][..m * k], m, k);
            let bdata = &ctx.inputs[1].data()[bi * k * n..][..k * n];
            if let Some(ga) = ga.as_mut() {
                // dA = dY · Bᵀ
                gemm(dy, self.b_mat(bdata).t(), T::zero(), &mut ga.data_mut()[bi * m * k..][..m * k]);
            }
            if let Some(gb) = gb.as_mut() {
                let dst = &mut gb.data_mut()[bi * k * n..][..k * n];
                if self.trans_b {
                    // B is stored [n, k]: dB = dYᵀ · A
                    gemm(dy.t(), a, T::zero(), dst);
                } else {
                    gemm(a.t(), dy, T::zero(), dst);
                }
            }
        }
        vec![ga, gb]
    }
}

/// Batched product `a [B,M,K] · b [B,K,N]`, or `a · bᵀ` with `b [B,N,K]`
/// when `trans_b` is set.
pub fn batched_matmul<T: Real>(g: &mut Graph<T>, a: Var, b: Var, trans_b: bool) -> Result<Var> {
    let (as_, bs) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] {
        return Err(shape_err("batched_matmul", format!("{as_:?} x {bs:?}")));
    }
    let (batch, m, k) = (as_[0], as_[1], as_[2]);
    let (kb, n) = if trans_b { (bs[2], bs[1]) } else { (bs[1], bs[2]) };
    if kb != k {
        return Err(shape_err("batched_matmul", format!("{as_:?} x {bs:?} (trans_b={trans_b})")));
    }
    let rule = BmmRule { batch, m, k, n, trans_b };
    let mut out = Tensor::zeros(&[batch, m, n]);
    for bi in 0..batch {
        let am = Mat::new(&g.value(a).data()[bi * m * k..][..m * k], m, k);
        let bm = rule.b_mat(&g.value(b).data()[bi * k * n..][..k * n]);
        gemm(am, bm, T::zero(), &mut out.data_mut()[bi * m * n..][..m * n]);
    }
    Ok(g.record(out, &[a, b], rule))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_hand_product() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.5]).unwrap());
        let b = g.constant(Tensor::from_vec(&[3], vec![0.5, 0.0, 0.0]).unwrap());
        let y = linear(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[5.5, 2.0, 0.0]);
    }

    #[test]
    fn bmm_transposed_equals_explicit() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.3).cos()));
        let bt = Tensor::from_fn(&[2, 5, 4], |i| (i as f64 * 0.7).sin());
        let b = g.constant(bt.clone());
        let y1 = batched_matmul(&mut g, a, b, true).unwrap();
        let bperm = crate::ops::permute(&mut g, b, &[0, 2, 1]).unwrap();
        let y2 = batched_matmul(&mut g, a, bperm, false).unwrap();
        assert!(g.value(y1).max_abs_diff(g.value(y2)) < 1e-14);
        assert_eq!(g.shape(y1), &[2, 3, 5]);
    }
}
