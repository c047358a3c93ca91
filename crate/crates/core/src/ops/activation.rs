use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Backward, BackwardCtx};
use crate::error::{shape_err, Result};
use crate::tensor::numel;
use crate::{Graph, Real, Tensor, Var};

struct LeakyReluRule<T>(T);

impl<T: Real> Backward<T> for LeakyReluRule<T> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let slope = self.0;
        // x == 0 takes the negative branch: derivative `slope`.
        vec![Some(grad.zip_map(ctx.inputs[0], |d, x| if x > T::zero() { d } else { d * slope }))]
    }
}

/// `x` for positive inputs, `slope·x` otherwise. `slope` must lie in (0, 1).
pub fn leaky_relu<T: Real>(g: &mut Graph<T>, x: Var, slope: T) -> Var {
    debug_assert!(slope > T::zero() && slope < T::one());
    let out = g.value(x).map(|v| if v > T::zero() { v } else { v * slope });
    g.record(out, &[x], LeakyReluRule(slope))
}

struct SigmoidRule;

impl<T: Real> Backward<T> for SigmoidRule {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.zip_map(ctx.output, |d, y| d * y * (T::one() - y)))]
    }
}

pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    let out = g.value(x).map(sigmoid_scalar);
    g.record(out, &[x], SigmoidRule)
}

/// (outer, axis, inner) extents around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

struct SoftmaxRule {
    axis: usize,
}

impl<T: Real> Backward<T> for SoftmaxRule {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (outer, len, inner) = split_axis(ctx.output.shape(), self.axis);
        let y = ctx.output.data();
        let d = grad.data();
        let mut out = Tensor::zeros(ctx.output.shape());
        let o = out.data_mut();
        for a in 0..outer {
            for b in 0..inner {
                let base = a * len * inner + b;
                let mut dot = T::zero();
                for k in 0..len {
                    let i = base + k * inner;
                    dot += d[i] * y[i];
                }
                for k in 0..len {
                    let i = base + k * inner;
                    o[i] = y[i] * (d[i] - dot);
                }
            }
        }
        vec![Some(out)]
    }
}

/// Softmax along `axis`, evaluated with max subtraction.
pub fn softmax<T: Real>(g: &mut Graph<T>, x: Var, axis: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if axis >= shape.len() {
        return Err(shape_err("softmax", format!("axis {axis} out of range for {shape:?}")));
    }
    let (outer, len, inner) = split_axis(&shape, axis);
    let src = g.value(x).data();
    let mut out = Tensor::zeros(&shape);
    let o = out.data_mut();
    for a in 0..outer {
        for b in 0..inner {
            let base = a * len * inner + b;
            let mut max = T::neg_infinity();
            for k in 0..len {
                max = max.max(src[base + k * inner]);
            }
            let mut total = T::zero();
            for k in 0..len {
                let e = (src[base + k * inner] - max).exp();
                o[base + k * inner] = e;
                total += e;
            }
            for k in 0..len {
                o[base + k * inner] /= total;
            }
        }
    }
    Ok(g.record(out, &[x], SoftmaxRule { axis }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_softmax(v: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[v.len()], v.to_vec()).unwrap());
        let y = softmax(&mut g, x, 0).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn leaky_relu_values_and_branch_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec(&[3], vec![2.0, -2.0, -1.0]).unwrap());
        let y = leaky_relu(&mut g, x, 0.01);
        assert_eq!(g.value(y).data()[0], 2.0);
        assert!((g.value(y).data()[1] + 0.02).abs() < 1e-15);
        let s = crate::ops::sum(&mut g, y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data()[2], 0.01);
        assert_eq!(grads.get(x).unwrap().data()[0], 1.0);
    }

    #[test]
    fn softmax_uniform_and_stable() {
        for v in run_softmax(&[0.0, 0.0, 0.0]) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = run_softmax(&[1000.0, 0.0]);
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] < 1e-300 + f64::EPSILON);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = run_softmax(&[0.3, -1.2, 2.5, 0.0]);
        let b = run_softmax(&[7.3, 5.8, 9.5, 7.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_inner_axis() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 2], |i| (i as f64 * 0.37).sin()));
        let y = softmax(&mut g, x, 1).unwrap();
        let d = g.value(y).data();
        for a in 0..2 {
            for b in 0..2 {
                let s: f64 = (0..3).map(|k| d[a * 6 + k * 2 + b]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(sigmoid_scalar(-1000.0f64), 0.0);
        assert_eq!(sigmoid_scalar(1000.0f64), 1.0);
        assert!((sigmoid_scalar(0.0f64) - 0.5).abs() < 1e-16);
    }
}
