//! Central-difference gradient oracle and the registry of differentiable
//! ops it is run against.
//!
//! The error of one coordinate is `|ga − gn| / max(1, |ga|, |gn|)`; a check
//! reports the maximum over every checked coordinate.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discriminator::{multiscale_l1, Discriminator, DiscriminatorConfig, DiscInputMode, NormMode};
use crate::error::{Error, Result};
use crate::losses::bce_dice_loss;
use crate::ops::{self, AttentionSpec, AttentionWeights, ConvGeometry};
use crate::params::{uniform, Bound};
use crate::{Graph, ParamStore, Tensor, Var};

/// Pass threshold for registry cases.
pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_EPS: f64 = 1e-6;

/// Result of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

impl GradReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Which coordinates of each trainable entry to perturb.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coords {
    All,
    /// At most this many, evenly strided through each entry.
    AtMost(usize),
}

fn eval(f: &mut impl FnMut(&mut Graph<f64>, &Bound) -> Result<Var>, store: &ParamStore<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let out = f(&mut g, &p)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::NotScalar { numel: v.numel() });
    }
    Ok(v.item())
}

/// Compare reverse-mode gradients of the scalar `f` with respect to every
/// trainable entry of `store` against central differences with step `eps`.
pub fn check_params(
    mut f: impl FnMut(&mut Graph<f64>, &Bound) -> Result<Var>,
    store: &ParamStore<f64>,
    eps: f64,
    coords: Coords,
) -> Result<GradReport> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps} outside [1e-6, 1e-3]")));
    }
    let base = eval(&mut f, store)?;
    if eval(&mut f, store)?.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic);
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, true);
    let out = f(&mut g, &p)?;
    let mut grads = g.backward(out)?;
    let analytic = store.collect_grads(&p, &mut grads);

    let mut work = store.clone();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (k, entry) in store.entries().iter().enumerate() {
        if !entry.trainable {
            continue;
        }
        let n = entry.value.numel();
        let step = match coords {
            Coords::All => 1,
            Coords::AtMost(m) => n.div_ceil(m.max(1)).max(1),
        };
        for i in (0..n).step_by(step) {
            let orig = entry.value.data()[i];
            work.entries_mut()[k].value.data_mut()[i] = orig + eps;
            let plus = eval(&mut f, &work)?;
            work.entries_mut()[k].value.data_mut()[i] = orig - eps;
            let minus = eval(&mut f, &work)?;
            work.entries_mut()[k].value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let ga = analytic[k].data()[i];
            let err = (ga - numeric).abs() / 1f64.max(ga.abs()).max(numeric.abs());
            report.coordinates += 1;
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst = Some((entry.name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// Single-input form: max relative error of `d f(x) / dx`.
pub fn finite_diff_check(
    mut f: impl FnMut(&mut Graph<f64>, Var) -> Result<Var>,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<f64> {
    let mut store = ParamStore::new();
    let id = store.add("x", x.clone());
    Ok(check_params(|g, p| f(g, p[id]), &store, eps, Coords::All)?.max_rel_error)
}

/// Reduce any tensor to a scalar through a fixed random weighting, so every
/// output element contributes a distinct cotangent.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = uniform(&mut rng, g.shape(y), 1.0);
    let w = g.constant(w);
    let prod = ops::mul(g, y, w)?;
    Ok(ops::sum(g, prod))
}

/// Entry of the gradient registry.
pub struct GradCase {
    pub name: &'static str,
    pub run: fn(u64) -> Result<GradReport>,
}

type CaseBody = Box<dyn FnMut(&mut Graph<f64>, &Bound) -> Result<Var>>;

fn run_weighted(store: ParamStore<f64>, seed: u64, mut body: CaseBody) -> Result<GradReport> {
    check_params(
        |g, p| {
            let y = body(g, p)?;
            weighted_sum(g, y, seed)
        },
        &store,
        DEFAULT_EPS,
        Coords::All,
    )
}

/// Uniform values with magnitude in `[margin, 1]` and random sign.
fn away_from_zero(rng: &mut impl Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(margin..=1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn conv_case(seed: u64, transpose: bool) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let (x, w, b, geo) = if transpose {
        let geo = ConvGeometry {
            kernel: [2, 3, 2],
            stride: [2, 2, 1],
            padding: [0, 1, 0],
            output_padding: [0, 1, 0],
        };
        (
            s.add("x", uniform(&mut rng, &[1, 3, 3, 4, 3], 1.0)),
            s.add("weight", uniform(&mut rng, &[3, 2, 2, 3, 2], 1.0)),
            s.add("bias", uniform(&mut rng, &[2], 1.0)),
            geo,
        )
    } else {
        let geo = ConvGeometry {
            kernel: [3, 3, 3],
            stride: [2, 1, 2],
            padding: [1, 1, 0],
            output_padding: [0; 3],
        };
        (
            s.add("x", uniform(&mut rng, &[2, 2, 5, 4, 5], 1.0)),
            s.add("weight", uniform(&mut rng, &[3, 2, 3, 3, 3], 1.0)),
            s.add("bias", uniform(&mut rng, &[3], 1.0)),
            geo,
        )
    };
    run_weighted(
        s,
        seed,
        Box::new(move |g, p| {
            if transpose {
                ops::conv_transpose3d(g, p[x], p[w], p[b], geo)
            } else {
                ops::conv3d(g, p[x], p[w], p[b], geo)
            }
        }),
    )
}

#[derive(Clone, Copy)]
enum Norm {
    Instance,
    Batch,
    Layer,
}

fn norm_case(seed: u64, kind: Norm) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let (shape, c): (&[usize], usize) = match kind {
        Norm::Instance => (&[2, 3, 3, 4, 3], 3),
        Norm::Batch => (&[2, 3, 2, 3, 2], 3),
        Norm::Layer => (&[2, 5, 8], 8),
    };
    let x = s.add("x", uniform(&mut rng, shape, 2.0));
    let gamma = s.add("scale", uniform(&mut rng, &[c], 1.5));
    let beta = s.add("shift", uniform(&mut rng, &[c], 1.0));
    let eps = ops::NORM_EPS;
    run_weighted(
        s,
        seed,
        Box::new(move |g, p| match kind {
            Norm::Instance => ops::instance_norm(g, p[x], p[gamma], p[beta], eps),
            Norm::Batch => Ok(ops::batch_norm(g, p[x], p[gamma], p[beta], eps)?.0),
            Norm::Layer => ops::layer_norm(g, p[x], p[gamma], p[beta], eps),
        }),
    )
}

fn unary_case(seed: u64, shape: &[usize], margin: f64, op: fn(&mut Graph<f64>, Var) -> Result<Var>) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", away_from_zero(&mut rng, shape, margin).map(|v| 3.0 * v));
    run_weighted(s, seed, Box::new(move |g, p| op(g, p[x])))
}

fn mha_case(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&mut rng, &[2, 5, 8], 1.0));
    let w = AttentionWeights::new(AttentionSpec::new(8, 2)?, &mut s, "attn", &mut rng)?;
    // Non-zero biases so their gradients are exercised at a generic point.
    for e in s.entries_mut() {
        if e.name.ends_with(".bias") {
            e.value = uniform(&mut rng, e.value.shape(), 0.5);
        }
    }
    run_weighted(s, seed, Box::new(move |g, p| ops::multi_head_attention(g, p[x], &w, p)))
}

fn bce_dice_case(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let shape = [2, 3, 3, 3, 4];
    let pred = s.add("pred", Tensor::from_fn(&shape, |_| rng.random_range(0.05..0.95)));
    let gt = Tensor::from_fn(&shape, |_| f64::from(u8::from(rng.random_bool(0.4))));
    check_params(
        move |g, p| {
            let t = g.constant(gt.clone());
            Ok(bce_dice_loss(g, p[pred], t)?.0)
        },
        &s,
        DEFAULT_EPS,
        Coords::All,
    )
}

fn multiscale_l1_case(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let shape = [1, 1, 8, 8, 8];
    let a = s.add("pred", uniform(&mut rng, &shape, 1.0));
    let b = uniform(&mut rng, &shape, 1.0);
    let cfg = DiscriminatorConfig {
        num_blocks: 3,
        base_channels: 3,
        max_channels: 6,
        input_mode: DiscInputMode::Raw,
        ..DiscriminatorConfig::default()
    };
    let disc = Discriminator::new(cfg, 1, &mut s, &mut rng)?;
    // The critic is frozen here; only the prediction is perturbed.
    for e in s.entries_mut() {
        if e.name.starts_with("d.") {
            e.trainable = false;
        }
    }
    check_params(
        move |g, p| {
            let bv = g.constant(b.clone());
            let x = ops::concat(g, &[p[a], bv], 0)?;
            // Train-mode norms never read the running statistics.
            let (feats, _) = disc.extract_features(g, p, &ParamStore::new(), x, NormMode::Train)?;
            let (fa, fb) = crate::discriminator::split_stack(g, &feats)?;
            multiscale_l1(g, &fa, &fb)
        },
        &s,
        DEFAULT_EPS,
        Coords::All,
    )
}

fn two_input_case(
    seed: u64,
    a_shape: &[usize],
    b_shape: &[usize],
    op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let a = s.add("a", uniform(&mut rng, a_shape, 1.0));
    let b = s.add("b", uniform(&mut rng, b_shape, 1.0));
    run_weighted(s, seed, Box::new(move |g, p| op(g, p[a], p[b])))
}

/// Every differentiable op with a registered check.
pub fn registry() -> Vec<GradCase> {
    fn case(name: &'static str, run: fn(u64) -> Result<GradReport>) -> GradCase {
        GradCase { name, run }
    }
    alloc::vec![
        case("conv3d", |s| conv_case(s, false)),
        case("conv_transpose3d", |s| conv_case(s, true)),
        case("instance_norm", |s| norm_case(s, Norm::Instance)),
        case("batch_norm", |s| norm_case(s, Norm::Batch)),
        case("layer_norm", |s| norm_case(s, Norm::Layer)),
        case("leaky_relu", |s| unary_case(s, &[4, 25], 1e-2 / 3.0, |g, x| Ok(ops::leaky_relu(g, x, 0.2)))),
        case("sigmoid", |s| unary_case(s, &[4, 25], 0.0, |g, x| Ok(ops::sigmoid(g, x)))),
        case("softmax", |s| unary_case(s, &[3, 4, 7], 0.0, |g, x| ops::softmax(g, x, 1))),
        case("multi_head_attention", mha_case),
        case("bce_dice_loss", bce_dice_case),
        case("multiscale_l1", multiscale_l1_case),
        case("linear", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut st = ParamStore::new();
            let x = st.add("x", uniform(&mut rng, &[2, 3, 6], 1.0));
            let w = st.add("weight", uniform(&mut rng, &[6, 5], 1.0));
            let b = st.add("bias", uniform(&mut rng, &[5], 1.0));
            run_weighted(st, s, Box::new(move |g, p| ops::linear(g, p[x], p[w], p[b])))
        }),
        case("batched_matmul", |s| two_input_case(s, &[3, 4, 5], &[3, 6, 5], |g, a, b| ops::batched_matmul(g, a, b, true))),
        case("mask_channels", |s| two_input_case(s, &[2, 4, 2, 3, 2], &[2, 3, 2, 3, 2], ops::mask_channels)),
        case("concat", |s| two_input_case(s, &[2, 3, 4], &[2, 2, 4], |g, a, b| ops::concat(g, &[a, b], 1))),
        case("permute", |s| unary_case(s, &[2, 3, 4, 5], 0.0, |g, x| ops::permute(g, x, &[2, 0, 3, 1]))),
        case("add_broadcast", |s| two_input_case(s, &[3, 4, 5], &[4, 5], ops::add_broadcast)),
        case("l1_mean", |s| {
            // Offsets keep every difference well away from the kink at zero.
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut st = ParamStore::new();
            let a = st.add("a", uniform(&mut rng, &[4, 6], 1.0));
            let offset = away_from_zero(&mut rng, &[4, 6], 0.1);
            let b = st.add("b", st.get(a).zip_map(&offset, |x, o| x + o));
            check_params(move |g, p| ops::l1_mean(g, p[a], p[b]), &st, DEFAULT_EPS, Coords::All)
        }),
    ]
}

/// Run the named case (or every case for `"all"`), returning `(name, report)`.
pub fn run(scope: &str, seed: u64) -> Result<Vec<(&'static str, GradReport)>> {
    let cases: Vec<GradCase> = registry().into_iter().filter(|c| scope == "all" || c.name == scope).collect();
    if cases.is_empty() {
        return Err(Error::Config(format!("unknown gradcheck op {scope:?}")));
    }
    cases.into_iter().map(|c| Ok((c.name, (c.run)(seed)?))).collect()
}
