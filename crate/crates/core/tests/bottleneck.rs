use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgan_core::generator::{Generator, GeneratorConfig, TransformerConfig};
use vgan_core::ops::NORM_EPS;
use vgan_core::{Graph, ParamStore, Tensor};

fn config(layers: usize, patch: usize, num_down: usize) -> GeneratorConfig {
    GeneratorConfig {
        base_channels: 4,
        num_down,
        transformer: TransformerConfig {
            num_layers: layers,
            embed_dim: 16,
            num_heads: 4,
            ffn_hidden: 24,
        },
        patch: [patch; 3],
        ..GeneratorConfig::default()
    }
}

fn build(cfg: GeneratorConfig, seed: u64) -> (Generator, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let net = Generator::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (net, store)
}

fn bottleneck(net: &Generator, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let y = net.transformer_bottleneck(&mut g, &p, xv).unwrap();
    g.value(y).clone()
}

#[test]
fn zeroed_output_projections_double_the_input() {
    let (net, mut store) = build(config(2, 32, 3), 1);
    for id in net.sublayer_output_params() {
        let t = store.get_mut(id);
        *t = Tensor::zeros(t.shape());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let x = Tensor::from_fn(&[2, 64, 16], |_| rng.random_range(-3.0..3.0));
        let y = bottleneck(&net, &store, &x);
        let err = y.max_abs_diff(&x.map(|v| 2.0 * v));
        assert!(err <= 1e-12, "max deviation {err}");
    }
}

#[test]
fn zero_depth_doubles_the_input() {
    let (net, store) = build(config(0, 32, 3), 3);
    let x = Tensor::from_fn(&[1, 64, 16], |i| (i as f64).sin());
    assert_eq!(bottleneck(&net, &store, &x), x.map(|v| 2.0 * v));
}

/// Straight-line evaluation of pre-norm attention and feed-forward sublayers
/// for a single token, where attention reduces to the value/output path.
#[test]
fn single_token_matches_hand_evaluation() {
    let cfg = config(2, 32, 3);
    let (net, mut store) = build(cfg.clone(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for e in store.entries_mut() {
        if e.name.starts_with("g.tf") {
            e.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    let d = cfg.transformer.embed_dim;
    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let got = bottleneck(&net, &store, &Tensor::from_vec(&[1, 1, d], x.clone()).unwrap());

    let get = |name: &str| store.get(store.find(name).unwrap()).data().to_vec();
    let affine = |v: &[f64], w: &[f64], b: &[f64]| -> Vec<f64> {
        let out = b.len();
        (0..out).map(|j| b[j] + v.iter().enumerate().map(|(i, &vi)| vi * w[i * out + j]).sum::<f64>()).collect()
    };
    let norm = |v: &[f64], pre: &str| -> Vec<f64> {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let (gamma, beta) = (get(&format!("{pre}.scale")), get(&format!("{pre}.shift")));
        v.iter()
            .enumerate()
            .map(|(i, a)| (a - mean) / (var + NORM_EPS).sqrt() * gamma[i] + beta[i])
            .collect()
    };
    let mut y = x.clone();
    for l in 0..cfg.transformer.num_layers {
        let pre = format!("g.tf{l}");
        let h = norm(&y, &format!("{pre}.ln_attn"));
        let v = affine(&h, &get(&format!("{pre}.attn.value.weight")), &get(&format!("{pre}.attn.value.bias")));
        let a = affine(&v, &get(&format!("{pre}.attn.output.weight")), &get(&format!("{pre}.attn.output.bias")));
        let mid: Vec<f64> = a.iter().zip(&y).map(|(a, b)| a + b).collect();
        let h = norm(&mid, &format!("{pre}.ln_ffn"));
        let h = affine(&h, &get(&format!("{pre}.ffn_in.weight")), &get(&format!("{pre}.ffn_in.bias")));
        let h: Vec<f64> = h.iter().map(|&v| if v > 0.0 { v } else { cfg.leaky_slope * v }).collect();
        let f = affine(&h, &get(&format!("{pre}.ffn_out.weight")), &get(&format!("{pre}.ffn_out.bias")));
        y = f.iter().zip(&mid).map(|(a, b)| a + b).collect();
    }
    let expect: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
    for (g, e) in got.data().iter().zip(&expect) {
        assert!((g - e).abs() < 1e-12, "{g} vs {e}");
    }
}
