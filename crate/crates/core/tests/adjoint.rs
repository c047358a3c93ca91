use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgan_core::ops::{conv3d, conv_transpose3d, ConvGeometry};
use vgan_core::{Graph, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `<conv(x), y> == <x, conv_transpose(y)>` with the same weight tensor and
/// zero biases, for random shapes, strides and paddings.
#[test]
fn transpose_is_the_adjoint_of_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..20 {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(1..=3);
        let o = rng.random_range(1..=3);
        let kernel: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..=3));
        let stride: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..=2));
        let padding: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..kernel[a]));
        let input: [usize; 3] = std::array::from_fn(|a| kernel[a] + rng.random_range(0..=4));
        let mut geo = ConvGeometry {
            kernel,
            stride,
            padding,
            output_padding: [0; 3],
        };
        let out = geo.conv_out(input).unwrap();
        // Recover the exact input extents on the way back.
        geo.output_padding = std::array::from_fn(|a| (input[a] + 2 * padding[a] - kernel[a]) % stride[a]);
        assert_eq!(geo.transpose_out(out).unwrap(), input, "case {case}");

        let x = random(&mut rng, &[n, c, input[0], input[1], input[2]]);
        let y = random(&mut rng, &[n, o, out[0], out[1], out[2]]);
        let w = random(&mut rng, &[o, c, kernel[0], kernel[1], kernel[2]]);

        let mut g = Graph::new();
        let (xv, yv, wv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(w));
        let (bo, bc) = (g.constant(Tensor::zeros(&[o])), g.constant(Tensor::zeros(&[c])));
        let fwd = conv3d(&mut g, xv, wv, bo, geo).unwrap();
        let back = conv_transpose3d(&mut g, yv, wv, bc, geo).unwrap();
        let lhs = g.value(fwd).dot(&y);
        let rhs = x.dot(g.value(back));
        assert!(
            (lhs - rhs).abs() <= 1e-10,
            "case {case}: {lhs} vs {rhs} ({geo:?}, input {input:?})"
        );
    }
}
