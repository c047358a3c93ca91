use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgan_core::data::{synth_phantom, Grade};
use vgan_core::discriminator::DiscriminatorConfig;
use vgan_core::generator::{Generator, GeneratorConfig, TransformerConfig};
use vgan_core::gradcheck::{check_params, Coords};
use vgan_core::losses::bce_dice_loss;
use vgan_core::training::{train_loop, Batch, LossReport, TrainConfig, TrainObserver, Trainer};
use vgan_core::{Graph, ParamStore, Result, Tensor};

fn toy(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        generator: GeneratorConfig {
            base_channels: 4,
            num_down: 3,
            transformer: TransformerConfig {
                num_layers: 1,
                embed_dim: 16,
                num_heads: 2,
                ffn_hidden: 32,
            },
            patch: [16, 16, 16],
            ..GeneratorConfig::default()
        },
        discriminator: DiscriminatorConfig {
            base_channels: 4,
            max_channels: 16,
            ..DiscriminatorConfig::default()
        },
        batch_size: 2,
        seed,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 1e-3;
    cfg
}

#[test]
fn full_scale_shapes() {
    let plan = GeneratorConfig::default().shape_plan().unwrap();
    assert_eq!(plan.bottleneck, [5, 6, 5]);
    assert_eq!(plan.tokens, 150);
    assert_eq!(plan.heads, vec![[160, 192, 160], [80, 96, 80], [40, 48, 40]]);
}

/// Two volumes per batch keep the critic's batch statistics at its coarsest
/// block well conditioned, so a fixed step is reliably monotone.
#[test]
fn each_player_moves_its_own_objective_the_right_way() {
    for seed in 0..10 {
        let samples = [
            synth_phantom(seed * 10, [16, 16, 16], Grade::Hgg).unwrap(),
            synth_phantom(seed * 10 + 1, [16, 16, 16], Grade::Lgg).unwrap(),
        ];
        let batch = Batch::<f64>::from_samples(&samples).unwrap();
        let mut t = Trainer::<f64>::new(toy(seed)).unwrap();

        let before = t.feature_distance(&batch).unwrap();
        let g_before = t.g_params.fingerprint();
        t.discriminator_step(&batch).unwrap();
        let after = t.feature_distance(&batch).unwrap();
        assert!(after > before, "seed {seed}: critic step {before} -> {after}");
        assert_eq!(t.g_params.fingerprint(), g_before);

        let before = t.generator_objective(&batch).unwrap().loss_g;
        let d_before = t.d_params.fingerprint();
        t.generator_step(&batch).unwrap();
        let after = t.generator_objective(&batch).unwrap().loss_g;
        assert!(after < before, "seed {seed}: generator step {before} -> {after}");
        assert_eq!(t.d_params.fingerprint(), d_before);
    }
}

/// Finite-difference check of the BCE + Dice loss through the whole generator
/// (four spatial levels, 16³ input), a few entries of every parameter sampled.
#[test]
fn full_generator_gradients_match_finite_differences() {
    let mut cfg = toy(3).generator;
    cfg.patch = [16, 16, 16];
    cfg.base_channels = 2;
    cfg.transformer.embed_dim = 8;
    cfg.transformer.ffn_hidden = 8;
    let mut store = ParamStore::<f64>::new();
    let net = Generator::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let image = Tensor::from_fn(&[1, 4, 16, 16, 16], |i| ((i * 7919) % 97) as f64 / 97.0 - 0.5);
    let target = Tensor::from_fn(&[1, 3, 16, 16, 16], |i| f64::from(u8::from((i * 31) % 7 < 2)));
    let report = check_params(
        |g: &mut Graph<f64>, p| {
            let x = g.constant(image.clone());
            let out = net.forward(g, p, x)?.full_resolution();
            let gt = g.constant(target.clone());
            Ok(bce_dice_loss(g, out, gt)?.0)
        },
        &store,
        1e-5,
        Coords::AtMost(3),
    )
    .unwrap();
    assert!(report.passed(1e-3), "{report:?}");
}

/// Smoke property on one phantom with the adversarial term off: averages of
/// consecutive 20-step windows strictly decrease.
#[test]
fn supervised_loss_moving_average_decreases() {
    struct Log(Vec<LossReport>);
    impl TrainObserver<f32> for Log {
        fn on_step(&mut self, r: &LossReport) -> Result<()> {
            self.0.push(*r);
            Ok(())
        }
    }
    let mut cfg = toy(7);
    cfg.adversarial_weight = 0.0;
    cfg.batch_size = 1;
    cfg.epochs = 100;
    cfg.max_steps = Some(100);
    let samples = [synth_phantom(7, [16, 16, 16], Grade::Hgg).unwrap()];
    let mut t = Trainer::<f32>::new(cfg).unwrap();
    let mut log = Log(Vec::new());
    train_loop(&mut t, &samples, &mut log).unwrap();
    assert_eq!(log.0.len(), 100);
    let windows: Vec<f64> = log
        .0
        .chunks(20)
        .map(|w| w.iter().map(|r| r.loss_g).sum::<f64>() / w.len() as f64)
        .collect();
    assert!(windows.windows(2).all(|p| p[1] < p[0]), "{windows:?}");
}
