//! Alternating adversarial training.
//!
//! The critic step maximizes the multi-scale L1 distance between the
//! critic's features of (image, prediction) and (image, target) by running
//! Adam on its negation, with the generator output held constant. The
//! generator step minimizes deep-supervised BCE + Dice plus the weighted
//! distance. Each step touches exactly one network: the other network's
//! parameters and running statistics are bound as constants.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, remap_labels, VolumeSample};
use crate::discriminator::{split_stack, Discriminator, DiscriminatorConfig, FeatureStack, NormMode};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig, REGION_CHANNELS};
use crate::losses::deep_supervision_loss;
use crate::ops::{self, BatchStats};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::Bound;
use crate::{Graph, ParamStore, Real, Tensor, Var};

/// Every knob of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many alternating steps, if set.
    pub max_steps: Option<usize>,
    /// Full, half and quarter resolution head weights (normalized on use).
    pub deep_supervision_weights: Vec<f64>,
    /// Weight of the feature distance in the generator objective.
    pub adversarial_weight: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    pub flip_probability: f64,
    pub seed: u64,
    /// Enhancing-tumor probability threshold used at inference.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 4,
            epochs: 1000,
            max_steps: None,
            deep_supervision_weights: alloc::vec![4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0],
            adversarial_weight: 1.0,
            critic_steps: 1,
            flip_probability: 0.5,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    /// Single-core preset: 32³ patches, batch 1, 300 steps.
    pub fn desk() -> Self {
        Self {
            generator: GeneratorConfig::desk(),
            batch_size: 1,
            epochs: 300,
            max_steps: Some(300),
            flip_probability: 0.0,
            seed: 20_240_607,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        let w = &self.deep_supervision_weights;
        if w.len() != self.generator.deep_supervision_heads || w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!(
                "need {} positive deep-supervision weights, got {w:?}",
                self.generator.deep_supervision_heads
            )));
        }
        if self.batch_size == 0 || self.critic_steps == 0 {
            return Err(Error::Config("batch_size and critic_steps must be positive".into()));
        }
        if !(self.adversarial_weight >= 0.0 && self.adversarial_weight.is_finite()) {
            return Err(Error::Config(format!("adversarial weight {} must be ≥ 0", self.adversarial_weight)));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_probability)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }

    /// Deep-supervision weights scaled to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.deep_supervision_weights.iter().sum();
        self.deep_supervision_weights.iter().map(|w| w / total).collect()
    }
}

/// One alternating step's losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    /// Generator objective: deep supervision + weighted feature distance.
    pub loss_g: f64,
    /// Critic objective (the negated feature distance it ascends).
    pub loss_d: f64,
    /// Weighted BCE part of the deep-supervision loss.
    pub bce: f64,
    /// Weighted `1 − soft Dice` part; in `[0, 1]`.
    pub dice: f64,
    pub deep_supervision: f64,
    /// Feature distance seen by the generator step.
    pub adversarial: f64,
}

/// Image batch `[N, C, D, H, W]` with its binary region targets `[N, 3, ..]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub image: Tensor<T>,
    pub target: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_samples(samples: &[VolumeSample]) -> Result<Self> {
        let images: Vec<Tensor<T>> = samples.iter().map(|s| s.image.cast()).collect();
        let targets: Vec<Tensor<T>> = samples.iter().map(|s| remap_labels::<T>(&s.labels).into_tensor()).collect();
        Ok(Self {
            image: Tensor::stack(&images)?,
            target: Tensor::stack(&targets)?,
        })
    }
}

/// Both networks, their parameters and optimizer states.
pub struct Trainer<T: Real> {
    cfg: TrainConfig,
    pub generator: Generator,
    pub g_params: ParamStore<T>,
    pub g_opt: AdamState<T>,
    pub critic: Discriminator,
    pub d_params: ParamStore<T>,
    pub d_opt: AdamState<T>,
    step: u64,
}

impl<T: Real> Trainer<T> {
    /// Initialize both networks from `cfg.seed`. The critic's block count is
    /// reduced if the patch is too small for it.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut g_params = ParamStore::new();
        let generator = Generator::new(cfg.generator.clone(), &mut g_params, &mut rng)?;
        let d_cfg = cfg.discriminator.fit_to(cfg.generator.patch);
        let in_channels = d_cfg.input_channels(cfg.generator.in_channels, REGION_CHANNELS);
        let mut d_params = ParamStore::new();
        let critic = Discriminator::new(d_cfg, in_channels, &mut d_params, &mut rng)?;
        Ok(Self {
            g_opt: AdamState::new(&g_params, cfg.adam),
            d_opt: AdamState::new(&d_params, cfg.adam),
            cfg,
            generator,
            g_params,
            critic,
            d_params,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Alternating steps completed so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Critic features of (image, prediction) and (image, target), computed
    /// as one batch so both halves share batch statistics.
    fn paired_features(
        &self,
        g: &mut Graph<T>,
        pd: &Bound,
        image: Var,
        pred: Var,
        target: Var,
    ) -> Result<(FeatureStack, FeatureStack, Vec<BatchStats<T>>)> {
        let xp = self.critic.disc_input(g, image, pred)?;
        let xt = self.critic.disc_input(g, image, target)?;
        let x = ops::concat(g, &[xp, xt], 0)?;
        let (stack, stats) = self.critic.extract_features(g, pd, &self.d_params, x, NormMode::Train)?;
        let (fp, ft) = split_stack(g, &stack)?;
        Ok((fp, ft, stats))
    }

    /// Feature distance between prediction and target under the current
    /// critic, without recording gradients or touching any state.
    pub fn feature_distance(&self, batch: &Batch<T>) -> Result<f64> {
        let mut g = Graph::new();
        let pg = self.g_params.bind(&mut g, false);
        let pd = self.d_params.bind(&mut g, false);
        let image = g.constant(batch.image.clone());
        let target = g.constant(batch.target.clone());
        let pred = self.generator.forward(&mut g, &pg, image)?.full_resolution();
        let (fp, ft, _) = self.paired_features(&mut g, &pd, image, pred, target)?;
        let d = crate::discriminator::multiscale_l1(&mut g, &fp, &ft)?;
        Ok(g.value(d).item().as_f64())
    }

    /// Generator objective on `batch` without updating anything.
    pub fn generator_objective(&self, batch: &Batch<T>) -> Result<LossReport> {
        let mut g = Graph::new();
        let (_, _, report) = self.generator_graph(&mut g, batch, false)?;
        Ok(report)
    }

    fn generator_graph(&self, g: &mut Graph<T>, batch: &Batch<T>, grad: bool) -> Result<(Bound, Var, LossReport)> {
        let pg = self.g_params.bind(g, grad);
        let image = g.constant(batch.image.clone());
        let out = self.generator.forward(g, &pg, image)?;
        let weights = self.cfg.normalized_weights();
        let (ds, parts) = deep_supervision_loss(g, &out.heads, &batch.target, &weights)?;
        let mut total = ds;
        let mut adversarial = 0.0;
        if self.cfg.adversarial_weight > 0.0 {
            let pd = self.d_params.bind(g, false);
            let target = g.constant(batch.target.clone());
            let (fp, ft, _) = self.paired_features(g, &pd, image, out.full_resolution(), target)?;
            let d = crate::discriminator::multiscale_l1(g, &fp, &ft)?;
            adversarial = g.value(d).item().as_f64();
            let d = ops::scale(g, d, T::lit(self.cfg.adversarial_weight));
            total = ops::add(g, ds, d)?;
        }
        let report = LossReport {
            step: self.step,
            loss_g: g.value(total).item().as_f64(),
            bce: parts.bce,
            dice: parts.dice,
            deep_supervision: g.value(ds).item().as_f64(),
            adversarial,
            ..LossReport::default()
        };
        Ok((pg, total, report))
    }

    /// One Adam step on the critic ascending the feature distance. Returns
    /// the distance before the update. The generator is not touched.
    pub fn discriminator_step(&mut self, batch: &Batch<T>) -> Result<f64> {
        let mut g = Graph::new();
        let pg = self.g_params.bind(&mut g, false);
        let pd = self.d_params.bind(&mut g, true);
        let image = g.constant(batch.image.clone());
        let target = g.constant(batch.target.clone());
        let pred = self.generator.forward(&mut g, &pg, image)?.full_resolution();
        let pred = g.detach(pred);
        let (fp, ft, stats) = self.paired_features(&mut g, &pd, image, pred, target)?;
        let distance = crate::discriminator::multiscale_l1(&mut g, &fp, &ft)?;
        let value = g.value(distance).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite { step: self.step, what: "critic feature distance" });
        }
        let objective = ops::scale(&mut g, distance, -T::one());
        let mut grads = g.backward(objective)?;
        let grads = self.d_params.collect_grads(&pd, &mut grads);
        adam_step(&mut self.d_params, &grads, &mut self.d_opt)?;
        self.critic.update_running_stats(&mut self.d_params, &stats)?;
        Ok(value)
    }

    /// One Adam step on the generator. The critic's parameters and running
    /// statistics are not touched.
    pub fn generator_step(&mut self, batch: &Batch<T>) -> Result<LossReport> {
        let mut g = Graph::new();
        let (pg, loss, report) = self.generator_graph(&mut g, batch, true)?;
        if !report.loss_g.is_finite() {
            return Err(Error::NonFinite { step: self.step, what: "generator loss" });
        }
        let mut grads = g.backward(loss)?;
        let grads = self.g_params.collect_grads(&pg, &mut grads);
        adam_step(&mut self.g_params, &grads, &mut self.g_opt)?;
        Ok(report)
    }

    /// `critic_steps` critic updates followed by one generator update.
    pub fn step(&mut self, batch: &Batch<T>) -> Result<LossReport> {
        let mut distance = 0.0;
        if self.cfg.adversarial_weight > 0.0 {
            for _ in 0..self.cfg.critic_steps {
                distance = self.discriminator_step(batch)?;
            }
        }
        let mut report = self.generator_step(batch)?;
        report.loss_d = -distance;
        self.step += 1;
        Ok(report)
    }

    /// Finest-head probabilities `[N, 3, D, H, W]` for `image [N, C, D, H, W]`.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        predict(&self.generator, &self.g_params, image)
    }
}

/// Finest-head probabilities of a generator without recording gradients.
pub fn predict<T: Real>(generator: &Generator, params: &ParamStore<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(image.clone());
    let out = generator.forward(&mut g, &p, x)?.full_resolution();
    Ok(g.value(out).clone())
}

/// Hooks for logging and checkpointing during [`train_loop`].
pub trait TrainObserver<T: Real> {
    fn on_step(&mut self, _report: &LossReport) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _epoch: usize, _trainer: &Trainer<T>) -> Result<()> {
        Ok(())
    }
}

impl<T: Real> TrainObserver<T> for () {}

/// How a training run ended.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: usize,
    pub skipped_steps: usize,
    pub last: Option<LossReport>,
}

/// Augment one sample: pad up to the patch if needed, crop a random patch,
/// flip axes at random.
pub fn augment(sample: &VolumeSample, patch: [usize; 3], flip_p: f64, rng: &mut ChaCha8Rng) -> Result<VolumeSample> {
    let e = sample.extents();
    let padded = if (0..3).any(|a| e[a] < patch[a]) {
        data::pad_volume(sample, core::array::from_fn(|a| e[a].max(patch[a])))?
    } else {
        sample.clone()
    };
    let cropped = data::random_crop(&padded, patch, rng)?;
    data::random_flip(&cropped, flip_p, rng)
}

/// Shuffle, augment and batch `samples` each epoch, alternating critic and
/// generator updates. Deterministic given the configuration. A non-finite
/// loss skips the step; two in a row abort the run.
pub fn train_loop<T: Real>(
    trainer: &mut Trainer<T>,
    samples: &[VolumeSample],
    observer: &mut impl TrainObserver<T>,
) -> Result<TrainSummary> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let cfg = trainer.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut summary = TrainSummary {
        steps: trainer.steps(),
        epochs: 0,
        skipped_steps: 0,
        last: None,
    };
    let mut consecutive_failures = 0;
    let done = |t: &Trainer<T>| cfg.max_steps.is_some_and(|m| t.steps() >= m as u64);
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if done(trainer) {
                break 'epochs;
            }
            let batch: Vec<VolumeSample> = chunk
                .iter()
                .map(|&i| augment(&samples[i], cfg.generator.patch, cfg.flip_probability, &mut rng))
                .collect::<Result<_>>()?;
            let batch = Batch::from_samples(&batch)?;
            match trainer.step(&batch) {
                Ok(report) => {
                    consecutive_failures = 0;
                    observer.on_step(&report)?;
                    summary.last = Some(report);
                }
                Err(err @ Error::NonFinite { .. }) => {
                    consecutive_failures += 1;
                    summary.skipped_steps += 1;
                    log::warn!("skipping step: {err}");
                    if consecutive_failures >= 2 {
                        return Err(err);
                    }
                    trainer.step += 1;
                }
                Err(err) => return Err(err),
            }
        }
        summary.epochs = epoch + 1;
        observer.on_epoch(epoch, trainer)?;
    }
    summary.steps = trainer.steps();
    Ok(summary)
}
