//! Feature-extracting critic and the multi-scale L1 distance between the
//! feature stacks of a prediction and of the ground truth.
//!
//! The distance averages, over blocks, each block's mean absolute feature
//! difference. Every block is normalized by its own element count because
//! the element count shrinks with every strided block.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::layers::{Conv3dSpec, NormAffine};
use crate::ops::{self, BatchStats, ConvGeometry};
use crate::params::{Bound, ParamId};
use crate::tensor::spatial3;
use crate::{Graph, ParamStore, Real, Tensor, Var};

/// How the critic sees an (image, region maps) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscInputMode {
    /// `image ⊙ map_r` for every region `r`: `C·R` channels.
    Masked,
    /// Image and maps concatenated: `C + R` channels.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub num_blocks: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub leaky_slope: f64,
    pub input_mode: DiscInputMode,
    pub bn_momentum: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_blocks: 6,
            base_channels: 16,
            max_channels: 128,
            leaky_slope: 0.2,
            input_mode: DiscInputMode::Masked,
            bn_momentum: 0.1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn channels(&self, block: usize) -> usize {
        (self.base_channels << block.min(24)).min(self.max_channels)
    }

    pub fn input_channels(&self, image_channels: usize, regions: usize) -> usize {
        match self.input_mode {
            DiscInputMode::Masked => image_channels * regions,
            DiscInputMode::Raw => image_channels + regions,
        }
    }

    /// Largest block count for which every block still halves the smallest
    /// extent down to at least one voxel.
    pub fn max_blocks_for(extents: [usize; 3]) -> usize {
        let min = extents.iter().copied().min().unwrap_or(0);
        if min == 0 {
            0
        } else {
            min.ilog2() as usize
        }
    }

    /// Copy with `num_blocks` reduced, if needed, so the coarsest block keeps
    /// at least two voxels per axis: with one voxel per sample and small
    /// batches, batch statistics make the features nearly piecewise
    /// constant. The reduction is logged.
    pub fn fit_to(&self, extents: [usize; 3]) -> Self {
        let fit = Self::max_blocks_for(extents).saturating_sub(1).max(1).min(self.num_blocks);
        if fit != self.num_blocks {
            log::info!(
                "discriminator: {} blocks do not fit extents {:?}; using {}",
                self.num_blocks,
                extents,
                fit
            );
        }
        Self {
            num_blocks: fit,
            ..self.clone()
        }
    }

    pub fn check_extents(&self, extents: [usize; 3]) -> Result<()> {
        if self.num_blocks == 0 || self.num_blocks > Self::max_blocks_for(extents) {
            return Err(Error::Config(format!(
                "{} stride-2 blocks need every extent ≥ 2^{}, got {:?}",
                self.num_blocks, self.num_blocks, extents
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.base_channels == 0 || self.max_channels == 0 {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky_slope {} outside (0, 1)", self.leaky_slope)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config(format!("bn_momentum {} outside (0, 1]", self.bn_momentum)));
        }
        Ok(())
    }
}

/// Batch-normalization mode for [`Discriminator::extract_features`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch moments (returned for running-stat updates).
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv3dSpec,
    norm: NormAffine,
    running_mean: ParamId,
    running_var: ParamId,
}

/// Per-block activations, captured after the activation function.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    pub layers: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    in_channels: usize,
    blocks: Vec<Block>,
}

impl Discriminator {
    /// Register parameters (prefixed `d.`) for inputs of `in_channels`.
    pub fn new<T: Real>(
        cfg: DiscriminatorConfig,
        in_channels: usize,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        let mut prev = in_channels;
        for b in 0..cfg.num_blocks {
            let c = cfg.channels(b);
            let name = format!("d.block{b}");
            blocks.push(Block {
                conv: Conv3dSpec::new(store, &format!("{name}.conv"), prev, c, ConvGeometry::cube(3, 2, 1), rng),
                norm: NormAffine::new(store, &format!("{name}.norm"), c),
                running_mean: store.add_buffer(&format!("{name}.norm.running_mean"), Tensor::zeros(&[c])),
                running_var: store.add_buffer(&format!("{name}.norm.running_var"), Tensor::ones(&[c])),
            });
            prev = c;
        }
        Ok(Self { cfg, in_channels, blocks })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Compose the critic input from `image [N,C,..]` and `maps [N,R,..]`.
    pub fn disc_input<T: Real>(&self, g: &mut Graph<T>, image: Var, maps: Var) -> Result<Var> {
        disc_input(g, image, maps, self.cfg.input_mode)
    }

    /// Run every block (3³ stride-2 conv → batch norm → LeakyReLU). In
    /// [`NormMode::Train`] the per-block batch moments are returned.
    pub fn extract_features<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        store: &ParamStore<T>,
        x: Var,
        mode: NormMode,
    ) -> Result<(FeatureStack, Vec<BatchStats<T>>)> {
        let s = g.shape(x).to_vec();
        if s.len() != 5 || s[1] != self.in_channels {
            return Err(shape_err(
                "extract_features",
                format!("expected [N,{},D,H,W], got {s:?}", self.in_channels),
            ));
        }
        self.cfg.check_extents(spatial3(&s))?;
        let slope = T::lit(self.cfg.leaky_slope);
        let eps = T::lit(ops::NORM_EPS);
        let mut layers = Vec::with_capacity(self.blocks.len());
        let mut stats = Vec::new();
        let mut cur = x;
        for block in &self.blocks {
            let h = block.conv.forward(g, p, cur)?;
            let h = match mode {
                NormMode::Train => {
                    let (h, st) = ops::batch_norm(g, h, p[block.norm.scale], p[block.norm.shift], eps)?;
                    stats.push(st);
                    h
                }
                NormMode::Eval => ops::batch_norm_eval(
                    g,
                    h,
                    p[block.norm.scale],
                    p[block.norm.shift],
                    store.get(block.running_mean).data(),
                    store.get(block.running_var).data(),
                    eps,
                )?,
            };
            cur = ops::leaky_relu(g, h, slope);
            layers.push(cur);
        }
        Ok((FeatureStack { layers }, stats))
    }

    /// Fold training-mode batch moments into the running statistics.
    pub fn update_running_stats<T: Real>(&self, store: &mut ParamStore<T>, stats: &[BatchStats<T>]) -> Result<()> {
        if stats.len() != self.blocks.len() {
            return Err(shape_err("update_running_stats", format!("{} stats for {} blocks", stats.len(), self.blocks.len())));
        }
        let momentum = T::lit(self.cfg.bn_momentum);
        for (block, st) in self.blocks.iter().zip(stats) {
            let mut mean = store.get(block.running_mean).clone();
            let mut var = store.get(block.running_var).clone();
            st.blend_into(mean.data_mut(), var.data_mut(), momentum);
            *store.get_mut(block.running_mean) = mean;
            *store.get_mut(block.running_var) = var;
        }
        Ok(())
    }
}

pub fn disc_input<T: Real>(g: &mut Graph<T>, image: Var, maps: Var, mode: DiscInputMode) -> Result<Var> {
    let (is, ms) = (g.shape(image), g.shape(maps));
    if is.len() != 5 || ms.len() != 5 || is[0] != ms[0] || is[2..] != ms[2..] {
        return Err(shape_err("disc_input", format!("image {is:?} vs maps {ms:?}")));
    }
    match mode {
        DiscInputMode::Masked => ops::mask_channels(g, image, maps),
        DiscInputMode::Raw => ops::concat(g, &[image, maps], 1),
    }
}

/// `(1/L) Σ_i mean_j |f_j^i(a) − f_j^i(b)|` over the `L` layers.
pub fn multiscale_l1<T: Real>(g: &mut Graph<T>, a: &FeatureStack, b: &FeatureStack) -> Result<Var> {
    if a.layers.len() != b.layers.len() || a.layers.is_empty() {
        return Err(shape_err(
            "multiscale_l1",
            format!("{} vs {} layers", a.layers.len(), b.layers.len()),
        ));
    }
    let mut total: Option<Var> = None;
    for (&fa, &fb) in a.layers.iter().zip(&b.layers) {
        let d = ops::l1_mean(g, fa, fb)?;
        total = Some(match total {
            Some(t) => ops::add(g, t, d)?,
            None => d,
        });
    }
    let n = T::lit(a.layers.len() as f64);
    Ok(ops::scale(g, total.expect("non-empty"), T::one() / n))
}

/// Split a feature stack computed on a batch `[2N, ..]` into the stacks of
/// the first and second halves.
pub fn split_stack<T: Real>(g: &mut Graph<T>, stack: &FeatureStack) -> Result<(FeatureStack, FeatureStack)> {
    let mut first = Vec::with_capacity(stack.layers.len());
    let mut second = Vec::with_capacity(stack.layers.len());
    for &layer in &stack.layers {
        let n = g.shape(layer)[0];
        if !n.is_multiple_of(2) {
            return Err(shape_err("split_stack", format!("odd batch {:?}", g.shape(layer))));
        }
        first.push(ops::narrow_outer(g, layer, 0, n / 2)?);
        second.push(ops::narrow_outer(g, layer, n / 2, n / 2)?);
    }
    Ok((FeatureStack { layers: first }, FeatureStack { layers: second }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stack(g: &mut Graph<f64>, layers: &[&[f64]]) -> FeatureStack {
        FeatureStack {
            layers: layers
                .iter()
                .map(|l| g.constant(Tensor::from_vec(&[l.len()], l.to_vec()).unwrap()))
                .collect(),
        }
    }

    #[test]
    fn hand_example_one_point_five() {
        let mut g = Graph::new();
        let a = stack(&mut g, &[&[1.0, 2.0]]);
        let b = stack(&mut g, &[&[2.0, 4.0]]);
        let d = multiscale_l1(&mut g, &a, &b).unwrap();
        assert_eq!(g.value(d).item(), 1.5);
        let same = multiscale_l1(&mut g, &a, &a).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
    }

    #[test]
    fn block_count_fits_extents() {
        assert_eq!(DiscriminatorConfig::max_blocks_for([64, 64, 64]), 6);
        assert_eq!(DiscriminatorConfig::max_blocks_for([32, 32, 32]), 5);
        let cfg = DiscriminatorConfig::default();
        assert_eq!(cfg.fit_to([160, 192, 160]).num_blocks, 6);
        assert_eq!(cfg.fit_to([64, 64, 64]).num_blocks, 5);
        assert_eq!(cfg.fit_to([32, 32, 32]).num_blocks, 4);
        assert!(cfg.check_extents([32, 64, 64]).is_err());
        assert!(cfg.check_extents([64, 64, 64]).is_ok());
    }

    #[test]
    fn six_blocks_halve_64_cube() {
        let cfg = DiscriminatorConfig {
            base_channels: 2,
            max_channels: 4,
            ..DiscriminatorConfig::default()
        };
        let mut store = ParamStore::<f32>::new();
        let d = Discriminator::new(cfg, 1, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[2, 1, 64, 64, 64]));
        let (feats, stats) = d.extract_features(&mut g, &p, &store, x, NormMode::Train).unwrap();
        let ext: Vec<usize> = feats.layers.iter().map(|&v| g.shape(v)[2]).collect();
        assert_eq!(ext, alloc::vec![32, 16, 8, 4, 2, 1]);
        assert_eq!(stats.len(), 6);
        assert!(feats.layers.iter().all(|&v| g.value(v).data().iter().all(|&e| e == 0.0)));
    }

    #[test]
    fn masked_input_has_twelve_channels() {
        let mut g = Graph::<f64>::new();
        let img = g.constant(Tensor::ones(&[1, 4, 2, 2, 2]));
        let maps = g.constant(Tensor::ones(&[1, 3, 2, 2, 2]));
        let x = disc_input(&mut g, img, maps, DiscInputMode::Masked).unwrap();
        assert_eq!(g.shape(x)[1], 12);
        let r = disc_input(&mut g, img, maps, DiscInputMode::Raw).unwrap();
        assert_eq!(g.shape(r)[1], 7);
        let bad = g.constant(Tensor::ones(&[1, 3, 2, 2, 1]));
        assert!(disc_input(&mut g, img, bad, DiscInputMode::Masked).is_err());
    }

    #[test]
    fn split_stack_separates_halves() {
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::from_fn(&[2, 3, 1, 1, 2], |i| i as f64));
        let (a, b) = split_stack(&mut g, &FeatureStack { layers: alloc::vec![v] }).unwrap();
        assert_eq!(g.value(a.layers[0]).data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(g.value(b.layers[0]).data(), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
        assert_eq!(g.shape(b.layers[0]), &[1, 3, 1, 1, 2]);
    }
}
