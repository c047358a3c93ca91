//! U-shaped segmentation generator: strided-conv encoder, transformer
//! bottleneck wrapped in an outer residual shortcut, transposed-conv decoder
//! with concatenated skips, and three sigmoid deep-supervision heads.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::layers::{Conv3dSpec, ConvNormAct, ConvTranspose3dSpec, Linear, NormAffine};
use crate::ops::{self, AttentionSpec, AttentionWeights, ConvGeometry};
use crate::params::{normal, Bound, ParamId};
use crate::tensor::spatial3;
use crate::{Graph, ParamStore, Real, Var};

/// Number of region channels emitted by every head (WT, TC, ET).
pub const REGION_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub ffn_hidden: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            embed_dim: 256,
            num_heads: 8,
            ffn_hidden: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub num_down: usize,
    pub transformer: TransformerConfig,
    pub deep_supervision_heads: usize,
    /// Patch extents `[D, H, W]`.
    pub patch: [usize; 3],
    pub leaky_slope: f64,
    /// Initial foreground probability of the supervision heads; their biases
    /// start at `logit(head_prior)`.
    pub head_prior: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            base_channels: 16,
            num_down: 5,
            transformer: TransformerConfig::default(),
            deep_supervision_heads: 3,
            patch: [160, 192, 160],
            leaky_slope: 0.01,
            head_prior: 0.1,
        }
    }
}

impl GeneratorConfig {
    /// 32³ patch, four downsamplings, two transformer layers of width 128.
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            num_down: 4,
            transformer: TransformerConfig {
                num_layers: 2,
                embed_dim: 128,
                num_heads: 4,
                ffn_hidden: 512,
            },
            patch: [32, 32, 32],
            ..Self::default()
        }
    }

    /// Channel count at pyramid level `level` (0 = full resolution): doubles
    /// per level from `base_channels`, capped at the embedding width.
    pub fn channels(&self, level: usize) -> usize {
        let doubled = self.base_channels.saturating_mul(1usize << level.min(usize::BITS as usize - 1));
        doubled.min(self.transformer.embed_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.head_prior > 0.0 && self.head_prior < 1.0) {
            return Err(Error::Config(format!("head_prior must lie in (0, 1), got {}", self.head_prior)));
        }
        let factor = 1usize << self.num_down;
        for (axis, &e) in self.patch.iter().enumerate() {
            if e == 0 || e % factor != 0 {
                return Err(Error::Config(format!(
                    "patch extent {e} on axis {axis} is not divisible by 2^{} = {factor}",
                    self.num_down
                )));
            }
        }
        if self.in_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.deep_supervision_heads != 3 {
            return Err(Error::Config(format!(
                "deep_supervision_heads must be 3, got {}",
                self.deep_supervision_heads
            )));
        }
        if self.num_down < self.deep_supervision_heads {
            return Err(Error::Config(format!(
                "num_down {} leaves fewer decoder levels than the {} supervision heads",
                self.num_down, self.deep_supervision_heads
            )));
        }
        AttentionSpec::new(self.transformer.embed_dim, self.transformer.num_heads)?;
        if self.channels(self.num_down) != self.transformer.embed_dim {
            return Err(Error::Config(format!(
                "bottleneck has {} channels but embed_dim is {}",
                self.channels(self.num_down),
                self.transformer.embed_dim
            )));
        }
        let bottleneck: usize = self.patch.iter().map(|e| e / factor).product();
        if bottleneck < 2 {
            return Err(Error::Config(
                "bottleneck must keep at least 2 voxels for instance normalization".into(),
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky_slope {} outside (0, 1)", self.leaky_slope)));
        }
        if self.transformer.ffn_hidden == 0 {
            return Err(Error::Config("ffn_hidden must be positive".into()));
        }
        Ok(())
    }

    /// Shape propagation through the network without allocating tensors.
    pub fn shape_plan(&self) -> Result<ShapePlan> {
        self.validate()?;
        let down = ConvGeometry::cube(3, 2, 1);
        let up = ConvGeometry::cube(2, 2, 0);
        let mut levels = Vec::with_capacity(self.num_down + 1);
        let mut extents = ConvGeometry::cube(3, 1, 1).conv_out(self.patch)?;
        levels.push((self.channels(0), extents));
        for level in 1..=self.num_down {
            extents = down.conv_out(extents)?;
            levels.push((self.channels(level), extents));
        }
        let bottleneck = extents;
        let mut decoder = Vec::with_capacity(self.num_down);
        let mut cur = bottleneck;
        for level in (0..self.num_down).rev() {
            cur = up.transpose_out(cur)?;
            if cur != levels[level].1 {
                return Err(shape_err("decode", format!("level {level}: {cur:?} vs skip {:?}", levels[level].1)));
            }
            decoder.push((self.channels(level), cur));
        }
        let heads = (0..self.deep_supervision_heads).map(|k| levels[k].1).collect();
        Ok(ShapePlan {
            levels,
            bottleneck,
            tokens: bottleneck.iter().product(),
            embed_dim: self.transformer.embed_dim,
            decoder,
            heads,
        })
    }
}

/// Result of [`GeneratorConfig::shape_plan`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    /// `(channels, extents)` of every encoder level, shallowest first.
    pub levels: Vec<(usize, [usize; 3])>,
    pub bottleneck: [usize; 3],
    pub tokens: usize,
    pub embed_dim: usize,
    /// `(channels, extents)` of every decoder level, deepest first.
    pub decoder: Vec<(usize, [usize; 3])>,
    /// Extents of the supervision heads, finest first.
    pub heads: Vec<[usize; 3]>,
}

/// Encoder activations, shallowest (full resolution) first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

#[derive(Clone, Debug)]
struct TransformerLayer {
    ln_attn: NormAffine,
    attn: AttentionWeights,
    ln_ffn: NormAffine,
    ffn_in: Linear,
    ffn_out: Linear,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    up: ConvTranspose3dSpec,
    fuse: ConvNormAct,
    refine: ConvNormAct,
}

/// Output of [`Generator::forward`].
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    /// Sigmoid probability maps `[N, 3, ..]`, finest first (scales 1, 1/2, 1/4).
    pub heads: Vec<Var>,
}

impl GeneratorOutput {
    pub fn full_resolution(&self) -> Var {
        self.heads[0]
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    stem: ConvNormAct,
    down: Vec<ConvNormAct>,
    position: ParamId,
    layers: Vec<TransformerLayer>,
    decoder: Vec<DecoderLevel>,
    heads: Vec<Conv3dSpec>,
}

impl Generator {
    /// Register all parameters (prefixed `g.`) in `store`.
    pub fn new<T: Real>(cfg: GeneratorConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        let plan = cfg.shape_plan()?;
        let k3 = ConvGeometry::cube(3, 1, 1);
        let stem = ConvNormAct::new(store, "g.enc0", cfg.in_channels, cfg.channels(0), k3, rng);
        let down = (1..=cfg.num_down)
            .map(|l| {
                ConvNormAct::new(
                    store,
                    &format!("g.enc{l}"),
                    cfg.channels(l - 1),
                    cfg.channels(l),
                    ConvGeometry::cube(3, 2, 1),
                    rng,
                )
            })
            .collect();
        let t = &cfg.transformer;
        let d = t.embed_dim;
        let position = store.add("g.position", normal(rng, &[plan.tokens, d], 0.02));
        let spec = AttentionSpec::new(d, t.num_heads)?;
        let mut layers = Vec::with_capacity(t.num_layers);
        for i in 0..t.num_layers {
            let pre = format!("g.tf{i}");
            layers.push(TransformerLayer {
                ln_attn: NormAffine::new(store, &format!("{pre}.ln_attn"), d),
                attn: AttentionWeights::new(spec, store, &format!("{pre}.attn"), rng)?,
                ln_ffn: NormAffine::new(store, &format!("{pre}.ln_ffn"), d),
                ffn_in: Linear::new(store, &format!("{pre}.ffn_in"), d, t.ffn_hidden, rng),
                ffn_out: Linear::new(store, &format!("{pre}.ffn_out"), t.ffn_hidden, d, rng),
            });
        }
        let decoder = (0..cfg.num_down)
            .rev()
            .map(|l| {
                let (c, cn) = (cfg.channels(l), cfg.channels(l + 1));
                DecoderLevel {
                    up: ConvTranspose3dSpec::new(store, &format!("g.dec{l}.up"), cn, c, ConvGeometry::cube(2, 2, 0), rng),
                    fuse: ConvNormAct::new(store, &format!("g.dec{l}.fuse"), 2 * c, c, k3, rng),
                    refine: ConvNormAct::new(store, &format!("g.dec{l}.refine"), c, c, k3, rng),
                }
            })
            .collect();
        let heads = (0..cfg.deep_supervision_heads)
            .map(|l| {
                let head = Conv3dSpec::new(
                    store,
                    &format!("g.head{l}"),
                    cfg.channels(l),
                    REGION_CHANNELS,
                    ConvGeometry::cube(1, 1, 0),
                    rng,
                );
                let prior = cfg.head_prior;
                let logit = T::lit(Float::ln(prior / (1.0 - prior)));
                store.get_mut(head.bias).data_mut().fill(logit);
                head
            })
            .collect();
        Ok(Self {
            cfg,
            stem,
            down,
            position,
            layers,
            decoder,
            heads,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    fn slope<T: Real>(&self) -> T {
        T::lit(self.cfg.leaky_slope)
    }

    /// Parameter ids of every transformer sublayer's final projection (MHA
    /// output and FFN output, weights and biases).
    pub fn sublayer_output_params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.attn.wo, l.attn.bo, l.ffn_out.weight, l.ffn_out.bias])
            .collect()
    }

    pub fn position_embedding(&self) -> ParamId {
        self.position
    }

    /// Full-resolution stem followed by `num_down` stride-2 stages, each conv
    /// followed by instance norm and LeakyReLU.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<FeaturePyramid> {
        let s = g.shape(x).to_vec();
        if s.len() != 5 || s[1] != self.cfg.in_channels || spatial3(&s) != self.cfg.patch {
            return Err(shape_err(
                "encode",
                format!(
                    "expected [N,{},{:?}], got {s:?}",
                    self.cfg.in_channels, self.cfg.patch
                ),
            ));
        }
        let slope = self.slope();
        let mut levels = Vec::with_capacity(self.cfg.num_down + 1);
        let mut cur = self.stem.forward(g, p, x, slope)?;
        levels.push(cur);
        for stage in &self.down {
            cur = stage.forward(g, p, cur, slope)?;
            levels.push(cur);
        }
        Ok(FeaturePyramid { levels })
    }

    /// `[N,d,D,H,W] → [N,D·H·W,d]` in row-major voxel order, plus the learned
    /// position embedding.
    pub fn sequence_and_embed<T: Real>(&self, g: &mut Graph<T>, p: &Bound, bottleneck: Var) -> Result<Var> {
        let tokens = sequence(g, bottleneck)?;
        ops::add_broadcast(g, tokens, p[self.position])
    }

    /// `y_i' = MHA(LN(y_{i−1})) + y_{i−1}`, `y_i = FFN(LN(y_i')) + y_i'`, and
    /// finally `x + y_L`.
    pub fn transformer_bottleneck<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let slope = self.slope();
        let mut y = x;
        for layer in &self.layers {
            let h = layer.ln_attn.layer(g, p, y)?;
            let h = ops::multi_head_attention(g, h, &layer.attn, p)?;
            let y_mid = ops::add(g, h, y)?;
            let h = layer.ln_ffn.layer(g, p, y_mid)?;
            let h = layer.ffn_in.forward(g, p, h)?;
            let h = ops::leaky_relu(g, h, slope);
            let h = layer.ffn_out.forward(g, p, h)?;
            y = ops::add(g, h, y_mid)?;
        }
        ops::add(g, x, y)
    }

    /// Upsample, fuse with the skip, refine; emit sigmoid maps at the three
    /// finest decoder levels (finest first).
    pub fn decode<T: Real>(&self, g: &mut Graph<T>, p: &Bound, pyramid: &FeaturePyramid, bottleneck: Var) -> Result<Vec<Var>> {
        let slope = self.slope();
        let mut cur = bottleneck;
        let mut per_level = Vec::with_capacity(self.decoder.len());
        for (i, level) in self.decoder.iter().enumerate() {
            let l = self.cfg.num_down - 1 - i;
            let up = level.up.forward(g, p, cur)?;
            let skip = pyramid.levels[l];
            if g.shape(up) != g.shape(skip) {
                return Err(shape_err(
                    "decode",
                    format!("upsampled {:?} vs skip {:?}", g.shape(up), g.shape(skip)),
                ));
            }
            let fused = ops::concat(g, &[up, skip], 1)?;
            let h = level.fuse.forward(g, p, fused, slope)?;
            cur = level.refine.forward(g, p, h, slope)?;
            per_level.push(cur);
        }
        per_level.reverse();
        self.heads
            .iter()
            .zip(per_level)
            .map(|(head, feat)| {
                let logits = head.forward(g, p, feat)?;
                Ok(ops::sigmoid(g, logits))
            })
            .collect()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<GeneratorOutput> {
        let pyramid = self.encode(g, p, x)?;
        let deepest = *pyramid.levels.last().expect("non-empty pyramid");
        let extents = spatial3(g.shape(deepest));
        let tokens = self.sequence_and_embed(g, p, deepest)?;
        let y = self.transformer_bottleneck(g, p, tokens)?;
        let volume = desequence(g, y, extents)?;
        let heads = self.decode(g, p, &pyramid, volume)?;
        Ok(GeneratorOutput { heads })
    }
}

/// `[N,C,D,H,W] → [N,D·H·W,C]`.
pub fn sequence<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 5 {
        return Err(shape_err("sequence", format!("expected [N,C,D,H,W], got {s:?}")));
    }
    let flat = ops::reshape(g, x, &[s[0], s[1], s[2] * s[3] * s[4]])?;
    ops::permute(g, flat, &[0, 2, 1])
}

/// Inverse of [`sequence`]: `[N,T,C] → [N,C,D,H,W]`.
pub fn desequence<T: Real>(g: &mut Graph<T>, tokens: Var, extents: [usize; 3]) -> Result<Var> {
    let s = g.shape(tokens).to_vec();
    if s.len() != 3 || s[1] != extents.iter().product::<usize>() {
        return Err(shape_err("desequence", format!("{s:?} vs extents {extents:?}")));
    }
    let chan = ops::permute(g, tokens, &[0, 2, 1])?;
    ops::reshape(g, chan, &[s[0], s[2], extents[0], extents[1], extents[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy() -> GeneratorConfig {
        GeneratorConfig {
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
        }
    }

    #[test]
    fn full_scale_plan() {
        let plan = GeneratorConfig::default().shape_plan().unwrap();
        assert_eq!(plan.bottleneck, [5, 6, 5]);
        assert_eq!(plan.tokens, 150);
        assert_eq!(plan.heads, alloc::vec![[160, 192, 160], [80, 96, 80], [40, 48, 40]]);
    }

    #[test]
    fn divisibility_is_checked_per_axis() {
        let mut cfg = GeneratorConfig::desk();
        cfg.num_down = 5;
        // 32/32 = 1 voxel bottleneck rejected, and 24 is not divisible by 16
        assert!(cfg.validate().is_err());
        let mut cfg = GeneratorConfig::desk();
        cfg.patch = [32, 24, 32];
        let err = cfg.validate().unwrap_err();
        assert!(format!("{err}").contains("axis 1"), "{err}");
        assert_eq!(GeneratorConfig::desk().shape_plan().unwrap().bottleneck, [2, 2, 2]);
    }

    #[test]
    fn heads_have_three_channels_in_unit_interval() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gen = Generator::new(toy(), &mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(crate::params::uniform(&mut rng, &[1, 4, 16, 16, 16], 1.0));
        let out = gen.forward(&mut g, &p, x).unwrap();
        let expect = [[16usize; 3], [8; 3], [4; 3]];
        for (h, e) in out.heads.iter().zip(expect) {
            assert_eq!(g.shape(*h)[1], 3);
            assert_eq!(spatial3(g.shape(*h)), e);
            assert!(g.value(*h).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_input_gives_zero_pyramid() {
        let mut store = ParamStore::<f64>::new();
        let gen = Generator::new(toy(), &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[1, 4, 16, 16, 16]));
        let pyr = gen.encode(&mut g, &p, x).unwrap();
        assert_eq!(pyr.levels.len(), 4);
        for l in pyr.levels {
            assert!(g.value(l).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn sequence_round_trip() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 2, 3, 2], |i| i as f64));
        let t = sequence(&mut g, x).unwrap();
        assert_eq!(g.shape(t), &[2, 12, 3]);
        let back = desequence(&mut g, t, [2, 3, 2]).unwrap();
        assert_eq!(g.value(back), g.value(x));
    }
}
