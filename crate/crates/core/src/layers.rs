//! Parameterized building blocks: each holds [`ParamId`]s into a
//! [`ParamStore`] and records its forward pass on a graph.

use num_traits::Float;
use alloc::format;

use rand::Rng;

use crate::error::Result;
use crate::ops::{self, ConvGeometry};
use crate::params::{uniform, Bound, ParamId};
use crate::{Graph, ParamStore, Real, Tensor, Var};

/// 3D convolution layer: weight `[out, in, kD, kH, kW]`, bias `[out]`.
#[derive(Clone, Debug)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv3dSpec {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        rng: &mut impl Rng,
    ) -> Self {
        let [kd, kh, kw] = geometry.kernel;
        let bound = 1.0 / Float::sqrt((in_channels * geometry.taps()) as f64);
        let weight = store.add(
            &format!("{name}.weight"),
            uniform(rng, &[out_channels, in_channels, kd, kh, kw], bound),
        );
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            in_channels,
            out_channels,
            geometry,
            weight,
            bias,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        ops::conv3d(g, x, p[self.weight], p[self.bias], self.geometry)
    }
}

/// Transposed 3D convolution layer: weight `[in, out, kD, kH, kW]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose3dSpec {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        rng: &mut impl Rng,
    ) -> Self {
        let [kd, kh, kw] = geometry.kernel;
        let bound = 1.0 / Float::sqrt((out_channels * geometry.taps()) as f64);
        let weight = store.add(
            &format!("{name}.weight"),
            uniform(rng, &[in_channels, out_channels, kd, kh, kw], bound),
        );
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            in_channels,
            out_channels,
            geometry,
            weight,
            bias,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        ops::conv_transpose3d(g, x, p[self.weight], p[self.bias], self.geometry)
    }
}

/// Affine scale/shift of a normalization layer, initialized to identity.
#[derive(Clone, Debug)]
pub struct NormAffine {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl NormAffine {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, features: usize) -> Self {
        Self {
            scale: store.add(&format!("{name}.scale"), Tensor::ones(&[features])),
            shift: store.add(&format!("{name}.shift"), Tensor::zeros(&[features])),
        }
    }

    pub fn instance<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        ops::instance_norm(g, x, p[self.scale], p[self.shift], T::lit(ops::NORM_EPS))
    }

    pub fn layer<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        ops::layer_norm(g, x, p[self.scale], p[self.shift], T::lit(ops::NORM_EPS))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / Float::sqrt(fan_in as f64);
        Self {
            weight: store.add(&format!("{name}.weight"), uniform(rng, &[fan_in, fan_out], bound)),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        ops::linear(g, x, p[self.weight], p[self.bias])
    }
}

/// conv → instance norm → LeakyReLU.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub conv: Conv3dSpec,
    pub norm: NormAffine,
}

impl ConvNormAct {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            conv: Conv3dSpec::new(store, &format!("{name}.conv"), in_channels, out_channels, geometry, rng),
            norm: NormAffine::new(store, &format!("{name}.norm"), out_channels),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, slope: T) -> Result<Var> {
        let y = self.conv.forward(g, p, x)?;
        let y = self.norm.instance(g, p, y)?;
        Ok(ops::leaky_relu(g, y, slope))
    }
}
