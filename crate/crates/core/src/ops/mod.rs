//! Differentiable operations. Every function records one node (or a small
//! composition of nodes) on the given [`Graph`](crate::Graph) and returns the
//! output handle.

mod activation;
mod attention;
mod basic;
mod conv;
mod linalg;
mod norm;

pub use activation::{leaky_relu, sigmoid, softmax};
pub use attention::{multi_head_attention, AttentionSpec, AttentionWeights};
pub use basic::{
    add, add_broadcast, concat, l1_mean, mask_channels, mean, mul, narrow_outer, permute, reshape, scale, sub,
    sum,
};
pub use conv::{conv3d, conv_transpose3d, ConvGeometry};
pub use linalg::{batched_matmul, linear};
pub use norm::{batch_norm, batch_norm_eval, instance_norm, layer_norm, BatchStats, NORM_EPS};
