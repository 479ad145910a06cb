//! Layer kernels: convolution, pooling, normalization and resampling.
//!
//! These operate on raw buffers; the differentiable wrappers live on
//! [`Graph`](crate::autodiff::Graph).

pub mod conv;
pub mod norm;
pub mod pool;
pub mod resize;

pub use conv::{
    conv3d, conv3d_output_shape, conv_output_extent, effective_extent, Conv3dSpec, ConvGeometry,
};
pub use norm::{BatchStats, NormMode, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use resize::{linear_taps, nearest_index, resize_trilinear, LinearTap};
