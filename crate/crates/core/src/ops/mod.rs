//! Differentiable primitives.
//!
//! Feature maps are `[N, C, H, W]`; token sequences are `[N, L, C]`.

mod activation;
mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;
mod pool;
mod resample;
mod shape;

pub use activation::{activation, relu, sigmoid, silu, softplus, Activation};
pub use conv::{conv1d_depthwise, conv2d};
pub use elementwise::{add, mean, mul, mul_channel, scale, sub, sum};
pub use linear::linear;
pub use loss::{l1_loss, mse_loss};
pub use norm::layer_norm;
pub use pool::global_avg_pool;
pub use resample::upsample_bilinear2x;
pub use shape::{concat_channels, reshape, sequence_to_spatial, spatial_to_sequence};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub(crate) fn expect_rank<T: Scalar>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::Rank {
            op,
            expected: rank,
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn expect_dim(
    op: &'static str,
    axis: &'static str,
    expected: usize,
    got: usize,
) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            op,
            axis,
            expected,
            got,
        });
    }
    Ok(())
}
