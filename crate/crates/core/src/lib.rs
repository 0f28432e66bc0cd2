//! Guided depth-map super-resolution with a multi-scale U-shaped network
//! built from residual dense channel-attention blocks and selective
//! state-space (Mamba) blocks.

pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod image_ops;
pub mod io;
pub mod net;
pub mod nn;
pub mod ops;
pub mod ssm;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image_ops::{Degradation, DepthMap, GuidanceImage};
pub use net::{Ablation, MsfumNet, NetworkConfig};
pub use nn::NetworkParams;
pub use tensor::{no_grad, Precision, Scalar, Tensor};
pub use train::{Dataset, Sample, TrainConfig};
