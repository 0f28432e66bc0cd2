//! Channel attention, the residual dense channel-attention block, the Mamba
//! block and their composite.

use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, Init, LayerNormLayer, LinearLayer, ParamStore};
use crate::ops::{self, expect_dim, expect_rank};
use crate::ssm::{ssm_apply, ScanMode, SsmParams};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RdcbConfig {
    pub channels: usize,
    pub growth: usize,
    pub num_dense: usize,
    pub reduction: usize,
}

impl RdcbConfig {
    /// Growth `C / 2`, six dense layers, reduction 8.
    pub fn for_channels(channels: usize) -> Self {
        Self {
            channels,
            growth: (channels / 2).max(1),
            num_dense: 6,
            reduction: 8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.growth == 0 || self.num_dense == 0 || self.reduction == 0 {
            return Err(Error::contract(format!("RDCB config must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MambaBlockConfig {
    pub model_dim: usize,
    pub expand: usize,
    pub conv_kernel: usize,
    pub state_size: usize,
}

impl MambaBlockConfig {
    pub fn new(model_dim: usize, state_size: usize) -> Self {
        Self {
            model_dim,
            expand: 2,
            conv_kernel: 4,
            state_size,
        }
    }

    pub fn inner(&self) -> usize {
        self.model_dim * self.expand
    }

    pub fn dt_rank(&self) -> usize {
        self.model_dim.div_ceil(16)
    }
}

/// Squeeze (global average pool), bottleneck MLP, sigmoid gate, rescale.
#[derive(Debug, Clone)]
pub struct ChannelAttention<T: Scalar> {
    pub down: LinearLayer<T>,
    pub up: LinearLayer<T>,
}

impl<T: Scalar> ChannelAttention<T> {
    pub fn new(store: &mut ParamStore<T>, prefix: &str, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(1);
        Ok(Self {
            down: LinearLayer::new(store, &format!("{prefix}.down"), channels, hidden, true)?,
            up: LinearLayer::new(store, &format!("{prefix}.up"), hidden, channels, true)?,
        })
    }

    /// Per-sample, per-channel gates in `(0, 1)`, shape `[N, C]`.
    pub fn gates(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = ops::global_avg_pool(x)?;
        let h = ops::relu(&self.down.forward(&s)?);
        Ok(ops::sigmoid(&self.up.forward(&h)?))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::mul_channel(x, &self.gates(x)?)
    }
}

/// Residual dense channel-attention block.
#[derive(Debug, Clone)]
pub struct Rdcb<T: Scalar> {
    pub cfg: RdcbConfig,
    pub dense: Vec<Conv2dLayer<T>>,
    pub fusion: Conv2dLayer<T>,
    pub attention: ChannelAttention<T>,
}

impl<T: Scalar> Rdcb<T> {
    pub fn new(store: &mut ParamStore<T>, prefix: &str, cfg: RdcbConfig) -> Result<Self> {
        cfg.validate()?;
        let dense = (0..cfg.num_dense)
            .map(|i| {
                Conv2dLayer::new(
                    store,
                    &format!("{prefix}.conv.{i}"),
                    cfg.channels + i * cfg.growth,
                    cfg.growth,
                    3,
                    1,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fused_in = cfg.channels + cfg.num_dense * cfg.growth;
        Ok(Self {
            cfg,
            dense,
            fusion: Conv2dLayer::new(store, &format!("{prefix}.fusion"), fused_in, cfg.channels, 1, 1)?,
            attention: ChannelAttention::new(store, &format!("{prefix}.attention"), cfg.channels, cfg.reduction)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        expect_rank("rdcb", x, 4)?;
        expect_dim("rdcb", "channels", self.cfg.channels, x.shape()[1])?;
        let mut features = vec![x.clone()];
        for conv in &self.dense {
            let input = ops::concat_channels(&features)?;
            features.push(ops::relu(&conv.forward(&input)?));
        }
        let fused = self.fusion.forward(&ops::concat_channels(&features)?)?;
        ops::add(x, &self.attention.forward(&fused)?)
    }
}

/// Pre-norm two-branch Mamba block over a flattened feature map.
#[derive(Debug, Clone)]
pub struct MambaBlock<T: Scalar> {
    pub cfg: MambaBlockConfig,
    pub norm: LayerNormLayer<T>,
    pub in_x: LinearLayer<T>,
    pub in_z: LinearLayer<T>,
    pub conv_weight: Tensor<T>,
    pub conv_bias: Tensor<T>,
    pub ssm: SsmParams<T>,
    pub out: LinearLayer<T>,
    pub scan_mode: ScanMode,
}

impl<T: Scalar> MambaBlock<T> {
    pub fn new(store: &mut ParamStore<T>, prefix: &str, cfg: MambaBlockConfig) -> Result<Self> {
        if cfg.model_dim == 0 || cfg.expand == 0 || cfg.conv_kernel == 0 || cfg.state_size == 0 {
            return Err(Error::contract(format!("Mamba config must be positive: {cfg:?}")));
        }
        let inner = cfg.inner();
        Ok(Self {
            cfg,
            norm: LayerNormLayer::new(store, &format!("{prefix}.norm"), cfg.model_dim)?,
            in_x: LinearLayer::new(store, &format!("{prefix}.in_x"), cfg.model_dim, inner, false)?,
            in_z: LinearLayer::new(store, &format!("{prefix}.in_z"), cfg.model_dim, inner, false)?,
            conv_weight: store.param(&format!("{prefix}.conv1d.weight"), &[inner, cfg.conv_kernel], Init::FanIn(cfg.conv_kernel))?,
            conv_bias: store.param(&format!("{prefix}.conv1d.bias"), &[inner], Init::Zeros)?,
            ssm: SsmParams::new(store, &format!("{prefix}.ssm"), inner, cfg.state_size, cfg.dt_rank())?,
            out: LinearLayer::new(store, &format!("{prefix}.out"), inner, cfg.model_dim, false)?,
            scan_mode: ScanMode::Sequential,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        expect_rank("mamba_block", x, 4)?;
        expect_dim("mamba_block", "channels", self.cfg.model_dim, x.shape()[1])?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let seq = ops::spatial_to_sequence(x)?;
        let normed = self.norm.forward(&seq)?;
        let u = self.in_x.forward(&normed)?;
        let u = ops::conv1d_depthwise(&u, &self.conv_weight, Some(&self.conv_bias), true)?;
        let u = ssm_apply(&ops::silu(&u), &self.ssm, self.scan_mode)?;
        let z = ops::silu(&self.in_z.forward(&normed)?);
        let y = self.out.forward(&ops::mul(&u, &z)?)?;
        ops::sequence_to_spatial(&ops::add(&seq, &y)?, h, w)
    }
}

/// Local feature extractor of an RDCB-Mamba stage: the full RDCB or, with
/// the RDCB ablated, a single 3x3 convolution followed by ReLU.
#[derive(Debug, Clone)]
pub enum LocalBlock<T: Scalar> {
    Rdcb(Rdcb<T>),
    Conv(Conv2dLayer<T>),
}

impl<T: Scalar> LocalBlock<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            LocalBlock::Rdcb(b) => b.forward(x),
            LocalBlock::Conv(c) => Ok(ops::relu(&c.forward(x)?)),
        }
    }
}

/// Two local blocks followed by two Mamba blocks.
#[derive(Debug, Clone)]
pub struct RdcbMamba<T: Scalar> {
    pub local: Vec<LocalBlock<T>>,
    pub mamba: Vec<MambaBlock<T>>,
}

impl<T: Scalar> RdcbMamba<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        state_size: usize,
        use_rdcb: bool,
        use_mamba: bool,
    ) -> Result<Self> {
        let local = (0..2)
            .map(|i| {
                Ok(if use_rdcb {
                    LocalBlock::Rdcb(Rdcb::new(store, &format!("{prefix}.rdcb.{i}"), RdcbConfig::for_channels(channels))?)
                } else {
                    LocalBlock::Conv(Conv2dLayer::new(store, &format!("{prefix}.local.{i}"), channels, channels, 3, 1)?)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mamba = if use_mamba {
            (0..2)
                .map(|i| MambaBlock::new(store, &format!("{prefix}.mamba.{i}"), MambaBlockConfig::new(channels, state_size)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self { local, mamba })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for b in &self.local {
            h = b.forward(&h)?;
        }
        for m in &self.mamba {
            h = m.forward(&h)?;
        }
        Ok(h)
    }

    pub fn set_scan_mode(&mut self, mode: ScanMode) {
        self.mamba.iter_mut().for_each(|m| m.scan_mode = mode);
    }
}

#[cfg(test)]
mod tests;
