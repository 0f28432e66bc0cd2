//! The multi-scale U-shaped network: depth encoder, colour guidance branch,
//! decoder with cross-modal fusion at every scale, and a residual head on
//! top of the bicubic pre-upsampled depth.

use std::fmt;
use std::str::FromStr;

use crate::blocks::RdcbMamba;
use crate::error::{Error, Result};
use crate::image_ops::{bicubic_resize, check_scale};
use crate::nn::{Conv2dLayer, NetworkParams, ParamStore};
use crate::ops::{self, expect_dim, expect_rank};
use crate::ssm::ScanMode;
use crate::tensor::{Scalar, Tensor};

/// Base width shipped as the default: it keeps the x16 network in the
/// 1.5M-3.0M parameter range of the reference model.
pub const DEFAULT_BASE_CHANNELS: usize = 8;
pub const DEFAULT_STATE_SIZE: usize = 16;
pub const DEFAULT_CHANNEL_CAP: usize = 256;

/// Component switches; all on is the full model, all off the plain
/// depth-only U-Net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub use_guidance: bool,
    pub use_rdcb: bool,
    pub use_mamba: bool,
}

impl Ablation {
    pub const FULL: Self = Self {
        use_guidance: true,
        use_rdcb: true,
        use_mamba: true,
    };
    pub const BASELINE: Self = Self {
        use_guidance: false,
        use_rdcb: false,
        use_mamba: false,
    };
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

/// Comma list of enabled components, e.g. `guidance,mamba`; `none` or an
/// empty string disables all three and `all` enables them.
impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = Self::BASELINE;
        match s.trim() {
            "" | "none" => return Ok(a),
            "all" | "full" => return Ok(Self::FULL),
            _ => {}
        }
        for part in s.split(',').map(str::trim) {
            match part {
                "guidance" => a.use_guidance = true,
                "rdcb" => a.use_rdcb = true,
                "mamba" => a.use_mamba = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown component `{other}` (expected guidance, rdcb, mamba)"
                    )))
                }
            }
        }
        Ok(a)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [
            (self.use_guidance, "guidance"),
            (self.use_rdcb, "rdcb"),
            (self.use_mamba, "mamba"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub scale: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub state_size: usize,
    pub ablation: Ablation,
    pub channel_cap: usize,
}

impl NetworkConfig {
    /// Default configuration for a scale factor; one pyramid level per
    /// factor of two so the deepest features sit at the LR resolution.
    pub fn for_scale(scale: usize) -> Result<Self> {
        check_scale(scale)?;
        Ok(Self {
            scale,
            base_channels: DEFAULT_BASE_CHANNELS,
            levels: scale.trailing_zeros() as usize,
            state_size: DEFAULT_STATE_SIZE,
            ablation: Ablation::FULL,
            channel_cap: DEFAULT_CHANNEL_CAP,
        })
    }

    pub fn with_base_channels(mut self, c: usize) -> Self {
        self.base_channels = c;
        self
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        self.ablation = a;
        self
    }

    pub fn with_state_size(mut self, n: usize) -> Self {
        self.state_size = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.base_channels == 0 || self.state_size == 0 || self.channel_cap == 0 {
            return Err(Error::Config(format!(
                "base_channels, state_size and channel_cap must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Channel width at pyramid level `i`.
    pub fn width(&self, i: usize) -> usize {
        self.base_channels
            .checked_shl(i as u32)
            .unwrap_or(usize::MAX)
            .min(self.channel_cap)
    }
}

/// Concatenate the decoder streams, project back to `C` with a 1x1 conv and
/// refine with an RDCB-Mamba stage.
#[derive(Debug, Clone)]
pub struct Fusion<T: Scalar> {
    pub channels: usize,
    pub use_guidance: bool,
    pub proj: Conv2dLayer<T>,
    pub block: RdcbMamba<T>,
}

impl<T: Scalar> Fusion<T> {
    pub fn new(store: &mut ParamStore<T>, prefix: &str, channels: usize, state_size: usize, ablation: Ablation) -> Result<Self> {
        let streams = if ablation.use_guidance { 3 } else { 2 };
        Ok(Self {
            channels,
            use_guidance: ablation.use_guidance,
            proj: Conv2dLayer::new(store, &format!("{prefix}.proj"), streams * channels, channels, 1, 1)?,
            block: RdcbMamba::new(
                store,
                &format!("{prefix}.block"),
                channels,
                state_size,
                ablation.use_rdcb,
                ablation.use_mamba,
            )?,
        })
    }

    /// `guide` is ignored when guidance is disabled.
    pub fn forward(&self, skip: &Tensor<T>, up: &Tensor<T>, guide: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        expect_rank("fuse", skip, 4)?;
        let mut streams = vec![skip.clone(), up.clone()];
        if self.use_guidance {
            let g = guide.ok_or_else(|| Error::contract("fuse: guidance stream required but not supplied"))?;
            streams.push(g.clone());
        }
        for s in &streams[1..] {
            expect_rank("fuse", s, 4)?;
            for (axis, name) in [(0, "batch"), (1, "channels"), (2, "height"), (3, "width")] {
                expect_dim("fuse", name, skip.shape()[axis], s.shape()[axis])?;
            }
        }
        self.block.forward(&self.proj.forward(&ops::concat_channels(&streams)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLevel<T: Scalar> {
    pub up: Conv2dLayer<T>,
    pub fuse: Fusion<T>,
}

#[derive(Debug, Clone)]
pub struct GuidanceBranch<T: Scalar> {
    pub stem: Conv2dLayer<T>,
    pub blocks: Vec<RdcbMamba<T>>,
    pub down: Vec<Conv2dLayer<T>>,
}

#[derive(Debug, Clone)]
pub struct MsfumNet<T: Scalar> {
    pub cfg: NetworkConfig,
    pub stem: Conv2dLayer<T>,
    pub encoder: Vec<RdcbMamba<T>>,
    pub down: Vec<Conv2dLayer<T>>,
    pub guidance: Option<GuidanceBranch<T>>,
    /// Indexed by level; executed deepest first.
    pub decoder: Vec<DecoderLevel<T>>,
    pub head: Conv2dLayer<T>,
}

impl<T: Scalar> MsfumNet<T> {
    /// Fresh network with seeded initialization.
    pub fn build(cfg: NetworkConfig, seed: u64) -> Result<(Self, NetworkParams<T>)> {
        let mut store = ParamStore::seeded(seed);
        let net = Self::assemble(cfg, &mut store)?;
        Ok((net, store.finish()?))
    }

    /// Network whose parameters are taken from `params`; names and shapes
    /// must match `cfg` exactly.
    pub fn from_params(cfg: NetworkConfig, params: &NetworkParams<T>) -> Result<Self> {
        let mut store = ParamStore::from_params(params);
        let net = Self::assemble(cfg, &mut store)?;
        store.finish()?;
        Ok(net)
    }

    fn assemble(cfg: NetworkConfig, store: &mut ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let a = cfg.ablation;
        let n = cfg.state_size;
        let stem = Conv2dLayer::new(store, "stem", 1, cfg.width(0), 3, 1)?;
        let mut encoder = Vec::new();
        let mut down = Vec::new();
        for i in 0..cfg.levels {
            encoder.push(RdcbMamba::new(store, &format!("enc.{i}"), cfg.width(i), n, a.use_rdcb, a.use_mamba)?);
            down.push(Conv2dLayer::new(store, &format!("down.{i}"), cfg.width(i), cfg.width(i + 1), 3, 2)?);
        }
        let guidance = if a.use_guidance {
            let stem = Conv2dLayer::new(store, "guide.stem", 3, cfg.width(0), 3, 1)?;
            let mut blocks = Vec::new();
            let mut gdown = Vec::new();
            for i in 0..cfg.levels {
                blocks.push(RdcbMamba::new(store, &format!("guide.{i}"), cfg.width(i), n, a.use_rdcb, a.use_mamba)?);
                if i + 1 < cfg.levels {
                    gdown.push(Conv2dLayer::new(store, &format!("guide.down.{i}"), cfg.width(i), cfg.width(i + 1), 3, 2)?);
                }
            }
            Some(GuidanceBranch { stem, blocks, down: gdown })
        } else {
            None
        };
        let mut decoder = Vec::new();
        for i in 0..cfg.levels {
            decoder.push(DecoderLevel {
                up: Conv2dLayer::new(store, &format!("dec.{i}.up"), cfg.width(i + 1), cfg.width(i), 3, 1)?,
                fuse: Fusion::new(store, &format!("dec.{i}.fuse"), cfg.width(i), n, a)?,
            });
        }
        let head = Conv2dLayer::new(store, "head", cfg.width(0), 1, 3, 1)?;
        Ok(Self {
            cfg,
            stem,
            encoder,
            down,
            guidance,
            decoder,
            head,
        })
    }

    pub fn set_scan_mode(&mut self, mode: ScanMode) {
        self.encoder.iter_mut().for_each(|b| b.set_scan_mode(mode));
        if let Some(g) = &mut self.guidance {
            g.blocks.iter_mut().for_each(|b| b.set_scan_mode(mode));
        }
        self.decoder.iter_mut().for_each(|d| d.fuse.block.set_scan_mode(mode));
    }

    /// Bicubic upsampling of each LR map by the scale factor.
    pub fn pre_upsample(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        expect_rank("msfum_forward", lr, 4)?;
        expect_dim("msfum_forward", "depth channels", 1, lr.shape()[1])?;
        let (n, h, w) = (lr.shape()[0], lr.shape()[2], lr.shape()[3]);
        let s = self.cfg.scale;
        let data = lr.data();
        let mut out = Vec::with_capacity(n * h * w * s * s);
        for b in 0..n {
            out.extend(bicubic_resize(&data[b * h * w..(b + 1) * h * w], h, w, h * s, w * s)?);
        }
        Tensor::new(&[n, 1, h * s, w * s], out)
    }

    /// `lr: [N, 1, h, w]`, `rgb: [N, 3, s*h, s*w]` -> `[N, 1, s*h, s*w]`.
    /// Gradients flow to the parameters; the inputs are treated as data.
    pub fn forward(&self, lr: &Tensor<T>, rgb: &Tensor<T>) -> Result<Tensor<T>> {
        let base = self.pre_upsample(lr)?;
        self.check_guidance(&base, rgb)?;
        let levels = self.cfg.levels;
        let (hh, hw) = (base.shape()[2], base.shape()[3]);
        if hh % (1 << levels) != 0 || hw % (1 << levels) != 0 {
            return Err(Error::contract(format!(
                "HR size {hh}x{hw} is not divisible by 2^{levels} pyramid levels"
            )));
        }

        let mut f = self.stem.forward(&base)?;
        let mut skips = Vec::with_capacity(levels);
        for (block, down) in self.encoder.iter().zip(&self.down) {
            f = block.forward(&f)?;
            skips.push(f.clone());
            f = down.forward(&f)?;
        }

        let mut guides = Vec::with_capacity(levels);
        if let Some(g) = &self.guidance {
            let mut x = g.stem.forward(rgb)?;
            for (i, block) in g.blocks.iter().enumerate() {
                x = block.forward(&x)?;
                guides.push(x.clone());
                if let Some(down) = g.down.get(i) {
                    x = down.forward(&x)?;
                }
            }
        }

        for i in (0..levels).rev() {
            let level = &self.decoder[i];
            let up = level.up.forward(&ops::upsample_bilinear2x(&f)?)?;
            f = level.fuse.forward(&skips[i], &up, guides.get(i))?;
        }
        ops::add(&base, &self.head.forward(&f)?)
    }

    fn check_guidance(&self, base: &Tensor<T>, rgb: &Tensor<T>) -> Result<()> {
        expect_rank("msfum_forward", rgb, 4)?;
        let (b, g) = (base.shape(), rgb.shape());
        if g[0] != b[0] || g[1] != 3 || g[2] != b[2] || g[3] != b[3] {
            return Err(Error::contract(format!(
                "guidance shape {g:?} does not match depth {b:?} at scale {} (expected [{}, 3, {}, {}])",
                self.cfg.scale, b[0], b[2], b[3]
            )));
        }
        Ok(())
    }
}
