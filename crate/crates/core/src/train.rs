//! Training and evaluation: losses, metric, Adam, learning-rate schedule,
//! the seeded patch-sampling training loop, dataset evaluation and the
//! component ablation runner.

mod ablation;
mod data;
mod eval;
mod optim;

use std::fmt;
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use ablation::{ablation_run, AblationReport, AblationRow, ABLATION_MATRIX};
pub use data::{Dataset, Sample, Skipped};
pub use eval::{evaluate_dataset, reconstruct, rmse, super_resolve, EvalRow, EvalTable, Predictor};
pub use optim::{adam_step, AdamConfig, AdamState};

use crate::error::{Error, Result};
use crate::image_ops::{crop_patch, Degradation};
use crate::net::{MsfumNet, NetworkConfig};
use crate::nn::NetworkParams;
use crate::ops;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            other => Err(Error::Config(format!("unknown loss `{other}` (l1|l2)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Side of the square HR training crops; images smaller than this are
    /// used whole (cropped to a multiple of the scale).
    pub patch: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub degradation: Degradation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            decay_factor: 0.1,
            decay_every: 150,
            batch: 2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 150,
            patch: 256,
            seed: 0,
            loss: LossKind::L1,
            degradation: Degradation::Bicubic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train: {what}")));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad("decay_factor must lie in (0, 1)");
        }
        if self.decay_every == 0 || self.batch == 0 || self.patch == 0 {
            return bad("decay_every, batch and patch must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Step schedule: `lr0 * decay_factor ^ floor(epoch / decay_every)`, with
/// epochs counted from 0.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

/// One line of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Mean validation RMSE in stored depth units; absent without a
    /// validation set.
    pub val_rmse: Option<f64>,
}

/// `epoch=3 lr=0.0001 train_loss=0.0123 val_rmse=45.6`; floats print in
/// their shortest exact form so that equal histories give equal text.
impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} lr={} train_loss={}", self.epoch, self.lr, self.train_loss)?;
        match self.val_rmse {
            Some(v) => write!(f, " val_rmse={v}"),
            None => write!(f, " val_rmse=none"),
        }
    }
}

impl FromStr for EpochRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed history line `{line}`"));
        let mut rec = EpochRecord {
            epoch: 0,
            lr: f64::NAN,
            train_loss: f64::NAN,
            val_rmse: None,
        };
        let mut seen = 0;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "epoch" => rec.epoch = v.parse().map_err(|_| bad())?,
                "lr" => rec.lr = v.parse().map_err(|_| bad())?,
                "train_loss" => rec.train_loss = v.parse().map_err(|_| bad())?,
                "val_rmse" if v == "none" => rec.val_rmse = None,
                "val_rmse" => rec.val_rmse = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
            seen += 1;
        }
        if seen != 4 {
            return Err(bad());
        }
        Ok(rec)
    }
}

/// Append-only record of a run, one line per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    records: Vec<EpochRecord>,
}

impl History {
    pub fn push(&mut self, r: EpochRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.records.iter().try_for_each(|r| writeln!(f, "{r}"))
    }
}

pub struct TrainOutcome {
    pub net: MsfumNet<f32>,
    pub params: NetworkParams<f32>,
    pub history: History,
}

/// Largest multiple of `s` that fits the requested patch and the image.
fn patch_side(requested: usize, h: usize, w: usize, s: usize) -> usize {
    requested.min(h).min(w) / s * s
}

/// Trains a freshly initialized network. Parameters are initialized from
/// `cfg.seed`; sample order and crop positions come from an independent
/// stream of the same seed. `on_epoch` sees every history record with the
/// current parameters (e.g. to checkpoint) and may abort the run.
pub fn train_loop(
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    net_cfg: NetworkConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &NetworkParams<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract(format!("training set {} is empty", train.name)));
    }
    let s = net_cfg.scale;
    // Crops must be divisible by the scale and by every pyramid level.
    let unit = s.max(1 << net_cfg.levels);
    let (net, params) = MsfumNet::<f32>::build(net_cfg, cfg.seed)?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0f64, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let ctx = |e: Error| Error::Training {
                epoch: epoch + 1,
                batch: bi,
                source: Box::new(e),
            };
            // All crops in a batch share the side of the smallest member.
            let side = chunk
                .iter()
                .map(|&i| patch_side(cfg.patch, train.samples[i].depth.height, train.samples[i].depth.width, unit))
                .min()
                .unwrap_or(0);
            if side == 0 {
                return Err(ctx(Error::contract(format!("images are smaller than one {unit}x{unit} block"))));
            }
            let mut items = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let sample = &train.samples[i];
                let oy = unit * rng.gen_range(0..=(sample.depth.height - side) / unit);
                let ox = unit * rng.gen_range(0..=(sample.depth.width - side) / unit);
                let (d, g) = crop_patch(&sample.depth, &sample.rgb, side, (oy, ox)).map_err(ctx)?;
                items.push(data::prepare(&d, &g, s, cfg.degradation).map_err(ctx)?);
            }
            let mut step = || -> Result<f64> {
                let b = data::stack(&items)?;
                let pred = net.forward(&b.lr, &b.rgb)?;
                let loss = match cfg.loss {
                    LossKind::L1 => ops::l1_loss(&pred, &b.target, Some(&b.mask))?,
                    LossKind::L2 => ops::mse_loss(&pred, &b.target, Some(&b.mask))?,
                };
                let value = loss.item() as f64;
                if !value.is_finite() {
                    return Err(Error::contract(format!("loss became {value}")));
                }
                params.zero_grad();
                loss.backward()?;
                adam_step(&params, &mut adam, lr, &cfg.adam())?;
                Ok(value)
            };
            loss_sum += step().map_err(ctx)?;
            batches += 1;
        }
        let val_rmse = match val {
            Some(v) if !v.is_empty() => Some(evaluate_dataset(Predictor::Network(&net), v, s, cfg.degradation)?.mean),
            _ => None,
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / batches as f64,
            val_rmse,
        };
        info!("{record}");
        history.push(record);
        on_epoch(&record, &params)?;
    }
    Ok(TrainOutcome { net, params, history })
}
