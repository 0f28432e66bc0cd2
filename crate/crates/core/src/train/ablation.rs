use std::fmt;

use rayon::prelude::*;

use super::{evaluate_dataset, train_loop, Dataset, History, Predictor, TrainConfig};
use crate::error::Result;
use crate::net::{Ablation, NetworkConfig};

/// The five configurations compared by the ablation, from the plain
/// depth-only U-Net to the full model.
pub const ABLATION_MATRIX: [(&str, Ablation); 5] = [
    ("baseline", Ablation::BASELINE),
    (
        "+guidance",
        Ablation {
            use_guidance: true,
            use_rdcb: false,
            use_mamba: false,
        },
    ),
    (
        "+guidance+rdcb",
        Ablation {
            use_guidance: true,
            use_rdcb: true,
            use_mamba: false,
        },
    ),
    (
        "+guidance+mamba",
        Ablation {
            use_guidance: true,
            use_rdcb: false,
            use_mamba: true,
        },
    ),
    ("full", Ablation::FULL),
];

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: &'static str,
    pub ablation: Ablation,
    pub params: usize,
    pub rmse: f64,
    pub history: History,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub seed: u64,
    pub epochs: usize,
    pub scale: usize,
    pub base_channels: usize,
    pub dataset: String,
    pub unit_scale: f32,
    /// Bicubic RMSE on the same validation split, for reference.
    pub bicubic_rmse: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# dataset = {}", self.dataset)?;
        writeln!(
            f,
            "# seed = {} epochs = {} scale = x{} base_channels = {}",
            self.seed, self.epochs, self.scale, self.base_channels
        )?;
        writeln!(f, "# unit = stored depth x {}", self.unit_scale)?;
        let mark = |on: bool| if on { "yes" } else { "-" };
        writeln!(
            f,
            "{:<18} {:>8} {:>6} {:>6} {:>10} {:>10}",
            "config", "guidance", "rdcb", "mamba", "params", "RMSE"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<18} {:>8} {:>6} {:>6} {:>10} {:>10.4}",
                r.label,
                mark(r.ablation.use_guidance),
                mark(r.ablation.use_rdcb),
                mark(r.ablation.use_mamba),
                r.params,
                r.rmse
            )?;
        }
        writeln!(f, "{:<18} {:>8} {:>6} {:>6} {:>10} {:>10.4}", "bicubic", "-", "-", "-", 0, self.bicubic_rmse)
    }
}

/// Trains and evaluates every configuration of [`ABLATION_MATRIX`] with the
/// same seed, schedule and data; only the component switches differ. Runs
/// may proceed in parallel; each one is deterministic on its own.
pub fn ablation_run(
    train: &Dataset,
    val: &Dataset,
    base: NetworkConfig,
    cfg: &TrainConfig,
    progress: impl Fn(&str, &super::EpochRecord) + Sync,
) -> Result<AblationReport> {
    let bicubic_rmse = evaluate_dataset(Predictor::Bicubic, val, base.scale, cfg.degradation)?.mean;
    let rows = ABLATION_MATRIX
        .par_iter()
        .map(|&(label, ablation)| {
            let net_cfg = base.with_ablation(ablation);
            let out = train_loop(train, None, cfg, net_cfg, |r, _| {
                progress(label, r);
                Ok(())
            })?;
            let rmse = evaluate_dataset(Predictor::Network(&out.net), val, base.scale, cfg.degradation)?.mean;
            Ok(AblationRow {
                label,
                ablation,
                params: out.params.param_count(),
                rmse,
                history: out.history,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        seed: cfg.seed,
        epochs: cfg.epochs,
        scale: base.scale,
        base_channels: base.base_channels,
        dataset: val.name.clone(),
        unit_scale: val.unit_scale,
        bicubic_rmse,
        rows,
    })
}
