use std::fmt;

use log::warn;
use rayon::prelude::*;

use super::data::{prepare, Dataset, Sample};
use crate::error::{Error, Result};
use crate::image_ops::{bicubic_resize, center_crop_to_multiple, DepthMap, Degradation, GuidanceImage, NormMeta};
use crate::net::MsfumNet;
use crate::tensor::{no_grad, Tensor};

/// Root mean square error over the pixels that are valid in `gt` and in
/// the optional extra `mask`, accumulated in double precision.
pub fn rmse(pred: &DepthMap, gt: &DepthMap, mask: Option<&[bool]>) -> Result<f64> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::contract(format!(
            "rmse: prediction {}x{} and ground truth {}x{} differ",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    if let Some(m) = mask {
        if m.len() != gt.values.len() {
            return Err(Error::contract(format!("rmse: mask has {} entries for {} pixels", m.len(), gt.values.len())));
        }
    }
    let (mut sum, mut count) = (0.0f64, 0usize);
    for (i, (&p, &g)) in pred.values.iter().zip(&gt.values).enumerate() {
        if gt.is_valid(i) && mask.map_or(true, |m| m[i]) {
            let d = p as f64 - g as f64;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::contract("rmse: no valid pixels"));
    }
    Ok((sum / count as f64).sqrt())
}

/// How HR depth is produced from an LR map and its colour image.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    /// Bicubic upsampling of the LR map.
    Bicubic,
    Network(&'a MsfumNet<f32>),
}

impl Predictor<'_> {
    fn label(&self) -> &'static str {
        match self {
            Predictor::Bicubic => "bicubic",
            Predictor::Network(_) => "network",
        }
    }
}

fn check_ratio(lr: &DepthMap, rgb: &GuidanceImage, s: usize) -> Result<()> {
    if rgb.height != lr.height * s || rgb.width != lr.width * s {
        return Err(Error::contract(format!(
            "depth {}x{} and colour {}x{} do not differ by the scale factor {s}",
            lr.height, lr.width, rgb.height, rgb.width
        )));
    }
    Ok(())
}

/// Upsamples a normalized LR map; both predictors share this path so that
/// a network with a zero residual reproduces the bicubic result bitwise.
fn predict_normalized(predictor: Predictor<'_>, lr: &DepthMap, rgb: &GuidanceImage, s: usize) -> Result<Vec<f32>> {
    let (h, w) = (lr.height * s, lr.width * s);
    match predictor {
        Predictor::Bicubic => bicubic_resize(&lr.values, lr.height, lr.width, h, w),
        Predictor::Network(net) => {
            if net.cfg.scale != s {
                return Err(Error::contract(format!(
                    "network was built for scale {}, evaluation asks for {s}",
                    net.cfg.scale
                )));
            }
            let x = Tensor::new(&[1, 1, lr.height, lr.width], lr.values.clone())?;
            let g = Tensor::new(&[1, 3, h, w], rgb.values.clone())?;
            no_grad(|| net.forward(&x, &g)).map(|y| y.to_vec())
        }
    }
}

/// Super-resolves an LR depth map with its HR colour image. The input is
/// normalized by its own valid range and the result mapped back to the
/// input's units.
pub fn super_resolve(predictor: Predictor<'_>, lr: &DepthMap, rgb: &GuidanceImage, s: usize) -> Result<DepthMap> {
    check_ratio(lr, rgb, s)?;
    let meta = NormMeta::for_input(lr)?;
    let values = predict_normalized(predictor, &meta.apply(lr), rgb, s)?;
    let out = DepthMap::new(lr.height * s, lr.width * s, values)?.with_unit_scale(lr.unit_scale);
    Ok(meta.invert(&out))
}

/// Crops `sample` to a multiple of `s`, degrades it and predicts it back.
/// Returns the prediction and the cropped ground truth, both in stored
/// units.
pub fn reconstruct(predictor: Predictor<'_>, sample: &Sample, s: usize, method: Degradation) -> Result<(DepthMap, DepthMap)> {
    let (gt, rgb) = center_crop_to_multiple(&sample.depth, &sample.rgb, s)?;
    let p = prepare(&gt, &rgb, s, method)?;
    let values = predict_normalized(predictor, &p.lr, &p.rgb, s)?;
    let pred = p.meta.invert(&DepthMap::new(gt.height, gt.width, values)?.with_unit_scale(gt.unit_scale));
    Ok((pred, gt))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    /// `Err` holds the reason the image was skipped.
    pub rmse: std::result::Result<f64, String>,
}

/// Per-image RMSE and the unweighted mean over the evaluated images.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub dataset: String,
    pub method: String,
    pub scale: usize,
    pub unit_scale: f32,
    pub rows: Vec<EvalRow>,
    pub mean: f64,
}

impl EvalTable {
    /// Builds a table whose mean is the unweighted average of the
    /// evaluated rows; skipped rows do not count.
    pub fn new(dataset: &str, method: &str, scale: usize, unit_scale: f32, rows: Vec<EvalRow>) -> Result<Self> {
        let ok: Vec<f64> = rows.iter().filter_map(|r| r.rmse.as_ref().ok().copied()).collect();
        if ok.is_empty() {
            return Err(Error::contract(format!("evaluation of {dataset}: no image could be evaluated")));
        }
        Ok(Self {
            dataset: dataset.to_string(),
            method: method.to_string(),
            scale,
            unit_scale,
            rows,
            mean: ok.iter().sum::<f64>() / ok.len() as f64,
        })
    }

    pub fn evaluated(&self) -> usize {
        self.rows.iter().filter(|r| r.rmse.is_ok()).count()
    }

    pub fn skipped(&self) -> usize {
        self.rows.len() - self.evaluated()
    }

    /// Label for the unit RMSE is reported in.
    pub fn unit(&self) -> String {
        format!("stored depth x {}", self.unit_scale)
    }
}

impl fmt::Display for EvalTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# dataset = {}", self.dataset)?;
        writeln!(f, "# method = {}", self.method)?;
        writeln!(f, "# scale = x{}", self.scale)?;
        writeln!(f, "# unit = {}", self.unit())?;
        writeln!(f, "{:<40} {:>12}", "image", "RMSE")?;
        for r in &self.rows {
            match &r.rmse {
                Ok(v) => writeln!(f, "{:<40} {:>12.4}", r.name, v)?,
                Err(why) => writeln!(f, "{:<40} {:>12}  ({why})", r.name, "skipped")?,
            }
        }
        writeln!(
            f,
            "{:<40} {:>12.4}  ({} images, {} skipped, {})",
            "mean",
            self.mean,
            self.evaluated(),
            self.skipped(),
            self.unit()
        )
    }
}

/// Evaluates every sample in parallel; results do not depend on the number
/// of worker threads. Images that fail (too small, no valid pixels) are
/// skipped with a warning and listed in the table.
pub fn evaluate_dataset(predictor: Predictor<'_>, dataset: &Dataset, s: usize, method: Degradation) -> Result<EvalTable> {
    let mut rows: Vec<EvalRow> = dataset
        .skipped
        .iter()
        .map(|sk| EvalRow {
            name: sk.name.clone(),
            rmse: Err(sk.reason.clone()),
        })
        .collect();
    let evaluated: Vec<EvalRow> = dataset
        .samples
        .par_iter()
        .map(|sample| {
            let r = reconstruct(predictor, sample, s, method).and_then(|(pred, gt)| rmse(&pred, &gt, None));
            if let Err(e) = &r {
                warn!("skipping {}: {e}", sample.name);
            }
            EvalRow {
                name: sample.name.clone(),
                rmse: r.map_err(|e| e.to_string()),
            }
        })
        .collect();
    rows.extend(evaluated);
    EvalTable::new(&dataset.name, predictor.label(), s, dataset.unit_scale, rows)
}
