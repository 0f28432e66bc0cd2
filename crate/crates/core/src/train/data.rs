use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image_ops::{degrade, DepthMap, Degradation, GuidanceImage, NormMeta};
use crate::io::{load_depth, load_rgb, Manifest, ManifestEntry, Split};
use crate::tensor::Tensor;

/// An aligned HR depth map and colour image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub depth: DepthMap,
    pub rgb: GuidanceImage,
}

impl Sample {
    pub fn new(name: impl Into<String>, depth: DepthMap, rgb: GuidanceImage) -> Result<Self> {
        let name = name.into();
        if depth.height != rgb.height || depth.width != rgb.width {
            return Err(Error::contract(format!(
                "{name}: depth {}x{} and colour {}x{} are not aligned",
                depth.height, depth.width, rgb.height, rgb.width
            )));
        }
        Ok(Self { name, depth, rgb })
    }

    fn load(entry: &ManifestEntry, unit_scale: f32) -> Result<Self> {
        let name = entry.depth.display().to_string();
        Self::new(name, load_depth(&entry.depth, unit_scale)?, load_rgb(&entry.rgb)?)
    }
}

/// A sample that could not be read, kept so reports can list it.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Multiplier from stored integers to reported depth units.
    pub unit_scale: f32,
    pub samples: Vec<Sample>,
    pub skipped: Vec<Skipped>,
}

impl Dataset {
    pub fn from_samples(name: impl Into<String>, samples: Vec<Sample>) -> Self {
        Self {
            name: name.into(),
            unit_scale: samples.first().map_or(1.0, |s| s.depth.unit_scale),
            samples,
            skipped: Vec::new(),
        }
    }

    /// Loads one split in manifest order. Unreadable or misaligned pairs
    /// are logged and recorded in `skipped` instead of aborting.
    pub fn load(manifest: &Manifest, split: Split) -> Self {
        let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
        let loaded: Vec<Result<Sample>> = entries.par_iter().map(|e| Sample::load(e, manifest.unit_scale)).collect();
        let mut samples = Vec::with_capacity(loaded.len());
        let mut skipped = Vec::new();
        for (entry, r) in entries.iter().zip(loaded) {
            match r {
                Ok(s) => samples.push(s),
                Err(e) => {
                    warn!("skipping {}: {e}", entry.depth.display());
                    skipped.push(Skipped {
                        name: entry.depth.display().to_string(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        Self {
            name: format!("{}/{split}", manifest.name),
            unit_scale: manifest.unit_scale,
            samples,
            skipped,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits by order: the first `fraction` of the samples train, the
    /// rest validate.
    pub fn split_fraction(self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!("split fraction {fraction} is outside [0, 1]")));
        }
        let cut = (self.samples.len() as f64 * fraction).round() as usize;
        let mut train = self.samples;
        let val = train.split_off(cut);
        let mk = |suffix: &str, samples| Dataset {
            name: format!("{}/{suffix}", self.name),
            unit_scale: self.unit_scale,
            samples,
            skipped: Vec::new(),
        };
        Ok((mk("train", train), mk("val", val)))
    }
}

/// Network-ready view of one HR crop: LR input and HR target both in the
/// normalized space of the LR map.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub lr: DepthMap,
    pub target: DepthMap,
    pub rgb: GuidanceImage,
    pub meta: NormMeta,
}

pub(crate) fn prepare(depth: &DepthMap, rgb: &GuidanceImage, s: usize, method: Degradation) -> Result<Prepared> {
    let lr = degrade(depth, s, method)?;
    let meta = NormMeta::for_input(&lr)?;
    Ok(Prepared {
        lr: meta.apply(&lr),
        target: meta.apply(depth),
        rgb: rgb.clone(),
        meta,
    })
}

/// Stacked batch tensors plus the validity mask of the targets.
pub(crate) struct Batch {
    pub lr: Tensor<f32>,
    pub rgb: Tensor<f32>,
    pub target: Tensor<f32>,
    pub mask: Vec<bool>,
}

pub(crate) fn stack(items: &[Prepared]) -> Result<Batch> {
    let first = items.first().ok_or_else(|| Error::contract("empty batch"))?;
    let (lh, lw, h, w) = (first.lr.height, first.lr.width, first.target.height, first.target.width);
    let n = items.len();
    let mut lr = Vec::with_capacity(n * lh * lw);
    let mut rgb = Vec::with_capacity(n * 3 * h * w);
    let mut target = Vec::with_capacity(n * h * w);
    let mut mask = Vec::with_capacity(n * h * w);
    for p in items {
        if (p.lr.height, p.lr.width, p.target.height, p.target.width) != (lh, lw, h, w) {
            return Err(Error::contract("batch members differ in size"));
        }
        lr.extend_from_slice(&p.lr.values);
        rgb.extend_from_slice(&p.rgb.values);
        target.extend_from_slice(&p.target.values);
        mask.extend((0..h * w).map(|i| p.target.is_valid(i)));
    }
    Ok(Batch {
        lr: Tensor::new(&[n, 1, lh, lw], lr)?,
        rgb: Tensor::new(&[n, 3, h, w], rgb)?,
        target: Tensor::new(&[n, 1, h, w], target)?,
        mask,
    })
}
