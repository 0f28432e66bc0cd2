//! Seeded synthetic RGB-D scenes: piecewise-constant depth made of
//! rectangles and ellipses over a background plane, rendered to colour so
//! that every depth edge is also a colour edge, plus stripes, noise and
//! painted marks that change colour without changing depth.
//!
//! Depth samples are integers and colour samples are multiples of 1/255,
//! so a corpus written to disk reloads bitwise identical to the in-memory
//! one.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image_ops::{DepthMap, GuidanceImage};
use crate::io::{save_depth, save_rgb, DepthFormat, Manifest, ManifestEntry, Split};
use crate::train::{Dataset, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    /// Side of the square HR images.
    pub size: usize,
    pub train: usize,
    pub val: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            train: 200,
            val: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { y0: f32, y1: f32, x0: f32, x1: f32 },
    Ellipse { cy: f32, cx: f32, ry: f32, rx: f32 },
}

impl Shape {
    fn contains(&self, y: f32, x: f32) -> bool {
        match *self {
            Shape::Rect { y0, y1, x0, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Ellipse { cy, cx, ry, rx } => {
                let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
                dy * dy + dx * dx <= 1.0
            }
        }
    }

    fn random(rng: &mut ChaCha8Rng, size: f32) -> Self {
        let (lo, hi) = (size / 10.0, size / 3.0);
        let (cy, cx) = (rng.gen_range(0.0..size), rng.gen_range(0.0..size));
        let (ry, rx) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        if rng.gen_bool(0.5) {
            Shape::Rect {
                y0: cy - ry,
                y1: cy + ry,
                x0: cx - rx,
                x1: cx + rx,
            }
        } else {
            Shape::Ellipse { cy, cx, ry, rx }
        }
    }
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]
}

/// Scene `index` of the corpus generated from `seed`; independent of how
/// many other scenes are drawn.
pub fn synth_sample(seed: u64, index: usize, size: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let sz = size as f32;

    // Far-to-near drawing order keeps occlusions consistent with depth.
    let background = (rng.gen_range(3000..5000) as f32, random_colour(&mut rng));
    let mut layers: Vec<(Shape, f32, [f32; 3])> = (0..rng.gen_range(3..=6))
        .map(|_| {
            let shape = Shape::random(&mut rng, sz);
            (shape, rng.gen_range(500..3000) as f32, random_colour(&mut rng))
        })
        .collect();
    layers.sort_by(|a, b| b.1.total_cmp(&a.1));

    let stripe_freq = rng.gen_range(0.2..0.8f32);
    let stripe_angle = rng.gen_range(0.0..std::f32::consts::PI);
    let stripe_amp = rng.gen_range(0.02..0.08f32);
    let marks: Vec<(Shape, [f32; 3])> = (0..rng.gen_range(1..=2))
        .map(|_| {
            let s = Shape::random(&mut rng, sz);
            let tint = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
            (s, tint)
        })
        .collect();

    let n = size * size;
    let mut depth = Vec::with_capacity(n);
    let mut rgb = vec![0.0f32; 3 * n];
    let (sin_a, cos_a) = stripe_angle.sin_cos();
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
            let (mut d, mut colour) = background;
            for (shape, ld, lc) in &layers {
                if shape.contains(py, px) {
                    d = *ld;
                    colour = *lc;
                }
            }
            let stripe = stripe_amp * (stripe_freq * (px * cos_a + py * sin_a)).sin();
            for (mark, tint) in &marks {
                if mark.contains(py, px) {
                    colour.iter_mut().zip(tint).for_each(|(c, t)| *c += t);
                }
            }
            let i = y * size + x;
            for (c, &v) in colour.iter().enumerate() {
                let noise = rng.gen_range(-0.02..0.02f32);
                rgb[c * n + i] = quantize(v + stripe + noise);
            }
            depth.push(d);
        }
    }
    Sample {
        name: format!("synth_{index:04}"),
        depth: DepthMap::new(size, size, depth).expect("square scene"),
        rgb: GuidanceImage::new(size, size, rgb).expect("square scene"),
    }
}

/// The train and validation splits, generated in memory.
pub fn synth_corpus(cfg: &SynthConfig) -> (Dataset, Dataset) {
    let make = |range: std::ops::Range<usize>| range.map(|i| synth_sample(cfg.seed, i, cfg.size)).collect();
    (
        Dataset::from_samples("synthetic/train", make(0..cfg.train)),
        Dataset::from_samples("synthetic/val", make(cfg.train..cfg.train + cfg.val)),
    )
}

/// Writes the corpus as 16-bit PGM depth, PPM colour and a manifest at
/// `dir/manifest.tsv`; returns the manifest.
pub fn write_synth_corpus(dir: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    if cfg.size == 0 || cfg.train + cfg.val == 0 {
        return Err(Error::contract("synthetic corpus needs a positive size and at least one image"));
    }
    for sub in ["depth", "rgb"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut entries = Vec::with_capacity(cfg.train + cfg.val);
    for i in 0..cfg.train + cfg.val {
        let s = synth_sample(cfg.seed, i, cfg.size);
        let depth = dir.join("depth").join(format!("{}.pgm", s.name));
        let rgb = dir.join("rgb").join(format!("{}.ppm", s.name));
        save_depth(&s.depth, &depth, DepthFormat::Pgm16)?;
        save_rgb(&s.rgb, &rgb)?;
        let split = if i < cfg.train { Split::Train } else { Split::Val };
        entries.push(ManifestEntry { rgb, depth, split });
    }
    let manifest = Manifest {
        name: "synthetic".to_string(),
        unit_scale: 1.0,
        entries,
    };
    manifest.save(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}
