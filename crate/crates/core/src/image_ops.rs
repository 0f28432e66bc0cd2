//! Depth/colour containers and the data transforms: bicubic resampling,
//! degradation, aligned cropping and range normalization.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Single-channel depth map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    /// Physical depth units per stored unit (e.g. 0.1 for a 16-bit file
    /// holding tenths of a millimetre, when results are reported in mm).
    pub unit_scale: f32,
    /// `false` marks pixels with missing depth.
    pub valid: Option<Vec<bool>>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::contract(format!(
                "depth map {height}x{width} cannot hold {} values",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            unit_scale: 1.0,
            valid: None,
        })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("positive dims")
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|m| m[i])
    }

    pub fn with_unit_scale(mut self, unit_scale: f32) -> Self {
        self.unit_scale = unit_scale;
        self
    }
}

/// Three-channel colour image in `[0, 1]`, stored planar (`[3, H, W]`).
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl GuidanceImage {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != 3 * height * width {
            return Err(Error::contract(format!(
                "guidance image {height}x{width} cannot hold {} values",
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

/// Cubic convolution kernel with `a = -0.5` (Catmull-Rom).
fn cubic<T: Scalar>(x: T) -> T {
    let a = T::from_f64_lossy(-0.5);
    let (one, two) = (T::one(), T::from_f64_lossy(2.0));
    let three = T::from_f64_lossy(3.0);
    let x = x.abs();
    if x <= one {
        ((a + two) * x - (a + three)) * x * x + one
    } else if x < two {
        let (five, four, eight) = (T::from_f64_lossy(5.0), T::from_f64_lossy(4.0), T::from_f64_lossy(8.0));
        ((a * x - five * a) * x + eight * a) * x - four * a
    } else {
        T::zero()
    }
}

/// Four clamped taps per output sample, half-pixel-center mapping.
fn cubic_taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<[(usize, T); 4]> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let frac = T::from_f64_lossy(src - base);
            let mut taps = [(0usize, T::zero()); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let offset = k as isize - 1;
                let idx = (base as isize + offset).clamp(0, n_in as isize - 1) as usize;
                *tap = (idx, cubic(frac - T::from_f64_lossy(offset as f64)));
            }
            taps
        })
        .collect()
}

/// Separable bicubic resampling of a row-major `h x w` array.
pub fn bicubic_resize<T: Scalar>(x: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<T>> {
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 || x.len() != h * w {
        return Err(Error::contract(format!(
            "bicubic_resize: {h}x{w} ({} values) -> {out_h}x{out_w}",
            x.len()
        )));
    }
    let tx = cubic_taps::<T>(w, out_w);
    let ty = cubic_taps::<T>(h, out_h);
    let mut rows = vec![T::zero(); h * out_w];
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for (ox, taps) in tx.iter().enumerate() {
            rows[y * out_w + ox] = taps.iter().fold(T::zero(), |acc, &(i, wt)| acc + wt * src[i]);
        }
    }
    let mut out = vec![T::zero(); out_h * out_w];
    for (oy, taps) in ty.iter().enumerate() {
        for ox in 0..out_w {
            out[oy * out_w + ox] = taps.iter().fold(T::zero(), |acc, &(i, wt)| acc + wt * rows[i * out_w + ox]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Degradation {
    #[default]
    Bicubic,
    Nearest,
}

impl std::str::FromStr for Degradation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bicubic" => Ok(Self::Bicubic),
            "nearest" => Ok(Self::Nearest),
            other => Err(Error::Config(format!("unknown degradation `{other}` (bicubic|nearest)"))),
        }
    }
}

impl std::fmt::Display for Degradation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bicubic => "bicubic",
            Self::Nearest => "nearest",
        })
    }
}

pub fn check_scale(s: usize) -> Result<()> {
    if !matches!(s, 4 | 8 | 16) {
        return Err(Error::contract(format!("scale factor must be 4, 8 or 16, got {s}")));
    }
    Ok(())
}

/// Produces the low-resolution map `(h/s, w/s)`.
pub fn degrade(hr: &DepthMap, s: usize, method: Degradation) -> Result<DepthMap> {
    check_scale(s)?;
    if hr.height % s != 0 || hr.width % s != 0 {
        return Err(Error::contract(format!(
            "degrade: {}x{} is not divisible by scale {s}; crop first",
            hr.height, hr.width
        )));
    }
    let (lh, lw) = (hr.height / s, hr.width / s);
    let values = match method {
        Degradation::Bicubic => bicubic_resize(&hr.values, hr.height, hr.width, lh, lw)?,
        Degradation::Nearest => {
            let mut v = Vec::with_capacity(lh * lw);
            for y in 0..lh {
                for x in 0..lw {
                    v.push(hr.get(y * s + s / 2, x * s + s / 2));
                }
            }
            v
        }
    };
    Ok(DepthMap {
        height: lh,
        width: lw,
        values,
        unit_scale: hr.unit_scale,
        valid: None,
    })
}

/// Bicubic upsampling of an LR map by `s`.
pub fn upsample(lr: &DepthMap, s: usize) -> Result<DepthMap> {
    let values = bicubic_resize(&lr.values, lr.height, lr.width, lr.height * s, lr.width * s)?;
    Ok(DepthMap {
        height: lr.height * s,
        width: lr.width * s,
        values,
        unit_scale: lr.unit_scale,
        valid: None,
    })
}

fn crop_plane<T: Copy>(src: &[T], w: usize, (y0, x0): (usize, usize), h: usize, cw: usize) -> Vec<T> {
    (y0..y0 + h).flat_map(|y| src[y * w + x0..y * w + x0 + cw].iter().copied()).collect()
}

/// Rectangular crop of a depth map at `origin = (row, col)`.
pub fn crop_depth(d: &DepthMap, origin: (usize, usize), h: usize, w: usize) -> Result<DepthMap> {
    if h == 0 || w == 0 || origin.0 + h > d.height || origin.1 + w > d.width {
        return Err(Error::contract(format!(
            "crop {h}x{w} at {origin:?} exceeds {}x{} map",
            d.height, d.width
        )));
    }
    Ok(DepthMap {
        height: h,
        width: w,
        values: crop_plane(&d.values, d.width, origin, h, w),
        unit_scale: d.unit_scale,
        valid: d.valid.as_ref().map(|m| crop_plane(m, d.width, origin, h, w)),
    })
}

pub fn crop_rgb(img: &GuidanceImage, origin: (usize, usize), h: usize, w: usize) -> Result<GuidanceImage> {
    if h == 0 || w == 0 || origin.0 + h > img.height || origin.1 + w > img.width {
        return Err(Error::contract(format!(
            "crop {h}x{w} at {origin:?} exceeds {}x{} image",
            img.height, img.width
        )));
    }
    let values = (0..3).flat_map(|c| crop_plane(img.channel(c), img.width, origin, h, w)).collect();
    GuidanceImage::new(h, w, values)
}

/// Aligned square crops of both modalities at the same HR coordinates.
pub fn crop_patch(depth: &DepthMap, rgb: &GuidanceImage, size: usize, origin: (usize, usize)) -> Result<(DepthMap, GuidanceImage)> {
    if depth.height != rgb.height || depth.width != rgb.width {
        return Err(Error::contract(format!(
            "depth {}x{} and guidance {}x{} are not aligned",
            depth.height, depth.width, rgb.height, rgb.width
        )));
    }
    Ok((crop_depth(depth, origin, size, size)?, crop_rgb(rgb, origin, size, size)?))
}

/// Largest centered crop whose sides are multiples of `s`.
pub fn center_crop_to_multiple(depth: &DepthMap, rgb: &GuidanceImage, s: usize) -> Result<(DepthMap, GuidanceImage)> {
    let (h, w) = (depth.height / s * s, depth.width / s * s);
    if h == 0 || w == 0 {
        return Err(Error::contract(format!(
            "{}x{} is smaller than one {s}x{s} block",
            depth.height, depth.width
        )));
    }
    let origin = ((depth.height - h) / 2, (depth.width - w) / 2);
    Ok((crop_depth(depth, origin, h, w)?, crop_rgb(rgb, origin, h, w)?))
}

/// Affine map between stored depth and `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormMeta {
    pub min: f32,
    pub max: f32,
}

impl NormMeta {
    /// Normalization used for network inputs: the valid range of the LR
    /// map, widened to one unit when the map is flat so that constant
    /// patches still map to finite values.
    pub fn for_input(d: &DepthMap) -> Result<Self> {
        let (min, max) = valid_range(d).ok_or_else(|| Error::contract("normalize: no valid pixels"))?;
        Ok(if max > min { Self { min, max } } else { Self { min, max: min + 1.0 } })
    }

    pub fn normalize(&self, v: f32) -> f32 {
        ((v as f64 - self.min as f64) / (self.max as f64 - self.min as f64)) as f32
    }

    pub fn denormalize(&self, v: f32) -> f32 {
        (v as f64 * (self.max as f64 - self.min as f64) + self.min as f64) as f32
    }

    pub fn apply(&self, d: &DepthMap) -> DepthMap {
        DepthMap {
            values: d.values.iter().map(|&v| self.normalize(v)).collect(),
            ..d.clone()
        }
    }

    pub fn invert(&self, d: &DepthMap) -> DepthMap {
        DepthMap {
            values: d.values.iter().map(|&v| self.denormalize(v)).collect(),
            ..d.clone()
        }
    }
}

/// Range of the valid pixels.
pub fn valid_range(d: &DepthMap) -> Option<(f32, f32)> {
    d.values
        .iter()
        .enumerate()
        .filter(|&(i, _)| d.is_valid(i))
        .map(|(_, &v)| v)
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

/// Maps the valid range of `d` onto `[0, 1]`.
pub fn min_max_normalize(d: &DepthMap) -> Result<(DepthMap, NormMeta)> {
    let (min, max) = valid_range(d).ok_or_else(|| Error::contract("normalize: no valid pixels"))?;
    if max <= min {
        return Err(Error::contract(format!("normalize: degenerate range, every valid pixel is {min}")));
    }
    let meta = NormMeta { min, max };
    Ok((meta.apply(d), meta))
}

pub fn denormalize(d: &DepthMap, meta: &NormMeta) -> DepthMap {
    meta.invert(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64, h: usize, w: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..h * w).map(|_| rng.gen_range(0.0..10.0)).collect()
    }

    /// Keys' cubic kernel written out directly in f64.
    fn keys(x: f64) -> f64 {
        let a = -0.5;
        let x = x.abs();
        if x <= 1.0 {
            (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
        } else if x < 2.0 {
            a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
        } else {
            0.0
        }
    }

    /// Non-separable 16-tap evaluation of each output sample.
    fn bicubic_oracle(x: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let mut out = vec![0.0; oh * ow];
        for oy in 0..oh {
            let sy = (oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
            for ox in 0..ow {
                let sx = (ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
                let mut acc = 0.0;
                for iy in (sy.floor() as i64 - 1)..=(sy.floor() as i64 + 2) {
                    for ix in (sx.floor() as i64 - 1)..=(sx.floor() as i64 + 2) {
                        let cy = iy.clamp(0, h as i64 - 1) as usize;
                        let cx = ix.clamp(0, w as i64 - 1) as usize;
                        acc += keys(sy - iy as f64) * keys(sx - ix as f64) * x[cy * w + cx];
                    }
                }
                out[oy * ow + ox] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_is_preserved() {
        let x = vec![3.25f32; 6 * 5];
        let y = bicubic_resize(&x, 6, 5, 13, 7).unwrap();
        assert!(y.iter().all(|&v| (v - 3.25).abs() <= 1e-6 * 3.25));
        let y = bicubic_resize(&vec![2.0f64; 64], 8, 8, 2, 2).unwrap();
        assert!(y.iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn linear_ramp_is_reproduced_away_from_borders() {
        let (h, w) = (6, 10);
        let x: Vec<f64> = (0..h * w).map(|i| (i % w) as f64 * 1.5 + 2.0).collect();
        let y = bicubic_resize(&x, h, w, 2 * h, 2 * w).unwrap();
        for oy in 0..2 * h {
            for ox in 4..2 * w - 4 {
                let src = (ox as f64 + 0.5) / 2.0 - 0.5;
                assert!((y[oy * 2 * w + ox] - (src * 1.5 + 2.0)).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn downsample_matches_direct_kernel_evaluation() {
        let x = random_map(3, 8, 8);
        let y = bicubic_resize(&x, 8, 8, 4, 4).unwrap();
        for (a, e) in y.iter().zip(bicubic_oracle(&x, 8, 8, 4, 4)) {
            assert!((a - e).abs() <= 1e-6);
        }
        let y = bicubic_resize(&x, 8, 8, 19, 13).unwrap();
        for (a, e) in y.iter().zip(bicubic_oracle(&x, 8, 8, 19, 13)) {
            assert!((a - e).abs() <= 1e-6);
        }
    }

    #[test]
    fn degrade_constant_and_shape() {
        let hr = DepthMap::constant(256, 256, 7.5);
        for s in [4, 8, 16] {
            let lr = degrade(&hr, s, Degradation::Bicubic).unwrap();
            assert_eq!((lr.height, lr.width), (256 / s, 256 / s));
            assert!(lr.values.iter().all(|&v| (v - 7.5).abs() < 1e-5));
            let back = upsample(&lr, s).unwrap();
            assert!(back.values.iter().all(|&v| (v - 7.5).abs() < 1e-5));
        }
    }

    #[test]
    fn degrade_is_bicubic_resize() {
        let vals: Vec<f32> = random_map(4, 32, 48).into_iter().map(|v| v as f32).collect();
        let hr = DepthMap::new(32, 48, vals.clone()).unwrap();
        let lr = degrade(&hr, 4, Degradation::Bicubic).unwrap();
        assert_eq!(lr.values, bicubic_resize(&vals, 32, 48, 8, 12).unwrap());
    }

    #[test]
    fn degrade_nearest_picks_block_samples() {
        let vals: Vec<f32> = (0..64).map(|v| v as f32).collect();
        let hr = DepthMap::new(8, 8, vals).unwrap();
        let lr = degrade(&hr, 4, Degradation::Nearest).unwrap();
        assert_eq!(lr.values, vec![18.0, 22.0, 50.0, 54.0]);
    }

    #[test]
    fn degrade_rejects_indivisible_dims() {
        assert!(degrade(&DepthMap::constant(30, 32, 1.0), 4, Degradation::Bicubic).is_err());
        assert!(degrade(&DepthMap::constant(32, 32, 1.0), 3, Degradation::Bicubic).is_err());
    }

    fn gradient_pair(h: usize, w: usize) -> (DepthMap, GuidanceImage) {
        let d = DepthMap::new(h, w, (0..h * w).map(|v| v as f32).collect()).unwrap();
        let g = GuidanceImage::new(h, w, (0..3 * h * w).map(|v| v as f32 / (3 * h * w) as f32).collect()).unwrap();
        (d, g)
    }

    #[test]
    fn full_crop_is_identity() {
        let (d, g) = gradient_pair(16, 16);
        let (cd, cg) = crop_patch(&d, &g, 16, (0, 0)).unwrap();
        assert_eq!((cd, cg), (d, g));
    }

    #[test]
    fn crop_indexing() {
        let (d, g) = gradient_pair(300, 300);
        let (cd, cg) = crop_patch(&d, &g, 256, (10, 20)).unwrap();
        assert_eq!(cd.get(0, 0), d.get(10, 20));
        assert_eq!(cd.get(255, 255), d.get(265, 275));
        assert_eq!(cg.channel(2)[0], g.channel(2)[10 * 300 + 20]);
        assert!(crop_patch(&d, &g, 256, (50, 0)).is_err());
    }

    #[test]
    fn crops_tile_back_to_the_region() {
        let (d, g) = gradient_pair(24, 24);
        let mut rebuilt = vec![f32::NAN; 24 * 24];
        for oy in (0..24).step_by(8) {
            for ox in (0..24).step_by(8) {
                let (cd, _) = crop_patch(&d, &g, 8, (oy, ox)).unwrap();
                for y in 0..8 {
                    for x in 0..8 {
                        rebuilt[(oy + y) * 24 + ox + x] = cd.get(y, x);
                    }
                }
            }
        }
        assert_eq!(rebuilt, d.values);
    }

    #[test]
    fn normalize_endpoints() {
        let d = DepthMap::new(1, 2, vec![0.0, 100.0]).unwrap();
        let (n, meta) = min_max_normalize(&d).unwrap();
        assert_eq!(n.values, vec![0.0, 1.0]);
        assert_eq!(meta, NormMeta { min: 0.0, max: 100.0 });
    }

    #[test]
    fn normalize_ignores_invalid_pixels() {
        let mut d = DepthMap::new(1, 3, vec![0.0, 40.0, 60.0]).unwrap();
        d.valid = Some(vec![false, true, true]);
        let (_, meta) = min_max_normalize(&d).unwrap();
        assert_eq!(meta, NormMeta { min: 40.0, max: 60.0 });
    }

    #[test]
    fn normalize_rejects_constant_map() {
        assert!(min_max_normalize(&DepthMap::constant(3, 3, 5.0)).is_err());
    }

    #[test]
    fn input_normalization_tolerates_flat_maps() {
        let meta = NormMeta::for_input(&DepthMap::constant(2, 2, 5.0)).unwrap();
        assert_eq!(meta, NormMeta { min: 5.0, max: 6.0 });
        assert_eq!(meta.normalize(5.0), 0.0);
        let mut d = DepthMap::constant(1, 2, 0.0);
        d.valid = Some(vec![false, false]);
        assert!(NormMeta::for_input(&d).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(seed in 0u64..1000, h in 1usize..12, w in 2usize..12) {
            let vals: Vec<f32> = random_map(seed, h, w).into_iter().map(|v| (v * 500.0 + 200.0) as f32).collect();
            let d = DepthMap::new(h, w, vals).unwrap();
            prop_assume!(valid_range(&d).map(|(a, b)| b > a).unwrap_or(false));
            let (n, meta) = min_max_normalize(&d).unwrap();
            prop_assert!(n.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let back = denormalize(&n, &meta);
            for (a, b) in back.values.iter().zip(&d.values) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs());
            }
        }

        #[test]
        fn same_size_resize_is_identity(seed in 0u64..1000, h in 1usize..10, w in 1usize..10) {
            let x = random_map(seed, h, w);
            prop_assert_eq!(bicubic_resize(&x, h, w, h, w).unwrap(), x);
        }

        #[test]
        fn overshoot_is_bounded(seed in 0u64..1000, oh in 1usize..24, ow in 1usize..24) {
            let x = random_map(seed, 8, 8);
            let (lo, hi) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            // absolute tap weights sum to at most 1.25 per axis
            let (mid, half) = ((hi + lo) / 2.0, (hi - lo) / 2.0);
            for v in bicubic_resize(&x, 8, 8, oh, ow).unwrap() {
                prop_assert!((v - mid).abs() <= 1.5625 * half + 1e-9);
            }
        }
    }
}
