//! Depth/colour image files, dataset manifests and the checkpoint
//! container.
//!
//! Images: binary PGM (`P5`, 8 or 16 bit, big-endian samples as Netpbm
//! prescribes), binary PPM (`P6`, 8 bit) and PNG (8/16-bit grayscale, 8-bit
//! RGB/RGBA). Checkpoints are little-endian and versioned.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image_ops::{DepthMap, GuidanceImage};
use crate::net::{Ablation, MsfumNet, NetworkConfig};
use crate::nn::NetworkParams;
use crate::tensor::Tensor;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_error(path: &Path, reason: impl Into<String>, bytes: &[u8]) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
        header: bytes[..bytes.len().min(16)].to_vec(),
    }
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = BufWriter::new(File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.into_inner()
            .map_err(|e| Error::io(&tmp, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Container {
    Pnm,
    Png,
}

fn sniff(bytes: &[u8]) -> Option<Container> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(Container::Png)
    } else if bytes.len() >= 2 && bytes[0] == b'P' {
        Some(Container::Pnm)
    } else {
        None
    }
}

/// Decoded integer raster.
struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    maxval: u32,
    samples: Vec<u16>,
}

/// Netpbm header: magic, width, height, maxval, each separated by
/// whitespace with `#` comments, then exactly one whitespace byte.
fn parse_pnm(path: &Path, bytes: &[u8]) -> Result<Raster> {
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(format_error(path, "expected binary PGM (P5) or PPM (P6)", bytes)),
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_error(path, "malformed header", bytes))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_error(path, "malformed header", bytes));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format_error(path, format!("unsupported dimensions {width}x{height} / maxval {maxval}"), bytes));
    }
    let n = width as usize * height as usize * channels;
    let wide = maxval > 255;
    let payload = &bytes[pos..];
    let need = if wide { 2 * n } else { n };
    if payload.len() < need {
        return Err(format_error(path, format!("truncated: {} of {need} sample bytes", payload.len()), bytes));
    }
    let samples = if wide {
        payload[..need].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        payload[..need].iter().map(|&b| b as u16).collect()
    };
    Ok(Raster {
        width: width as usize,
        height: height as usize,
        channels,
        maxval,
        samples,
    })
}

fn parse_png(path: &Path, bytes: &[u8]) -> Result<Raster> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(|e| format_error(path, format!("PNG: {e}"), bytes))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_error(path, format!("PNG: {e}"), bytes))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(format_error(path, format!("unsupported PNG colour type {other:?}"), bytes)),
    };
    let data = &buf[..info.buffer_size()];
    let (samples, maxval) = match info.bit_depth {
        png::BitDepth::Eight => (data.iter().map(|&b| b as u16).collect::<Vec<_>>(), 255),
        png::BitDepth::Sixteen => (data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect(), 65535),
        other => return Err(format_error(path, format!("unsupported PNG bit depth {other:?}"), bytes)),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let samples = if channels == 4 {
        samples.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()
    } else {
        samples
    };
    Ok(Raster {
        width,
        height,
        channels: channels.min(3),
        maxval,
        samples,
    })
}

fn decode(path: &Path) -> Result<Raster> {
    let bytes = read_file(path)?;
    match sniff(&bytes) {
        Some(Container::Pnm) => parse_pnm(path, &bytes),
        Some(Container::Png) => parse_png(path, &bytes),
        None => Err(format_error(path, "not a PGM/PPM/PNG file", &bytes)),
    }
}

/// Loads a grayscale depth image; samples are multiplied by `unit_scale`
/// and zero samples are marked invalid.
pub fn load_depth(path: &Path, unit_scale: f32) -> Result<DepthMap> {
    let r = decode(path)?;
    if r.channels != 1 {
        let bytes = read_file(path)?;
        return Err(format_error(path, "depth image must be single-channel", &bytes));
    }
    let valid: Vec<bool> = r.samples.iter().map(|&s| s != 0).collect();
    let values = r.samples.iter().map(|&s| s as f32 * unit_scale).collect();
    let mut d = DepthMap::new(r.height, r.width, values)?.with_unit_scale(unit_scale);
    d.valid = Some(valid);
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthFormat {
    #[default]
    Pgm16,
    Png16,
}

impl DepthFormat {
    /// `.png` selects PNG; everything else is written as 16-bit PGM.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => Self::Png16,
            _ => Self::Pgm16,
        }
    }
}

/// Outcome of a depth write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaveReport {
    /// Pixels whose value fell outside `[0, 65535]` after unit scaling.
    pub clamped: usize,
}

/// Quantizes to 16-bit samples (`round(value / unit_scale)`, invalid pixels
/// stored as 0) and writes the file.
pub fn save_depth(d: &DepthMap, path: &Path, format: DepthFormat) -> Result<SaveReport> {
    let mut report = SaveReport::default();
    let samples: Vec<u16> = d
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !d.is_valid(i) {
                return 0;
            }
            let q = (v as f64 / d.unit_scale as f64).round();
            if !(0.0..=65535.0).contains(&q) {
                report.clamped += 1;
            }
            q.clamp(0.0, 65535.0) as u16
        })
        .collect();
    if report.clamped > 0 {
        log::warn!("{}: {} depth values clamped to the 16-bit range", path.display(), report.clamped);
    }
    let bytes = match format {
        DepthFormat::Pgm16 => {
            let mut out = format!("P5\n{} {}\n65535\n", d.width, d.height).into_bytes();
            out.extend(samples.iter().flat_map(|s| s.to_be_bytes()));
            out
        }
        DepthFormat::Png16 => {
            let raw: Vec<u8> = samples.iter().flat_map(|s| s.to_be_bytes()).collect();
            encode_png(d.width, d.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &raw)?
        }
    };
    write_atomic(path, &bytes)?;
    Ok(report)
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, raw: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::contract(format!("PNG encode: {e}")))?;
        w.write_image_data(raw)
            .map_err(|e| Error::contract(format!("PNG encode: {e}")))?;
    }
    Ok(out)
}

/// Loads an 8-bit colour image into `[0, 1]` (`sample / 255`).
pub fn load_rgb(path: &Path) -> Result<GuidanceImage> {
    let r = decode(path)?;
    if r.channels != 3 || r.maxval != 255 {
        let bytes = read_file(path)?;
        return Err(format_error(path, "guidance image must be 8-bit RGB", &bytes));
    }
    let n = r.width * r.height;
    let mut values = vec![0.0f32; 3 * n];
    for (i, px) in r.samples.chunks_exact(3).enumerate() {
        for c in 0..3 {
            values[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    GuidanceImage::new(r.height, r.width, values)
}

/// Writes an 8-bit binary PPM (values clamped to `[0, 1]`).
pub fn save_rgb(img: &GuidanceImage, path: &Path) -> Result<()> {
    let n = img.width * img.height;
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for i in 0..n {
        for c in 0..3 {
            out.push((img.values[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write_atomic(path, &out)
}

/// Writes a map as an 8-bit PGM with `value / max` brightness (for visual
/// inspection of predictions and error maps).
pub fn save_preview(d: &DepthMap, path: &Path) -> Result<()> {
    let max = d.values.iter().cloned().fold(0.0f32, f32::max);
    let mut out = format!("P5\n{} {}\n255\n", d.width, d.height).into_bytes();
    out.extend(d.values.iter().map(|&v| if max > 0.0 { (v / max * 255.0).clamp(0.0, 255.0).round() as u8 } else { 0 }));
    write_atomic(path, &out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (train|val|test)"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub split: Split,
}

/// Ordered list of RGB/depth pairs. Text form: one
/// `<rgb_path>\t<depth_path>\t<split>` line per pair; relative paths are
/// resolved against the manifest's directory; `#` lines are comments,
/// except `# name = ...` and `# unit_scale = ...` which set metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub unit_scale: f32,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut m = Manifest {
            name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            unit_scale: 1.0,
            entries: Vec::new(),
        };
        for (lineno, line) in text.lines().enumerate() {
            let bad = |why: &str| Error::Config(format!("{}:{}: {why}", path.display(), lineno + 1));
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    match k.trim() {
                        "name" => m.name = v.trim().to_string(),
                        "unit_scale" => m.unit_scale = v.trim().parse().map_err(|_| bad("unit_scale is not a number"))?,
                        _ => {}
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected <rgb>\\t<depth>\\t<split>"));
            }
            m.entries.push(ManifestEntry {
                rgb: base.join(cols[0]),
                depth: base.join(cols[1]),
                split: cols[2].trim().parse().map_err(|e: Error| bad(&e.to_string()))?,
            });
        }
        Ok(m)
    }

    /// Writes paths relative to the manifest directory when possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = format!("# name = {}\n# unit_scale = {}\n", self.name, self.unit_scale);
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", rel(&e.rgb), rel(&e.depth), e.split));
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

const MAGIC: &[u8; 4] = b"MSFU";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters plus the configuration they were built for.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: NetworkParams<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(params: &NetworkParams<f32>, cfg: &NetworkConfig) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, CHECKPOINT_VERSION);
    for v in [cfg.scale, cfg.base_channels, cfg.levels, cfg.state_size, cfg.channel_cap] {
        put_u32(&mut out, v as u32);
    }
    let a = cfg.ablation;
    out.push(a.use_guidance as u8 | (a.use_rdcb as u8) << 1 | (a.use_mamba as u8) << 2);
    put_u64(&mut out, params.len() as u64);
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        out.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses a container without checking it against a network layout.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:02x?}", &bytes[..4])));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {CHECKPOINT_VERSION})")));
    }
    let mut fields = [0usize; 5];
    for f in &mut fields {
        *f = c.u32("config")? as usize;
    }
    let flags = c.take(1, "ablation flags")?[0];
    if flags > 0b111 {
        return Err(Error::Checkpoint(format!("invalid ablation flags {flags:#04x}")));
    }
    let [scale, base_channels, levels, state_size, channel_cap] = fields;
    let config = NetworkConfig {
        scale,
        base_channels,
        levels,
        state_size,
        channel_cap,
        ablation: Ablation {
            use_guidance: flags & 1 != 0,
            use_rdcb: flags & 2 != 0,
            use_mamba: flags & 4 != 0,
        },
    };
    config.validate().map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let count = c.u64("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("`{name}`: implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| c.u64("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes_needed = numel
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("`{name}`: shape {shape:?} overflows")))?;
        let data = c
            .take(bytes_needed, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        entries.push((name, Tensor::parameter(&shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(Checkpoint {
        config,
        params: NetworkParams::new(entries).map_err(|e| Error::Checkpoint(e.to_string()))?,
    })
}

pub fn checkpoint_save(params: &NetworkParams<f32>, cfg: &NetworkConfig, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params, cfg))
}

/// Reads a container and verifies that its parameters match the embedded
/// configuration exactly.
pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let ck = decode_checkpoint(&bytes)?;
    MsfumNet::from_params(ck.config, &ck.params)?;
    Ok(ck)
}

#[cfg(test)]
mod tests;
