//! Run configuration: every network and training field addressable by a
//! dotted key. Values are layered: built-in defaults, then the `--config`
//! file, then command-line flags and `--set key=value` overrides, which
//! win.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use msfum_core::net::NetworkConfig;
use msfum_core::train::{LossKind, TrainConfig};
use msfum_core::{Ablation, Degradation, Error, Result};

/// Where the samples of a run come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    None,
    /// The in-memory synthetic corpus generated from `train.seed`.
    Synthetic,
    Manifest(PathBuf),
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "" | "none" => Self::None,
            "synthetic" => Self::Synthetic,
            path => Self::Manifest(PathBuf::from(path)),
        })
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::None => f.write_str("none"),
            Self::Synthetic => f.write_str("synthetic"),
            Self::Manifest(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: NetworkConfig,
    /// `net.levels` follows `log2(net.scale)` unless set explicitly.
    levels_explicit: bool,
    pub train: TrainConfig,
    pub data: DataSource,
    /// Fraction of the train split used for training when the manifest has
    /// no validation entries; the remainder validates.
    pub train_fraction: f64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

/// Every addressable key, in echo order.
pub const KEYS: [&str; 21] = [
    "net.scale",
    "net.base_channels",
    "net.levels",
    "net.state_size",
    "net.channel_cap",
    "net.ablation",
    "train.lr0",
    "train.decay_factor",
    "train.decay_every",
    "train.batch",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.epochs",
    "train.patch",
    "train.seed",
    "train.loss",
    "train.degradation",
    "data.source",
    "data.train_fraction",
    "run.threads",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: NetworkConfig::for_scale(4).expect("x4 is supported"),
            levels_explicit: false,
            train: TrainConfig::default(),
            data: DataSource::None,
            train_fraction: 1.0,
            threads: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "net.scale" => {
                let s: usize = parse(key, v)?;
                let fresh = NetworkConfig::for_scale(s).map_err(|e| Error::Config(e.to_string()))?;
                self.net.scale = s;
                if !self.levels_explicit {
                    self.net.levels = fresh.levels;
                }
            }
            "net.base_channels" => self.net.base_channels = parse(key, v)?,
            "net.levels" => {
                self.net.levels = parse(key, v)?;
                self.levels_explicit = true;
            }
            "net.state_size" => self.net.state_size = parse(key, v)?,
            "net.channel_cap" => self.net.channel_cap = parse(key, v)?,
            "net.ablation" => self.net.ablation = v.parse::<Ablation>()?,
            "train.lr0" => self.train.lr0 = parse(key, v)?,
            "train.decay_factor" => self.train.decay_factor = parse(key, v)?,
            "train.decay_every" => self.train.decay_every = parse(key, v)?,
            "train.batch" => self.train.batch = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.eps" => self.train.eps = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.patch" => self.train.patch = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "train.loss" => self.train.loss = v.parse::<LossKind>()?,
            "train.degradation" => self.train.degradation = v.parse::<Degradation>()?,
            "data.source" => self.data = v.parse()?,
            "data.train_fraction" => self.train_fraction = parse(key, v)?,
            "run.threads" => self.threads = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let n = &self.net;
        let t = &self.train;
        Some(match key {
            "net.scale" => n.scale.to_string(),
            "net.base_channels" => n.base_channels.to_string(),
            "net.levels" => n.levels.to_string(),
            "net.state_size" => n.state_size.to_string(),
            "net.channel_cap" => n.channel_cap.to_string(),
            "net.ablation" => n.ablation.to_string(),
            "train.lr0" => t.lr0.to_string(),
            "train.decay_factor" => t.decay_factor.to_string(),
            "train.decay_every" => t.decay_every.to_string(),
            "train.batch" => t.batch.to_string(),
            "train.beta1" => t.beta1.to_string(),
            "train.beta2" => t.beta2.to_string(),
            "train.eps" => t.eps.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.patch" => t.patch.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.loss" => t.loss.to_string(),
            "train.degradation" => t.degradation.to_string(),
            "data.source" => self.data.to_string(),
            "data.train_fraction" => self.train_fraction.to_string(),
            "run.threads" => self.threads.to_string(),
            _ => return None,
        })
    }

    /// Applies a `key = value` file; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Parses one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("data.train_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// The run record: tool version, command, seed and every key. It is
    /// itself a valid config file.
    pub fn record(&self, command: &str) -> String {
        let mut out = format!(
            "# msfum {}\n# command = {command}\n# seed = {}\n",
            env!("CARGO_PKG_VERSION"),
            self.train.seed
        );
        for key in KEYS {
            if let Some(v) = self.get(key) {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips_through_the_record() {
        let mut c = RunConfig::default();
        c.apply_text(
            "net.scale = 8\nnet.ablation = guidance,mamba\ntrain.lr0 = 0.0005\ntrain.loss = l2\n# note\ndata.source = synthetic\n",
            "test",
        )
        .unwrap();
        assert_eq!(c.net.levels, 3);
        let mut again = RunConfig::default();
        again.apply_text(&c.record("train"), "record").unwrap();
        assert_eq!(again.record("train"), c.record("train"));
        assert_eq!(again.net, c.net);
        assert_eq!(again.train, c.train);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("net.colour", "1").is_err());
        assert!(c.set("train.epochs", "many").is_err());
        assert!(c.set("net.scale", "3").is_err());
        let err = c.apply_text("train.lr0 = 1\nbogus = 2\n", "f.cfg").unwrap_err();
        assert!(err.to_string().contains("f.cfg:2"), "{err}");
    }

    #[test]
    fn explicit_levels_survive_scale_changes() {
        let mut c = RunConfig::default();
        c.set("net.levels", "2").unwrap();
        c.set("net.scale", "16").unwrap();
        assert_eq!((c.net.scale, c.net.levels), (16, 2));
    }

    #[test]
    fn overrides_win_over_file_values() {
        let mut c = RunConfig::default();
        c.apply_text("train.epochs = 3", "f").unwrap();
        c.apply_override("train.epochs=7").unwrap();
        assert_eq!(c.train.epochs, 7);
    }
}
