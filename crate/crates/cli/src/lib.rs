//! Command surface of the `msfum` tool. [`dispatch`] takes the argument
//! vector and returns the process exit code: 0 on success, 2 for usage
//! errors (with usage text), 1 for runtime failures (with a one-line
//! `msfum: error[<kind>]: <message>` diagnostic on stderr).

pub mod bench;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use msfum_core::gradcheck::suite::run_suite;
use msfum_core::gradcheck::GradcheckConfig;
use msfum_core::image_ops::{crop_depth, degrade};
use msfum_core::io::{checkpoint_load, checkpoint_save, load_depth, load_rgb, save_depth, DepthFormat, Manifest, Split};
use msfum_core::synth::{synth_corpus, write_synth_corpus, SynthConfig};
use msfum_core::train::{ablation_run, evaluate_dataset, super_resolve, train_loop, Dataset, Predictor};
use msfum_core::{DepthMap, Error, MsfumNet, NetworkConfig, Result};

pub use config::{DataSource, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "msfum", version, about = "Guided depth super-resolution: train, evaluate and run the network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command that builds a run configuration.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// `key = value` config file; flags and --set override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice (train.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 = all cores (run.threads).
    #[arg(long)]
    threads: Option<usize>,
    /// Override any config key, e.g. --set train.lr0=0.001.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Default)]
struct NetArgs {
    /// Upsampling factor: 4, 8 or 16 (net.scale).
    #[arg(long)]
    scale: Option<usize>,
    /// Width of the first pyramid level (net.base_channels).
    #[arg(long = "base-channels")]
    base_channels: Option<usize>,
    /// Enabled components, comma list of guidance,rdcb,mamba, or none/all.
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Dataset manifest, or `synthetic` for the built-in corpus.
    #[arg(long)]
    manifest: Option<String>,
    /// LR synthesis: bicubic or nearest (train.degradation).
    #[arg(long)]
    degrade: Option<String>,
}

#[derive(Args, Debug, Default)]
struct ScheduleArgs {
    /// Training epochs (train.epochs).
    #[arg(long)]
    epochs: Option<usize>,
    /// HR training crop side (train.patch).
    #[arg(long)]
    patch: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Produce an LR depth map from an HR one.
    Degrade {
        #[command(flatten)]
        run: RunArgs,
        /// Downsampling factor: 4, 8 or 16 (net.scale).
        #[arg(long)]
        scale: Option<usize>,
        /// bicubic or nearest (train.degradation).
        #[arg(long)]
        degrade: Option<String>,
        /// HR depth image (PGM or PNG).
        #[arg(long)]
        input: PathBuf,
        /// LR depth image to write; the format follows the extension.
        #[arg(long)]
        out: PathBuf,
        /// Depth units per stored sample, recorded in the run file.
        #[arg(long = "unit-scale", default_value_t = 1.0)]
        unit_scale: f32,
    },
    /// Train a network; writes run.txt, history.txt and model.ckpt to --out.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-image and mean RMSE of a checkpoint or the bicubic baseline.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Upsampling factor; must agree with the checkpoint (net.scale).
        #[arg(long)]
        scale: Option<usize>,
        /// Checkpoint path, or `none` for the baseline.
        #[arg(long, default_value = "none")]
        ckpt: String,
        /// Baseline used without a checkpoint; only `bicubic` exists.
        #[arg(long)]
        baseline: Option<String>,
        /// Manifest split to evaluate: train, val or test.
        #[arg(long, default_value = "val")]
        split: String,
        /// Directory for run.txt and eval.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Super-resolve one LR depth map guided by its HR colour image.
    Infer {
        #[command(flatten)]
        run: RunArgs,
        /// Upsampling factor; must agree with the checkpoint (net.scale).
        #[arg(long)]
        scale: Option<usize>,
        /// Trained checkpoint, or `none` for the bicubic baseline.
        #[arg(long, default_value = "none")]
        ckpt: String,
        /// LR depth image.
        #[arg(long)]
        input: PathBuf,
        /// HR colour image.
        #[arg(long)]
        rgb: PathBuf,
        /// Output depth image; the format follows the extension.
        #[arg(long)]
        out: PathBuf,
        /// Ground truth; also writes `<out>.error.<ext>` with |pred - gt|.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Depth units per stored sample.
        #[arg(long = "unit-scale", default_value_t = 1.0)]
        unit_scale: f32,
    },
    /// Train and evaluate the five component configurations.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Directory for ablation.txt and per-configuration histories.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the selective scan at several sequence lengths.
    BenchScan {
        /// Comma list of sequence lengths L = H x W.
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192")]
        lengths: Vec<usize>,
        /// Timed runs per length (after one warm-up).
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Channels D of the scanned sequence.
        #[arg(long, default_value_t = 16)]
        channels: usize,
        /// State size N.
        #[arg(long, default_value_t = 16)]
        state: usize,
        /// Seed for the random inputs.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads, 0 = all cores (default 1 for stable timings).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the finite-difference gradient suite in checking precision.
    Gradcheck {
        /// Relative error tolerance per checked gradient.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Total and per-module parameter counts.
    ParamCount {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Write the synthetic corpus (PGM depth, PPM colour, manifest.tsv).
    MakeSynth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Corpus seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training images.
        #[arg(long, default_value_t = 200)]
        train: usize,
        /// Validation images.
        #[arg(long, default_value_t = 50)]
        val: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

/// `msfum: error[<kind>]: <message>` on a single line.
pub fn error_line(e: &Error) -> String {
    let kind = match e {
        Error::Dimension { .. } | Error::Rank { .. } => "shape",
        Error::Contract(_) => "contract",
        Error::Io { .. } => "io",
        Error::Format { .. } => "format",
        Error::Checkpoint(_) => "checkpoint",
        Error::Config(_) => "config",
        Error::Training { .. } => "training",
    };
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        if !msg.contains(&s.to_string()) {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
        }
        source = s.source();
    }
    format!("msfum: error[{kind}]: {}", msg.replace(['\n', '\r'], " "))
}

fn build_config(run: &RunArgs, net: Option<&NetArgs>, data: Option<&DataArgs>, schedule: Option<&ScheduleArgs>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &run.config {
        cfg.apply_file(p)?;
    }
    let mut flags: Vec<(&str, String)> = Vec::new();
    if let Some(s) = run.seed {
        flags.push(("train.seed", s.to_string()));
    }
    if let Some(t) = run.threads {
        flags.push(("run.threads", t.to_string()));
    }
    if let Some(n) = net {
        if let Some(s) = n.scale {
            flags.push(("net.scale", s.to_string()));
        }
        if let Some(c) = n.base_channels {
            flags.push(("net.base_channels", c.to_string()));
        }
        if let Some(a) = &n.ablation {
            flags.push(("net.ablation", a.clone()));
        }
    }
    if let Some(d) = data {
        if let Some(m) = &d.manifest {
            flags.push(("data.source", m.clone()));
        }
        if let Some(g) = &d.degrade {
            flags.push(("train.degradation", g.clone()));
        }
    }
    if let Some(s) = schedule {
        if let Some(e) = s.epochs {
            flags.push(("train.epochs", e.to_string()));
        }
        if let Some(p) = s.patch {
            flags.push(("train.patch", p.to_string()));
        }
    }
    for (k, v) in flags {
        cfg.set(k, &v)?;
    }
    for assignment in &run.set {
        cfg.apply_override(assignment)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `f` on a pool of `threads` workers (0 = one per core). Results do
/// not depend on the count.
fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn append_text(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

/// Sidecar run record for commands whose output is a single file.
fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.txt");
    out.with_file_name(name)
}

/// Train and validation sets of a run. Manifests without validation
/// entries are split by `data.train_fraction` in manifest order.
fn load_splits(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::None => Err(Error::Config("no data: pass --manifest <path> or --manifest synthetic".into())),
        DataSource::Synthetic => Ok(synth_corpus(&SynthConfig {
            seed: cfg.train.seed,
            ..SynthConfig::default()
        })),
        DataSource::Manifest(p) => {
            let m = Manifest::load(p)?;
            let train = Dataset::load(&m, Split::Train);
            if m.split(Split::Val).next().is_some() {
                Ok((train, Dataset::load(&m, Split::Val)))
            } else {
                train.split_fraction(cfg.train_fraction)
            }
        }
    }
}

fn load_network(ckpt: &str, scale: Option<usize>) -> Result<Option<(MsfumNet<f32>, NetworkConfig)>> {
    if ckpt == "none" {
        return Ok(None);
    }
    let ck = checkpoint_load(Path::new(ckpt))?;
    if let Some(s) = scale {
        if s != ck.config.scale {
            return Err(Error::Config(format!(
                "--scale {s} disagrees with the checkpoint's scale {}",
                ck.config.scale
            )));
        }
    }
    Ok(Some((MsfumNet::from_params(ck.config, &ck.params)?, ck.config)))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Degrade {
            run,
            scale,
            degrade: method,
            input,
            out,
            unit_scale,
        } => {
            let mut cfg = build_config(&run, None, None, None)?;
            if let Some(s) = scale {
                cfg.set("net.scale", &s.to_string())?;
            }
            if let Some(m) = method {
                cfg.set("train.degradation", &m)?;
            }
            let s = cfg.net.scale;
            let hr = load_depth(&input, unit_scale)?;
            let (h, w) = (hr.height / s * s, hr.width / s * s);
            let hr = crop_depth(&hr, ((hr.height - h) / 2, (hr.width - w) / 2), h, w)?;
            let lr = degrade(&hr, s, cfg.train.degradation)?;
            save_depth(&lr, &out, DepthFormat::from_path(&out))?;
            write_text(&sidecar(&out), &cfg.record("degrade"))?;
            println!("{}x{} -> {}x{} ({}), wrote {}", hr.height, hr.width, lr.height, lr.width, cfg.train.degradation, out.display());
            Ok(())
        }
        Command::Train {
            run,
            net,
            data,
            schedule,
            out,
        } => {
            let cfg = build_config(&run, Some(&net), Some(&data), Some(&schedule))?;
            create_dir(&out)?;
            write_text(&out.join("run.txt"), &cfg.record("train"))?;
            let history_path = out.join("history.txt");
            write_text(&history_path, "")?;
            let ckpt = out.join("model.ckpt");
            with_threads(cfg.threads, || -> Result<()> {
                let (train, val) = load_splits(&cfg)?;
                info!("training on {} samples, validating on {}", train.len(), val.len());
                let outcome = train_loop(&train, Some(&val), &cfg.train, cfg.net, |r, params| {
                    println!("{r}");
                    append_text(&history_path, &format!("{r}\n"))?;
                    checkpoint_save(params, &cfg.net, &ckpt)
                })?;
                if cfg.train.epochs == 0 {
                    checkpoint_save(&outcome.params, &cfg.net, &ckpt)?;
                }
                if !val.is_empty() {
                    let table = evaluate_dataset(Predictor::Network(&outcome.net), &val, cfg.net.scale, cfg.train.degradation)?;
                    write_text(&out.join("val.txt"), &table.to_string())?;
                }
                Ok(())
            })?
        }
        Command::Eval {
            run,
            data,
            scale,
            ckpt,
            baseline,
            split,
            out,
        } => {
            let mut cfg = build_config(&run, None, Some(&data), None)?;
            let split: Split = split.parse()?;
            if let Some(b) = &baseline {
                if b != "bicubic" {
                    return Err(Error::Config(format!("unknown baseline `{b}` (bicubic)")));
                }
                if ckpt != "none" {
                    return Err(Error::Config("--baseline evaluates without a model; use --ckpt none".into()));
                }
            }
            let net = load_network(&ckpt, scale)?;
            match (&net, scale) {
                (Some((_, nc)), _) => cfg.net = *nc,
                (None, Some(s)) => cfg.set("net.scale", &s.to_string())?,
                (None, None) => {}
            }
            let predictor = match &net {
                Some((n, _)) => Predictor::Network(n),
                None => Predictor::Bicubic,
            };
            let dataset = match &cfg.data {
                DataSource::Manifest(p) => Dataset::load(&Manifest::load(p)?, split),
                DataSource::Synthetic => {
                    let (train, val) = load_splits(&cfg)?;
                    if split == Split::Train {
                        train
                    } else {
                        val
                    }
                }
                DataSource::None => return Err(Error::Config("eval needs --manifest".into())),
            };
            let table = with_threads(cfg.threads, || evaluate_dataset(predictor, &dataset, cfg.net.scale, cfg.train.degradation))??;
            print!("{table}");
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_text(&dir.join("run.txt"), &cfg.record("eval"))?;
                write_text(&dir.join("eval.txt"), &table.to_string())?;
            }
            Ok(())
        }
        Command::Infer {
            run,
            scale,
            ckpt,
            input,
            rgb,
            out,
            gt,
            unit_scale,
        } => {
            let mut cfg = build_config(&run, None, None, None)?;
            let net = load_network(&ckpt, scale)?;
            match (&net, scale) {
                (Some((_, nc)), _) => cfg.net = *nc,
                (None, Some(s)) => cfg.set("net.scale", &s.to_string())?,
                (None, None) => {}
            }
            let lr = load_depth(&input, unit_scale)?;
            let guide = load_rgb(&rgb)?;
            let predictor = match &net {
                Some((n, _)) => Predictor::Network(n),
                None => Predictor::Bicubic,
            };
            let pred = super_resolve(predictor, &lr, &guide, cfg.net.scale)?;
            let format = DepthFormat::from_path(&out);
            let report = save_depth(&pred, &out, format)?;
            write_text(&sidecar(&out), &cfg.record("infer"))?;
            println!("wrote {} ({}x{}, {} clamped)", out.display(), pred.height, pred.width, report.clamped);
            if let Some(gt_path) = gt {
                // Compare what was written, so the error image is exact.
                let written = load_depth(&out, unit_scale)?;
                let truth = load_depth(&gt_path, unit_scale)?;
                let err = abs_error(&written, &truth)?;
                let max = err.values.iter().copied().fold(0.0f32, f32::max);
                let mut err_name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
                err_name.push(".error.");
                err_name.push(out.extension().unwrap_or_default());
                let err_path = out.with_file_name(err_name);
                save_depth(&err, &err_path, format)?;
                println!("max_abs_error={max} wrote {}", err_path.display());
            }
            Ok(())
        }
        Command::Ablate {
            run,
            net,
            data,
            schedule,
            out,
        } => {
            let cfg = build_config(&run, Some(&net), Some(&data), Some(&schedule))?;
            let report = with_threads(cfg.threads, || -> Result<_> {
                let (train, val) = load_splits(&cfg)?;
                ablation_run(&train, &val, cfg.net, &cfg.train, |label, r| info!("{label}: {r}"))
            })??;
            print!("{report}");
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_text(&dir.join("run.txt"), &cfg.record("ablate"))?;
                write_text(&dir.join("ablation.txt"), &report.to_string())?;
                for row in &report.rows {
                    write_text(&dir.join(format!("history_{}.txt", row.ablation)), &row.history.to_string())?;
                }
            }
            Ok(())
        }
        Command::BenchScan {
            lengths,
            repeats,
            channels,
            state,
            seed,
            threads,
        } => {
            let rows = with_threads(threads.unwrap_or(1), || bench::bench_scan(&lengths, repeats, channels, state, seed))??;
            print!("{}", bench::format_table(&rows));
            Ok(())
        }
        Command::Gradcheck { tol } => {
            let cfg = GradcheckConfig {
                tol,
                ..GradcheckConfig::default()
            };
            let results = run_suite(&cfg)?;
            let mut failed = 0;
            for r in &results {
                let verdict = if r.report.pass { "PASS" } else { "FAIL" };
                failed += usize::from(!r.report.pass);
                println!(
                    "{verdict} {:<38} max_rel_err={:.3e} checked={} retried={}",
                    r.name, r.report.max_rel_err, r.report.checked, r.report.retried
                );
            }
            if failed > 0 {
                return Err(Error::Contract(format!("{failed} of {} gradient checks failed", results.len())));
            }
            Ok(())
        }
        Command::ParamCount { run, net } => {
            let cfg = build_config(&run, Some(&net), None, None)?;
            let (_, params) = MsfumNet::<f32>::build(cfg.net, cfg.train.seed)?;
            println!("scale x{} base_channels {} ablation {}", cfg.net.scale, cfg.net.base_channels, cfg.net.ablation);
            for (module, count) in params.count_by_prefix(1) {
                println!("{module:<8} {count:>10}");
            }
            println!("{:<8} {:>10}", "total", params.param_count());
            Ok(())
        }
        Command::MakeSynth {
            out,
            seed,
            train,
            val,
            size,
        } => {
            let cfg = SynthConfig { size, train, val, seed };
            let manifest = write_synth_corpus(&out, &cfg)?;
            write_text(
                &out.join("run.txt"),
                &format!(
                    "# msfum {}\n# command = make-synth\n# seed = {seed}\nsynth.size = {size}\nsynth.train = {train}\nsynth.val = {val}\n",
                    env!("CARGO_PKG_VERSION")
                ),
            )?;
            println!("wrote {} images and {}", manifest.entries.len(), out.join("manifest.tsv").display());
            Ok(())
        }
    }
}

/// `|pred - gt|`, valid where the ground truth is.
fn abs_error(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMap> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::Contract(format!(
            "prediction {}x{} and ground truth {}x{} differ",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let values = pred
        .values
        .iter()
        .zip(&gt.values)
        .enumerate()
        .map(|(i, (&p, &g))| if gt.is_valid(i) { (p - g).abs() } else { 0.0 })
        .collect();
    Ok(DepthMap::new(gt.height, gt.width, values)?.with_unit_scale(gt.unit_scale))
}
