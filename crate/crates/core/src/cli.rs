//! Command-line front end. Every subcommand writes `config.resolved` next to
//! its outputs so a run can be reproduced from that file alone.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::augment::augment_traced;
use crate::checkpoint::Checkpoint;
use crate::config::{key_listing, Config};
use crate::dataset::{ensure_dir, load_clip, load_dataset, load_partition, save_clip, save_dataset, save_partition, SplitName};
use crate::metrics::{sweep_csv, sweep_threshold, write_sweep_csv, PredictionRecord};
use crate::model::Model;
use crate::rng::stream;
use crate::synthgen::{generate, SynthConfig};
use crate::trainer::{
    evaluate, export_embeddings, make_partition, noise_probe, noise_probe_set, predict, split_clips, train,
    write_embeddings_csv, write_probe_csv, TrainOptions,
};

#[derive(Parser, Debug)]
#[command(name = "gma-unc", version, about = "Uncertainty-aware classification of infant pose sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config file; keys not given keep their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=40`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// TOML file with generator settings.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subjects_per_class: Option<usize>,
        #[arg(long)]
        clips_per_subject: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train a model; writes checkpoints/, history.csv, partition.json and a test report.
    #[command(after_help = format!("Config keys (defaults):\n{}", key_listing()))]
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Reuse a saved partition instead of splitting.
        #[arg(long, value_name = "FILE")]
        partition: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on one split.
    #[command(after_help = format!("Config keys (defaults):\n{}", key_listing()))]
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report directory (default: <run>/report).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Override inference keys such as udm.T_eval or train.mc_seed.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Predict a single clip and print its record as JSON.
    Predict {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        clip: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Threshold sweep over the records written by `eval`.
    Sweep {
        #[arg(long, value_name = "FILE")]
        records: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Aleatoric uncertainty under increasing input noise.
    Probe {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Probe one clip file.
        #[arg(long, value_name = "FILE", conflicts_with = "data")]
        clip: Option<PathBuf>,
        /// Probe a split of a dataset directory (mean over clips).
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
        levels: Vec<f64>,
        /// Noise draws per level (default: train.probe_draws).
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Export raw and fused embeddings of a split as CSV.
    ExportEmbeddings {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Write preprocessed and augmented copies of a clip for inspection.
    #[command(after_help = format!("Config keys (defaults):\n{}", key_listing()))]
    AugmentPreview {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        clip: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("--checkpoint {}", path.display()))
}

/// Checkpoint model with inference-time overrides applied to its config.
fn checkpoint_model(ck: &Checkpoint, overrides: &[String]) -> anyhow::Result<Model> {
    if overrides.is_empty() {
        return Ok(ck.to_model()?);
    }
    let cfg = Config::resolve(Some(&ck.config.to_toml()), overrides)?;
    Ok(Model::from_store(cfg, ck.topology.clone(), ck.store.clone())?)
}

/// `<run>/report` for a checkpoint stored as `<run>/checkpoints/<name>`.
fn default_report_dir(checkpoint: &Path) -> PathBuf {
    let parent = checkpoint.parent().unwrap_or(Path::new("."));
    let run = if parent.file_name().is_some_and(|n| n == "checkpoints") {
        parent.parent().unwrap_or(Path::new("."))
    } else {
        parent
    };
    run.join("report")
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            out,
            config,
            seed,
            subjects_per_class,
            clips_per_subject,
            frames,
        } => {
            let mut cfg: SynthConfig = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("--config {}", p.display()))?;
                    toml::from_str(&text).with_context(|| format!("--config {}", p.display()))?
                }
                None => SynthConfig::default(),
            };
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = subjects_per_class {
                cfg.subjects_per_class = v;
            }
            if let Some(v) = clips_per_subject {
                cfg.clips_per_subject = v;
            }
            if let Some(v) = frames {
                cfg.frames = v;
            }
            let ds = generate(&cfg)?;
            save_dataset(&ds, &out)?;
            write_text(&out.join("config.resolved"), &toml::to_string_pretty(&cfg)?)?;
            eprintln!("wrote {} clips to {}", ds.len(), out.display());
        }
        Command::Train {
            cfg,
            data,
            out,
            partition,
            quiet,
        } => {
            let config = Config::load(cfg.config.as_deref(), &cfg.overrides)
                .with_context(|| "--config/--set")?;
            let ds = load_dataset(&data).with_context(|| format!("--data {}", data.display()))?;
            let part = match &partition {
                Some(p) => load_partition(p).with_context(|| format!("--partition {}", p.display()))?,
                None => make_partition(&config, &ds)?,
            };
            ensure_dir(&out)?;
            write_text(&out.join("config.resolved"), &config.to_toml())?;
            save_partition(&part, out.join("partition.json"))?;
            let outcome = train(
                &config,
                &ds,
                &part,
                &TrainOptions {
                    out_dir: Some(out.clone()),
                    verbose: !quiet,
                },
            )?;
            let model = outcome.best.to_model()?;
            let clips = split_clips(&outcome.best, &ds, SplitName::Test)?;
            let ev = evaluate(&model, &ds, &clips, "test")?;
            let report = out.join("report");
            ensure_dir(&report)?;
            write_json(&report.join("metrics.json"), &ev.report)?;
            eprintln!(
                "best epoch {}; test acc {:?} auc {:?}",
                outcome.best.epoch, ev.report.acc, ev.report.auc_roc
            );
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            overrides,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let model = checkpoint_model(&ck, &overrides)?;
            let ds = load_dataset(&data).with_context(|| format!("--data {}", data.display()))?;
            let split_name: SplitName = split.parse()?;
            let clips = split_clips(&ck, &ds, split_name)?;
            let ev = evaluate(&model, &ds, &clips, &split)?;
            let out = out.unwrap_or_else(|| default_report_dir(&checkpoint));
            ensure_dir(&out)?;
            write_text(&out.join("config.resolved"), &model.config.to_toml())?;
            write_json(&out.join("metrics.json"), &ev.report)?;
            write_json(&out.join("records.json"), &ev.records)?;
            write_sweep_csv(&sweep_threshold(&ev.records), out.join("sweep.csv"))?;
            emit(&(serde_json::to_string_pretty(&ev.report)? + "\n"));
        }
        Command::Predict { checkpoint, clip, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            let model = ck.to_model()?;
            let seq = load_clip(&clip, 10.0).with_context(|| format!("--clip {}", clip.display()))?;
            let rec = predict(&model, &seq)?;
            let text = serde_json::to_string_pretty(&rec)?;
            match out {
                Some(p) => write_text(&p, &(text + "\n"))?,
                None => emit(&(text + "\n")),
            }
        }
        Command::Sweep { records, out } => {
            let text = fs::read_to_string(&records).with_context(|| format!("--records {}", records.display()))?;
            let recs: Vec<PredictionRecord> =
                serde_json::from_str(&text).with_context(|| format!("--records {}", records.display()))?;
            let rows = sweep_threshold(&recs);
            match out {
                Some(p) => write_sweep_csv(&rows, p)?,
                None => emit(&sweep_csv(&rows)),
            }
        }
        Command::Probe {
            checkpoint,
            clip,
            data,
            split,
            levels,
            draws,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let model = ck.to_model()?;
            let draws = draws.unwrap_or(model.config.train.probe_draws);
            let rows = match (&clip, &data) {
                (Some(c), _) => {
                    let seq = load_clip(c, 10.0).with_context(|| format!("--clip {}", c.display()))?;
                    noise_probe(&model, &seq, &levels, draws)?
                }
                (None, Some(d)) => {
                    let ds = load_dataset(d).with_context(|| format!("--data {}", d.display()))?;
                    let clips = split_clips(&ck, &ds, split.parse()?)?;
                    noise_probe_set(&model, &clips, &levels, draws)?
                }
                (None, None) => bail!("probe needs --clip or --data"),
            };
            let out = out.unwrap_or_else(|| default_report_dir(&checkpoint).join("noise_probe.csv"));
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                ensure_dir(dir)?;
                write_text(&dir.join("config.resolved"), &model.config.to_toml())?;
            }
            write_probe_csv(&rows, &out)?;
            let table: String = rows
                .iter()
                .map(|r| format!("{:.3},{:.6},{:.6}\n", r.level, r.mean_u_a, r.std_u_a))
                .collect();
            emit(&table);
        }
        Command::ExportEmbeddings {
            checkpoint,
            data,
            split,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let model = ck.to_model()?;
            let ds = load_dataset(&data).with_context(|| format!("--data {}", data.display()))?;
            let clips = split_clips(&ck, &ds, split.parse()?)?;
            let rows = export_embeddings(&model, &clips)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                ensure_dir(dir)?;
                write_text(&dir.join("config.resolved"), &model.config.to_toml())?;
            }
            write_embeddings_csv(&rows, &out)?;
            eprintln!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::AugmentPreview {
            cfg,
            clip,
            out,
            count,
            seed,
        } => {
            let config = Config::load(cfg.config.as_deref(), &cfg.overrides)
                .with_context(|| "--config/--set")?;
            let seq = load_clip(&clip, 10.0).with_context(|| format!("--clip {}", clip.display()))?;
            let topo = crate::skeleton::SkeletonTopology::coco17();
            let (pre, _) = crate::preprocess::preprocess(&seq, &topo, &config.preprocess)?;
            ensure_dir(&out)?;
            write_text(&out.join("config.resolved"), &config.to_toml())?;
            save_clip(&pre, out.join("preprocessed.json"))?;
            let mut traces = Vec::with_capacity(count);
            for k in 0..count {
                let mut rng = stream(seed, &[k as u64]);
                let (aug, trace) = augment_traced(&pre, &mut rng, &config.augment);
                save_clip(&aug, out.join(format!("augmented_{k}.json")))?;
                traces.push(trace);
            }
            write_json(&out.join("traces.json"), &traces)?;
        }
    }
    Ok(())
}

/// Parses argv and runs; errors become a single `error:` line and exit code 1.
/// Usage errors exit with 2.
pub fn main_entry() -> std::process::ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            // Keep only the message lines before the usage block, joined.
            let text = e.to_string();
            let line: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("{}", line.join(" "));
            return std::process::ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
