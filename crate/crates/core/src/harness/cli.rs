use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::config::{load_config, ExperimentConfig};
use super::run::*;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::fd::{fit_feature_stats, frechet_distance_with_jitter, read_feature_matrix, FdRecord, JITTER};
use crate::synth::{make_toy_dataset, ToyConfig};

#[derive(Debug, Parser)]
#[command(name = "cloudgan", version, about = "Cloud removal by latent-variable cycle-consistent translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `data.dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.data.dataset = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a manifest and patch store from raw patch directories.
    Ingest {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the land-cover classifier.
    TrainClassifier {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Frechet distance between two feature populations.
    EvalFd {
        /// Feature matrix files (binary dump or CSV) to compare.
        #[arg(long, requires = "features_b")]
        features_a: Option<PathBuf>,
        #[arg(long)]
        features_b: Option<PathBuf>,
        /// Classifier checkpoint: compare cloudy and clear patches of `--split`.
        #[arg(long, conflicts_with = "features_a")]
        classifier: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Write the extracted feature matrices here.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train (or resume) the translation model.
    TrainGan {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained classifier used for the per-epoch FD.
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Translate cloudy patches with a trained generator.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[arg(long)]
        max: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2.5)]
        gain: f64,
    },
    /// Export a source / translated / restored grid.
    ExportGrid {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output PNG.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2.5)]
        gain: f64,
    },
    /// Generate the synthetic cloudy/clear dataset.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2048)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        classes: usize,
    },
}

fn print_fd(r: &FdRecord) -> Result<()> {
    println!("fd = {}", r.fd);
    println!("{}", serde_json::to_string(r)?);
    Ok(())
}

fn eval_fd_files(a: &Path, b: &Path, epsilon: f64) -> Result<FdRecord> {
    let sa = fit_feature_stats(&read_feature_matrix(a)?)?;
    let sb = fit_feature_stats(&read_feature_matrix(b)?)?;
    Ok(FdRecord::new(&sa, &sb, frechet_distance_with_jitter(&sa, &sb, epsilon)?))
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { cfg } => {
            let cfg = cfg.resolve()?;
            ingest(&cfg)?;
        }
        Command::TrainClassifier { cfg, out } => {
            let cfg = cfg.resolve()?;
            let run = RunDir::open(&out, &cfg, "train-classifier")?;
            let (_, baseline) = run_train_classifier(&cfg, &run)?;
            print_fd(&baseline)?;
        }
        Command::EvalFd {
            features_a,
            features_b,
            classifier,
            split,
            dump,
            cfg,
        } => {
            let record = match (features_a, features_b, classifier) {
                (Some(a), Some(b), _) => {
                    let eps = match &cfg.config {
                        Some(_) => cfg.resolve()?.fd.epsilon,
                        None => JITTER,
                    };
                    eval_fd_files(&a, &b, eps)?
                }
                (None, None, Some(ck)) => {
                    let cfg = cfg.resolve()?;
                    let (manifest, store) = open_dataset(&cfg.data.dataset)?;
                    let clf = crate::classifier::Classifier::load(&ck)?;
                    domain_fd(&manifest, &store, &clf, split.into(), cfg.fd.epsilon, dump.as_deref())?
                }
                _ => {
                    return Err(Error::UsageError(
                        "eval-fd needs --features-a and --features-b, or --classifier".into(),
                    ))
                }
            };
            print_fd(&record)?;
        }
        Command::TrainGan {
            cfg,
            classifier,
            out,
            resume,
            allow_config_mismatch,
        } => {
            let cfg = cfg.resolve()?;
            let run = RunDir::open(&out, &cfg, "train-gan")?;
            let opts = GanRunOptions {
                resume,
                allow_config_mismatch,
            };
            if let Some(last) = run_train_gan(&cfg, &classifier, &run, opts)?.last() {
                print_fd(&last.fd)?;
            }
        }
        Command::Translate {
            checkpoint,
            dataset,
            out,
            split,
            max,
            seed,
            gain,
        } => {
            let n = run_translate(&checkpoint, &dataset, &out, split.into(), max, seed, gain)?;
            log::info!("translated {n} patches into {}", out.display());
        }
        Command::ExportGrid {
            checkpoint,
            dataset,
            out,
            split,
            rows,
            seed,
            gain,
        } => run_export_grid(&checkpoint, &dataset, &out, split.into(), rows, seed, gain)?,
        Command::MakeToy {
            out,
            seed,
            count,
            size,
            channels,
            classes,
        } => {
            let toy = make_toy_dataset(&ToyConfig {
                seed,
                count,
                size,
                channels,
                n_classes: classes,
                ..Default::default()
            })?;
            toy.write(&out)?;
            log::info!("wrote {} toy pairs to {}", count, out.display());
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
