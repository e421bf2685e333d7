use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use polyseg::checkpoint::{fingerprint_warning, load_checkpoint};
use polyseg::commands::{self, ABLATION_LOSS_CSV, ABLATION_MODULES_CSV};
use polyseg::dataset::load_dataset;
use polyseg::RunConfig;

/// Lightweight adversarial polyp segmentation.
#[derive(Parser, Debug)]
#[command(name = "polyseg", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config with `model`, `loss`, `train` and `data` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `loss.combo=bdice`; repeatable, wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for training, augmentation and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the generator and discriminator.
    Train,
    /// Score a checkpoint on a dataset folder.
    Eval { checkpoint: PathBuf, data_root: PathBuf },
    /// Segment one image.
    Predict {
        checkpoint: PathBuf,
        image: PathBuf,
        /// Also write the bottleneck activation heatmap.
        #[arg(long)]
        heatmap: bool,
    },
    /// Sweep all loss combinations and module variants.
    Ablate,
    /// Write a synthetic dataset in the images/ + masks/ layout.
    Synth,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(c.config.as_deref(), &c.overrides).map_err(|e| Failure::Usage(e.into()))?;
    if let Some(seed) = c.seed {
        cfg.reseed(seed);
    }
    Ok(cfg)
}

fn load_generator(path: &Path, cfg: &RunConfig, c: &Common) -> Result<polyseg_core::generator::Generator> {
    let ckpt = load_checkpoint(path)?;
    let expected = (c.config.is_some() || !c.overrides.is_empty()).then(|| RunConfig::model_fingerprint(&cfg.model));
    if let Some(w) = fingerprint_warning(&ckpt, expected) {
        eprintln!("warning: {w}");
    }
    Ok(ckpt.generator()?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out;
    match cli.command {
        Command::Train => {
            let o = commands::run_train(&cfg, out, true)?;
            println!("trained {} steps; checkpoint {}", o.checkpoint.step, o.checkpoint_path.display());
        }
        Command::Eval { checkpoint, data_root } => {
            let g = load_generator(&checkpoint, &cfg, &cli.common)?;
            let samples = load_dataset(&data_root, g.config().input_size)?;
            let m = commands::run_eval(&g, &samples, cfg.data.threshold, out)?;
            println!(
                "{} images  dice {:.4}  iou {:.4}  recall {:.4}  precision {:.4}  accuracy {:.4}  f2 {:.4}",
                m.n_images, m.dice, m.iou, m.recall, m.precision, m.accuracy, m.f2
            );
        }
        Command::Predict { checkpoint, image, heatmap } => {
            let g = load_generator(&checkpoint, &cfg, &cli.common)?;
            for p in commands::run_predict(&g, &image, cfg.data.threshold, heatmap, out)? {
                println!("{}", p.display());
            }
        }
        Command::Ablate => {
            let report = commands::run_ablate(&cfg, out, true)?;
            println!("{}", out.join(ABLATION_LOSS_CSV).display());
            println!("{}", out.join(ABLATION_MODULES_CSV).display());
            let failed = report.failures();
            if failed > 0 {
                for row in report.loss_rows.iter().chain(&report.module_rows) {
                    if let Err(e) = &row.metrics {
                        eprintln!("sub-run {} failed: {e}", row.name);
                    }
                }
                return Err(Failure::Runtime(anyhow::anyhow!("{failed} of 14 sub-runs failed")));
            }
        }
        Command::Synth => {
            let n = commands::run_synth(&cfg.data.synthetic, out)?;
            println!("wrote {n} samples to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
