//! The work behind each subcommand, callable without the argument parser.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use polyseg_core::data::{generate_synthetic, ImageSample, SyntheticSpec};
use polyseg_core::generator::Generator;
use polyseg_core::losses::LossCombo;
use polyseg_core::metrics::{binarize, evaluate_with, MetricsReport, Segmenter};
use polyseg_core::training::{Checkpoint, TrainLog, Trainer};

use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_dataset, load_image, write_dataset};
use crate::output::{
    write_heatmap_png, write_mask_png, write_metrics_csv, write_probability_png, write_table, write_train_log,
};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const ABLATION_LOSS_CSV: &str = "ablation_loss.csv";
pub const ABLATION_MODULES_CSV: &str = "ablation_modules.csv";

fn synthetic_data(spec: &SyntheticSpec, input_size: usize) -> Result<Vec<ImageSample>> {
    if spec.size != input_size {
        bail!(
            "data.synthetic.size is {} but model.generator.input_size is {input_size}",
            spec.size
        );
    }
    Ok(generate_synthetic(spec)?)
}

/// The configured training set: a dataset folder, or synthetic data when
/// `data.root` is empty.
pub fn training_data(cfg: &RunConfig) -> Result<Vec<ImageSample>> {
    let size = cfg.model.generator.input_size;
    if cfg.data.root.is_empty() {
        synthetic_data(&cfg.data.synthetic, size)
    } else {
        load_dataset(Path::new(&cfg.data.root), size)
    }
}

/// The evaluation set used by sweeps: `data.test_root`, else the training
/// folder, else a synthetic set drawn with the next seed.
pub fn test_data(cfg: &RunConfig) -> Result<Vec<ImageSample>> {
    let size = cfg.model.generator.input_size;
    if !cfg.data.test_root.is_empty() {
        return load_dataset(Path::new(&cfg.data.test_root), size);
    }
    if !cfg.data.root.is_empty() {
        return load_dataset(Path::new(&cfg.data.root), size);
    }
    let spec = SyntheticSpec {
        n_samples: cfg.data.synthetic_test_samples,
        seed: cfg.data.synthetic.seed.wrapping_add(1),
        ..cfg.data.synthetic.clone()
    };
    synthetic_data(&spec, size)
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub log: TrainLog,
}

/// Trains on `data`, writing `train_log.csv`, `config.toml` and checkpoints
/// under `out`.
pub fn run_train_on(cfg: &RunConfig, data: &[ImageSample], out: &Path, verbose: bool) -> Result<TrainOutcome> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let fingerprint = RunConfig::model_fingerprint(&cfg.model);
    let ckpt_dir = out.join(&cfg.train.checkpoint_dir);
    let mut trainer = Trainer::new(cfg.model.clone(), cfg.loss.clone(), cfg.train.clone())?;
    let (every, total) = (cfg.train.checkpoint_every, cfg.train.steps);
    let report_every = (total / 20).max(1);
    let start = Instant::now();
    let mut save_err = None;
    let log = trainer.fit(data, &cfg.data.augment, |rec, t| {
        rec.wall_clock_s = start.elapsed().as_secs_f64();
        if every > 0 && rec.step % every == 0 && rec.step < total {
            let path = ckpt_dir.join(format!("step_{:06}.ckpt", rec.step));
            if let Err(e) = save_checkpoint(&t.checkpoint(fingerprint), &path) {
                save_err.get_or_insert(e);
            }
        }
        if verbose && (rec.step % report_every == 0 || rec.step == 1) {
            eprintln!(
                "step {:>6}/{total}  seg {:.4}  adv {:.4}  d {:.4}  {:.1}s",
                rec.step, rec.seg_loss, rec.adv_term, rec.d_loss, rec.wall_clock_s
            );
        }
        Ok(())
    })?;
    if let Some(e) = save_err {
        return Err(e);
    }
    let checkpoint = trainer.checkpoint(fingerprint);
    let checkpoint_path = ckpt_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&checkpoint, &checkpoint_path)?;
    let header = [
        ("loss.combo", cfg.loss.combo.to_string()),
        ("loss.lambda_adv", cfg.loss.lambda_adv.to_string()),
        ("train.seed", cfg.train.seed.to_string()),
        ("model.fingerprint", format!("{fingerprint:016x}")),
    ];
    write_train_log(&out.join(TRAIN_LOG), &header, &log.records)?;
    Ok(TrainOutcome { trainer, checkpoint, checkpoint_path, log })
}

pub fn run_train(cfg: &RunConfig, out: &Path, verbose: bool) -> Result<TrainOutcome> {
    let data = training_data(cfg)?;
    run_train_on(cfg, &data, out, verbose)
}

/// Writes `metrics.csv` and binary masks under `predictions/`.
pub fn run_eval(model: &dyn Segmenter, samples: &[ImageSample], threshold: f32, out: &Path) -> Result<MetricsReport> {
    let pred_dir = out.join("predictions");
    fs::create_dir_all(&pred_dir).with_context(|| format!("cannot create {}", pred_dir.display()))?;
    let mut io_err = None;
    let (mean, rows) = evaluate_with(model, samples, threshold, |s, probs| {
        if let Err(e) = write_mask_png(&pred_dir.join(format!("{}.png", s.id)), &binarize(probs, threshold)) {
            io_err.get_or_insert(e);
        }
        Ok(())
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    write_metrics_csv(&out.join(METRICS_CSV), &rows, &mean)?;
    Ok(mean)
}

/// Writes `<stem>_prob.png`, `<stem>_mask.png` and optionally
/// `<stem>_heatmap.png`; returns the paths written.
pub fn run_predict(
    generator: &Generator,
    image_path: &Path,
    threshold: f32,
    heatmap: bool,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let image = load_image(image_path, generator.config().input_size)?;
    let stem = image_path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let probs = generator.predict(&image)?;
    let mut written = vec![out.join(format!("{stem}_prob.png")), out.join(format!("{stem}_mask.png"))];
    write_probability_png(&written[0], &probs)?;
    write_mask_png(&written[1], &binarize(&probs, threshold))?;
    if heatmap {
        let path = out.join(format!("{stem}_heatmap.png"));
        write_heatmap_png(&path, &generator.bottleneck_heatmap(&image)?)?;
        written.push(path);
    }
    Ok(written)
}

pub fn run_synth(spec: &SyntheticSpec, out: &Path) -> Result<usize> {
    let samples = generate_synthetic(spec)?;
    write_dataset(out, &samples)?;
    Ok(samples.len())
}

/// Architecture switches of the module ablation, with the baseline first.
pub const MODULE_VARIANTS: [(&str, bool, bool, bool); 5] = [
    // (name, use_rese, use_se, use_convcrf)
    ("baseline", true, true, true),
    ("w/o ReSE", false, true, true),
    ("w/o ConvCRF", true, true, false),
    ("ReSE w/o SE", true, false, true),
    ("w/o both", false, true, false),
];

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub name: String,
    pub g_params: Option<usize>,
    pub d_params: Option<usize>,
    pub final_seg_loss: Option<f64>,
    pub metrics: Result<MetricsReport, String>,
}

impl SweepRow {
    fn cells(&self, with_params: bool) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let mut row = vec![self.name.clone()];
        if with_params {
            row.push(opt(self.g_params.map(|v| v.to_string())));
            row.push(opt(self.d_params.map(|v| v.to_string())));
            row.push(opt(self.g_params.zip(self.d_params).map(|(g, d)| (g + d).to_string())));
        }
        row.push(opt(self.final_seg_loss.map(|v| format!("{v:.6}"))));
        match &self.metrics {
            Ok(m) => {
                row.extend(m.values().iter().map(|v| format!("{v:.6}")));
                row.push("ok".into());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), MetricsReport::COLUMNS.len()));
                row.push(format!("failed: {e}"));
            }
        }
        row
    }
}

#[derive(Clone, Debug, Default)]
pub struct AblationReport {
    pub loss_rows: Vec<SweepRow>,
    pub module_rows: Vec<SweepRow>,
}

impl AblationReport {
    pub fn failures(&self) -> usize {
        self.loss_rows.iter().chain(&self.module_rows).filter(|r| r.metrics.is_err()).count()
    }
}

fn sub_run(name: &str, cfg: &RunConfig, train: &[ImageSample], test: &[ImageSample], dir: &Path, verbose: bool) -> SweepRow {
    let mut row = SweepRow { name: name.to_string(), g_params: None, d_params: None, final_seg_loss: None, metrics: Err(String::new()) };
    let result = (|| -> Result<MetricsReport> {
        cfg.validate()?;
        let outcome = run_train_on(cfg, train, dir, verbose)?;
        row.g_params = Some(outcome.trainer.generator.num_parameters());
        row.d_params = Some(outcome.trainer.discriminator.num_parameters());
        row.final_seg_loss = outcome.log.records.last().map(|r| r.seg_loss);
        run_eval(&outcome.trainer.generator, test, cfg.data.threshold, dir)
    })();
    row.metrics = result.map_err(|e| format!("{e:#}"));
    row
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

/// Trains and evaluates every loss combination on the base model, then every
/// module variant with the base loss. Failed sub-runs are recorded and the
/// sweep carries on.
pub fn run_ablate(base: &RunConfig, out: &Path, verbose: bool) -> Result<AblationReport> {
    let train = training_data(base)?;
    let test = test_data(base)?;
    let mut report = AblationReport::default();
    for combo in LossCombo::ALL {
        let mut cfg = base.clone();
        cfg.loss.combo = combo;
        if verbose {
            eprintln!("ablate: loss {combo}");
        }
        let row = sub_run(combo.name(), &cfg, &train, &test, &out.join("loss").join(combo.name()), verbose);
        report.loss_rows.push(row);
    }
    for (name, rese, se, crf) in MODULE_VARIANTS {
        let mut cfg = base.clone();
        let g = &mut cfg.model.generator;
        (g.use_rese, g.use_se) = (rese && base.model.generator.use_rese, se && base.model.generator.use_se);
        cfg.model.discriminator.use_convcrf = crf && base.model.discriminator.use_convcrf;
        if name != "baseline" {
            cfg.model.generator.parameter_budget.clear();
        }
        if verbose {
            eprintln!("ablate: module variant {name}");
        }
        let row = sub_run(name, &cfg, &train, &test, &out.join("modules").join(slug(name)), verbose);
        report.module_rows.push(row);
    }
    let metric_cols = MetricsReport::COLUMNS;
    let mut header = vec!["loss", "final_seg_loss"];
    header.extend(metric_cols);
    header.push("status");
    let rows: Vec<_> = report.loss_rows.iter().map(|r| r.cells(false)).collect();
    write_table(&out.join(ABLATION_LOSS_CSV), &header, &rows)?;
    let mut header = vec!["variant", "g_params", "d_params", "total_params", "final_seg_loss"];
    header.extend(metric_cols);
    header.push("status");
    let rows: Vec<_> = report.module_rows.iter().map(|r| r.cells(true)).collect();
    write_table(&out.join(ABLATION_MODULES_CSV), &header, &rows)?;
    Ok(report)
}
