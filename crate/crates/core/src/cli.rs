//! Command-line front end: `prepare`, `inspect`, `train`, `evaluate`, `infer`.
//!
//! Exit codes: 0 on success, 1 when some inputs were skipped (undecodable
//! images during `infer`), 2 for invalid configuration, unreadable inputs or
//! any other error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{prepare, read_image, read_manifest, resize_bilinear, DemographicClass, PrepareConfig, Split};
use crate::error::{Error, Result};
use crate::metrics::{argmax, build_report};
use crate::train::{predict, train, Checkpoint, Control, Dataset};
use crate::zoo::{self, INPUT_SIZE};

#[derive(Parser, Debug)]
#[command(name = "pedcnn", version, about = "Pedestrian age/gender CNN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Crop annotated pedestrians, split, balance and write the manifest.
    Prepare(PrepareArgs),
    /// Print the parameter ledger of a registry model or a checkpoint.
    Inspect {
        /// Registry id (1-8) or checkpoint path.
        target: String,
    },
    /// Train a registry model on a prepared work directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split and write the metrics report.
    Evaluate(EvaluateArgs),
    /// Classify individual image files.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Training samples per class after balancing.
    #[arg(long)]
    target: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<u8>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    fine_tune_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// `val_loss` or `val_accuracy`.
    #[arg(long)]
    monitor: Option<String>,
    /// Checkpoint holding backbone weights.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Output directory; defaults to `<workdir>/model<id>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding `manifest.tsv`.
    #[arg(long, default_value = "work")]
    workdir: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Report directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Inspect { target } => cmd_inspect(&target),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Infer { checkpoint, images } => cmd_infer(&checkpoint, &images),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn push<V: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<V>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

fn common_overrides(c: &Common) -> Vec<(&'static str, String)> {
    let mut o = Vec::new();
    push(&mut o, "workdir", &c.workdir.as_ref().map(|p| p.display()));
    push(&mut o, "seed", &c.seed);
    o
}

fn cmd_prepare(a: PrepareArgs) -> Result<i32> {
    let mut o = common_overrides(&a.common);
    push(&mut o, "annotations", &a.annotations.as_ref().map(|p| p.display()));
    push(&mut o, "frames", &a.frames.as_ref().map(|p| p.display()));
    push(&mut o, "target", &a.target);
    let cfg = RunConfig::resolve(a.common.config.as_deref(), &o)?;
    log::info!("resolved settings:\n{}", cfg.render());
    let (Some(annotations), Some(frames)) = (cfg.annotations.clone(), cfg.frames.clone()) else {
        return Err(Error::Config("prepare needs both annotations and frames".into()));
    };
    let pc = PrepareConfig {
        annotations,
        frames,
        workdir: cfg.workdir.clone(),
        seed: cfg.seed,
        target: cfg.target,
        ratios: cfg.ratios,
        ranges: cfg.ranges,
    };
    let report = prepare(&pc)?;
    write_text(&cfg.workdir.join("prepare.conf"), &cfg.render())?;
    print!("{}", report.manifest.count_table());
    if report.skipped_missing_bbox + report.skipped_degenerate > 0 {
        println!(
            "skipped: {} without a box, {} empty after clamping",
            report.skipped_missing_bbox, report.skipped_degenerate
        );
    }
    println!("manifest: {}", pc.manifest_path().display());
    Ok(0)
}

fn cmd_inspect(target: &str) -> Result<i32> {
    let (model, label) = match target.parse::<u8>() {
        Ok(id) => {
            let cfg = zoo::registry_lookup(id)?;
            (zoo::build(&cfg, 0)?, format!("model {id}"))
        }
        Err(_) => {
            let ck = Checkpoint::read(target)?;
            let (model, _) = ck.restore()?;
            (model, format!("model {} from {target}", ck.meta.config.id))
        }
    };
    println!("{label}");
    print!("{}", model.summary());
    Ok(0)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut o = common_overrides(&a.common);
    push(&mut o, "model", &a.model);
    push(&mut o, "epochs", &a.epochs);
    push(&mut o, "fine_tune_epochs", &a.fine_tune_epochs);
    push(&mut o, "batch_size", &a.batch_size);
    push(&mut o, "patience", &a.patience);
    push(&mut o, "monitor", &a.monitor);
    push(&mut o, "pretrained", &a.pretrained.as_ref().map(|p| p.display()));
    let cfg = RunConfig::resolve(a.common.config.as_deref(), &o)?;
    let tc = cfg.train_config()?;
    tc.validate()?;
    log::info!("resolved settings:\n{}", cfg.render());

    let manifest = read_manifest(cfg.workdir.join("manifest.tsv"))?;
    let train_set = Dataset::from_manifest(&manifest, Split::Train, &cfg.workdir)?;
    let val_set = Dataset::from_manifest(&manifest, Split::Val, &cfg.workdir)?;
    let out = a.out.unwrap_or_else(|| cfg.workdir.join(format!("model{}", cfg.model)));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(&out.join("run.conf"), &cfg.render())?;

    let mut model = zoo::build(&tc.model, tc.seed)?;
    let outcome = train(&mut model, &tc, &train_set, &val_set, |_| Control::Continue)?;
    outcome.checkpoint.write(out.join("checkpoint.pdcn"))?;
    outcome.history.write_jsonl(out.join("history.jsonl"))?;
    write_text(
        &out.join("phases.json"),
        &serde_json::to_string_pretty(&outcome.history.phases)?,
    )?;

    if let Some(last) = outcome.history.last() {
        println!(
            "epochs: {} | train acc {:.4} | val loss {:.4} acc {:.4}",
            last.epoch, last.train_accuracy, last.val_loss, last.val_accuracy
        );
    }
    for p in &outcome.history.phases {
        println!(
            "phase {}: best epoch {} ({:?})",
            p.phase.number(),
            p.best_epoch,
            p.stop_reason
        );
    }
    println!("checkpoint: {}", out.join("checkpoint.pdcn").display());
    Ok(0)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<i32> {
    let split = Split::parse(&a.split).ok_or_else(|| Error::Config(format!("unknown split {:?}", a.split)))?;
    let ck = Checkpoint::read(&a.checkpoint)?;
    let (mut model, _) = ck.restore()?;
    let manifest = read_manifest(a.workdir.join("manifest.tsv"))?;
    let data = Dataset::from_manifest(&manifest, split, &a.workdir)?;
    if data.is_empty() {
        return Err(Error::Data(format!("split {} is empty", split.as_str())));
    }
    let probs = predict(&mut model, &data, 8)?;
    let scores: Vec<Vec<f64>> = probs.iter().map(|p| p.iter().map(|&v| v as f64).collect()).collect();
    let report = build_report(ck.meta.config.id, &scores, data.labels())?;
    let out = a
        .out
        .unwrap_or_else(|| a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = format!("report_{}", split.as_str());
    report.write(&out, &stem)?;
    println!("accuracy: {:.4}", report.accuracy);
    println!("macro PR-AUC: {:.4}", report.pr_auc_macro);
    println!("report: {}", out.join(format!("{stem}.json")).display());
    Ok(0)
}

/// Load a PPM or PNG of any size as a 99x99 input scaled to `[0, 1]`.
fn load_input(path: &Path) -> Result<crate::Tensor> {
    let img = read_image(path)?;
    let img = if img.shape()[..2] == [INPUT_SIZE, INPUT_SIZE] {
        img
    } else {
        resize_bilinear(&img, INPUT_SIZE, INPUT_SIZE)?
    };
    Ok(img.map(|v| v / 255.0))
}

fn cmd_infer(checkpoint: &Path, images: &[PathBuf]) -> Result<i32> {
    let ck = Checkpoint::read(checkpoint)?;
    let (mut model, _) = ck.restore()?;
    let mut failed = 0;
    for path in images {
        let img = match load_input(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("skipping {}: {e}", path.display());
                failed += 1;
                continue;
            }
        };
        let data = Dataset::new(vec![img], vec![0])?;
        let p = predict(&mut model, &data, 1)?[0];
        let class = DemographicClass::from_index(argmax(&p))?;
        let probs: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        println!("{}\t{}\t{}", path.display(), class, probs.join("\t"));
    }
    Ok(if failed > 0 { 1 } else { 0 })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
