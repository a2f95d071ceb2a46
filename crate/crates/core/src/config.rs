//! Run settings from a `key = value` file plus flag overrides.
//!
//! Later sources win: built-in defaults, then the file, then flags. Blank
//! lines and `#` comments are ignored. Recognised keys are the field names
//! of [`RunConfig`] plus the augmentation range names.
//!
//! Every randomized stage derives its own sub-seed from `seed` with
//! [`crate::seed::derive_seed`], using the tags `init` (per layer), `split`
//! and `balance` (per class), `shuffle` (per epoch), `dropout` (per step)
//! and `synthetic` (per generated sample).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{AugmentRanges, SplitRatios};
use crate::error::{Error, Result};
use crate::train::{Monitor, TrainConfig};
use crate::zoo::registry_lookup;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub annotations: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub workdir: PathBuf,
    pub model: u8,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub fine_tune_epochs: usize,
    pub patience: usize,
    pub monitor: Monitor,
    pub target: usize,
    pub pretrained: Option<PathBuf>,
    pub ratios: SplitRatios,
    pub ranges: AugmentRanges,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            annotations: None,
            frames: None,
            workdir: PathBuf::from("work"),
            model: 8,
            seed: 0,
            batch_size: 8,
            epochs: 70,
            fine_tune_epochs: 30,
            patience: 10,
            monitor: Monitor::ValLoss,
            target: 5000,
            pretrained: None,
            ratios: SplitRatios::default(),
            ranges: AugmentRanges::default(),
        }
    }
}

/// `key = value` pairs with their line numbers.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            detail: format!("expected `key = value`, got {line:?}"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "annotations" => self.annotations = path(),
            "frames" => self.frames = path(),
            "workdir" => self.workdir = PathBuf::from(value),
            "pretrained" => self.pretrained = path(),
            "model" => {
                let id = num(key, value)?;
                registry_lookup(id)?;
                self.model = id;
            }
            "seed" => self.seed = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "fine_tune_epochs" => self.fine_tune_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "target" => self.target = num(key, value)?,
            "monitor" => {
                self.monitor = match value {
                    "val_loss" => Monitor::ValLoss,
                    "val_accuracy" => Monitor::ValAccuracy,
                    _ => {
                        return Err(Error::Config(format!(
                            "monitor must be val_loss or val_accuracy, got {value:?}"
                        )))
                    }
                }
            }
            "train_ratio" => self.ratios.train = num(key, value)?,
            "val_ratio" => self.ratios.val = num(key, value)?,
            "test_ratio" => self.ratios.test = num(key, value)?,
            "flip_probability" => self.ranges.flip_probability = num(key, value)?,
            "rotation_deg" => self.ranges.rotation_deg = num(key, value)?,
            "shift" => self.ranges.shift = num(key, value)?,
            "shear_deg" => self.ranges.shear_deg = num(key, value)?,
            "zoom_min" => self.ranges.zoom_min = num(key, value)?,
            "zoom_max" => self.ranges.zoom_max = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(&str, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (line, k, v) in parse_pairs(&text)? {
                cfg.set(&k, &v).map_err(|e| Error::Parse {
                    line,
                    detail: e.to_string(),
                })?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.ratios.validate()?;
        cfg.ranges.validate()?;
        Ok(cfg)
    }

    /// Every setting as `key = value`, in a fixed order; parseable by
    /// [`RunConfig::resolve`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(v) = opt(&self.annotations) {
            line("annotations", v);
        }
        if let Some(v) = opt(&self.frames) {
            line("frames", v);
        }
        line("workdir", self.workdir.display().to_string());
        if let Some(v) = opt(&self.pretrained) {
            line("pretrained", v);
        }
        line("model", self.model.to_string());
        line("seed", self.seed.to_string());
        line("batch_size", self.batch_size.to_string());
        line("epochs", self.epochs.to_string());
        line("fine_tune_epochs", self.fine_tune_epochs.to_string());
        line("patience", self.patience.to_string());
        line(
            "monitor",
            match self.monitor {
                Monitor::ValLoss => "val_loss",
                Monitor::ValAccuracy => "val_accuracy",
            }
            .into(),
        );
        line("target", self.target.to_string());
        line("train_ratio", self.ratios.train.to_string());
        line("val_ratio", self.ratios.val.to_string());
        line("test_ratio", self.ratios.test.to_string());
        line("flip_probability", self.ranges.flip_probability.to_string());
        line("rotation_deg", self.ranges.rotation_deg.to_string());
        line("shift", self.ranges.shift.to_string());
        line("shear_deg", self.ranges.shear_deg.to_string());
        line("zoom_min", self.ranges.zoom_min.to_string());
        line("zoom_max", self.ranges.zoom_max.to_string());
        out
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut model = registry_lookup(self.model)?;
        model.pretrained = self.pretrained.clone();
        Ok(TrainConfig {
            model,
            seed: self.seed,
            batch_size: self.batch_size,
            epochs: self.epochs,
            fine_tune_epochs: self.fine_tune_epochs,
            patience: self.patience,
            monitor: self.monitor,
        })
    }
}
