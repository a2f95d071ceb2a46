//! The two architectures, their classification heads and the eight
//! experiment configurations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv2d, Dense, Layer, MaxPool2d};
use crate::model::{Model, Slot};
use crate::seed::derive_seed;
use crate::tensor::{axis_geometry, Padding, Tensor};
use crate::train::checkpoint::Checkpoint;

pub const INPUT_SIZE: usize = 99;
pub const INPUT_CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 6;
pub const HIDDEN_UNITS: usize = 512;
pub const DROPOUT_RATE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Resnet50,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Global average pooling.
    Gap,
    /// 2×2 max pooling followed by flatten.
    Mp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: u8,
    pub architecture: Architecture,
    pub pooling: Pooling,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Only residual models have a fine-tuning phase.
    pub fine_tune_learning_rate: Option<f64>,
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
}

/// The eight experiment rows, by id.
pub fn registry_lookup(id: u8) -> Result<ModelConfig> {
    use Architecture::*;
    use OptimizerKind::*;
    use Pooling::*;
    let (architecture, pooling, optimizer, learning_rate, fine_tune_learning_rate) = match id {
        1 => (Resnet50, Gap, Adam, 1e-4, Some(1e-5)),
        2 => (Resnet50, Mp, Adam, 1e-4, Some(1e-5)),
        3 => (Resnet50, Gap, SgdMomentum, 0.01, Some(0.001)),
        4 => (Resnet50, Mp, SgdMomentum, 0.01, Some(0.001)),
        5 => (Custom, Gap, Adam, 1e-5, None),
        6 => (Custom, Mp, Adam, 1e-5, None),
        7 => (Custom, Gap, SgdMomentum, 0.001, None),
        8 => (Custom, Mp, SgdMomentum, 0.001, None),
        _ => return Err(Error::Config(format!("model id must be 1..=8, got {id}"))),
    };
    Ok(ModelConfig {
        id,
        architecture,
        pooling,
        optimizer,
        learning_rate,
        fine_tune_learning_rate,
        pretrained: None,
    })
}

/// Build the model a configuration describes, loading backbone weights when
/// a pretrained checkpoint path is set.
pub fn build(config: &ModelConfig, seed: u64) -> Result<Model> {
    match config.architecture {
        Architecture::Custom => build_custom_cnn(config.pooling, seed),
        Architecture::Resnet50 => match &config.pretrained {
            Some(path) => {
                let ckpt = Checkpoint::read(path)?;
                build_resnet50(config.pooling, Some(&ckpt), seed)
            }
            None => build_resnet50(config.pooling, None, seed),
        },
    }
}

struct Builder {
    model: Model,
    seed: u64,
    height: usize,
    channels: usize,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder {
            model: Model::new(&[INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS]),
            seed,
            height: INPUT_SIZE,
            channels: INPUT_CHANNELS,
        }
    }

    fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init", self.model.len() as u64)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        input: Slot,
        in_ch: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        backbone: bool,
    ) -> Result<Slot> {
        let conv = Conv2d::new(in_ch, filters, (kernel, kernel), stride, padding, self.init_seed())?;
        self.model.push(Layer::conv2d(name, conv), &[input], backbone)
    }

    fn bn(&mut self, name: &str, channels: usize, backbone: bool) -> Result<Slot> {
        self.model
            .chain(Layer::batchnorm(name, BatchNorm::new(channels)?), backbone)
    }

    fn relu(&mut self, name: &str, backbone: bool) -> Result<Slot> {
        self.model.chain(Layer::relu(name), backbone)
    }

    fn maxpool(&mut self, name: &str, pool: usize, stride: usize, padding: Padding, backbone: bool) -> Result<Slot> {
        self.height = axis_geometry(self.height, pool, stride, padding)?.0;
        self.model
            .chain(Layer::maxpool2d(name, MaxPool2d::new(pool, stride, padding)), backbone)
    }

    /// Pooling, dense 512, relu, dropout, dense 6, softmax.
    fn head(mut self, pooling: Pooling) -> Result<Model> {
        let features = match pooling {
            Pooling::Gap => {
                self.model.chain(Layer::globalavgpool("head_gap"), false)?;
                self.channels
            }
            Pooling::Mp => {
                self.maxpool("head_maxpool", 2, 2, Padding::ValidFloor, false)?;
                self.model.chain(Layer::flatten("head_flatten"), false)?;
                self.height * self.height * self.channels
            }
        };
        let hidden = Dense::new(features, HIDDEN_UNITS, self.init_seed())?;
        self.model.chain(Layer::dense("dense_hidden", hidden), false)?;
        self.relu("dense_hidden_relu", false)?;
        self.model.chain(Layer::dropout("dropout", DROPOUT_RATE)?, false)?;
        let out = Dense::new(HIDDEN_UNITS, NUM_CLASSES, self.init_seed())?;
        self.model.chain(Layer::dense("dense_out", out), false)?;
        self.model.chain(Layer::softmax("softmax"), false)?;
        Ok(self.model)
    }
}

/// Four conv/batchnorm/relu/maxpool blocks (32, 64, 128, 256 filters) and
/// the shared head. Everything is trainable.
pub fn build_custom_cnn(pooling: Pooling, seed: u64) -> Result<Model> {
    let mut b = Builder::new(seed);
    for (i, filters) in [32, 64, 128, 256].into_iter().enumerate() {
        let prev = b.model.len();
        let p = format!("block{}", i + 1);
        b.conv(
            &format!("{p}_conv"),
            prev,
            b.channels,
            filters,
            3,
            1,
            Padding::SamePreserving,
            false,
        )?;
        b.channels = filters;
        b.bn(&format!("{p}_bn"), filters, false)?;
        b.relu(&format!("{p}_relu"), false)?;
        b.maxpool(&format!("{p}_pool"), 2, 2, Padding::ValidFloor, false)?;
    }
    b.head(pooling)
}

fn bottleneck(b: &mut Builder, prefix: &str, width: usize, stride: usize, project: bool) -> Result<()> {
    let input = b.model.len();
    let in_ch = b.channels;
    let out_ch = width * 4;
    let shortcut = if project {
        b.conv(
            &format!("{prefix}_0_conv"),
            input,
            in_ch,
            out_ch,
            1,
            stride,
            Padding::SameCeil,
            true,
        )?;
        b.bn(&format!("{prefix}_0_bn"), out_ch, true)?
    } else {
        input
    };
    b.conv(
        &format!("{prefix}_1_conv"),
        input,
        in_ch,
        width,
        1,
        stride,
        Padding::SameCeil,
        true,
    )?;
    b.height = axis_geometry(b.height, 1, stride, Padding::SameCeil)?.0;
    b.bn(&format!("{prefix}_1_bn"), width, true)?;
    let r = b.relu(&format!("{prefix}_1_relu"), true)?;
    b.conv(
        &format!("{prefix}_2_conv"),
        r,
        width,
        width,
        3,
        1,
        Padding::SamePreserving,
        true,
    )?;
    b.bn(&format!("{prefix}_2_bn"), width, true)?;
    let r = b.relu(&format!("{prefix}_2_relu"), true)?;
    b.conv(
        &format!("{prefix}_3_conv"),
        r,
        width,
        out_ch,
        1,
        1,
        Padding::SameCeil,
        true,
    )?;
    let main = b.bn(&format!("{prefix}_3_bn"), out_ch, true)?;
    // Zero scale: every block starts as its shortcut, so an untrained,
    // frozen backbone keeps bounded activations.
    for (name, p) in b.model.layer_mut(main - 1).params_mut() {
        if name == "gamma" {
            p.value = Tensor::zeros(&[out_ch])?;
        }
    }
    b.model
        .push(Layer::add(format!("{prefix}_add")), &[main, shortcut], true)?;
    b.relu(&format!("{prefix}_out"), true)?;
    b.channels = out_ch;
    Ok(())
}

/// 50-layer bottleneck residual network with the shared head. The backbone
/// starts frozen; `weights` overrides every backbone tensor by name.
pub fn build_resnet50(pooling: Pooling, weights: Option<&Checkpoint>, seed: u64) -> Result<Model> {
    let mut b = Builder::new(seed);
    b.conv("conv1_conv", 0, INPUT_CHANNELS, 64, 7, 2, Padding::SameCeil, true)?;
    b.height = axis_geometry(b.height, 7, 2, Padding::SameCeil)?.0;
    b.channels = 64;
    b.bn("conv1_bn", 64, true)?;
    b.relu("conv1_relu", true)?;
    b.maxpool("pool1_pool", 3, 2, Padding::SameCeil, true)?;
    for (stage, (width, blocks, stride)) in [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)]
        .into_iter()
        .enumerate()
    {
        for block in 0..blocks {
            let prefix = format!("conv{}_block{}", stage + 2, block + 1);
            let s = if block == 0 { stride } else { 1 };
            bottleneck(&mut b, &prefix, width, s, block == 0)?;
        }
    }
    let mut model = b.head(pooling)?;
    if let Some(ckpt) = weights {
        load_backbone(&mut model, ckpt)?;
    }
    model.set_backbone_trainable(false);
    Ok(model)
}

fn load_backbone(model: &mut Model, ckpt: &Checkpoint) -> Result<()> {
    let backbone: Vec<String> = model
        .backbone_indices()
        .into_iter()
        .map(|i| format!("{}/", model.layer(i).name()))
        .collect();
    model.visit_tensors_mut(|name, tensor| {
        if !backbone.iter().any(|p| name.starts_with(p.as_str())) {
            return Ok(());
        }
        let src = ckpt
            .tensor(name)
            .ok_or_else(|| Error::Load(format!("checkpoint has no tensor {name}")))?;
        if src.shape() != tensor.shape() {
            return Err(Error::Load(format!(
                "tensor {name} has shape {:?} in the checkpoint, model expects {:?}",
                src.shape(),
                tensor.shape()
            )));
        }
        *tensor = src.clone();
        Ok(())
    })
}
