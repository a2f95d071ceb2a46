//! Layer vocabulary: convolution, batch normalization, ReLU, max pooling,
//! global average pooling, flatten, dense, dropout, softmax and the residual
//! add used by the ResNet backbone.
//!
//! Every layer runs forward and backward over [`Tensor`]s, keeps whatever it
//! needs for backward in an internal cache, and accumulates parameter
//! gradients into its own [`Param`] buffers. A frozen layer still propagates
//! input gradients but leaves its parameter gradients untouched.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod pool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use activation::{softmax_rows, Add, Dropout, Flatten, Relu, Softmax};
pub use batchnorm::BatchNorm;
pub use conv::Conv2d;
pub use dense::Dense;
pub use pool::{GlobalAvgPool, MaxPool2d};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    Relu,
    MaxPool2d,
    GlobalAvgPool,
    Flatten,
    Dense,
    Dropout,
    Softmax,
    Add,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::GlobalAvgPool => "globalavgpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
            LayerKind::Dropout => "dropout",
            LayerKind::Softmax => "softmax",
            LayerKind::Add => "add",
        }
    }
}

/// A learnable tensor and its lazily allocated gradient buffer.
#[derive(Clone, Debug)]
pub struct Param<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Param { value, grad: None }
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Tensor<T> {
        let shape = self.value.shape().to_vec();
        self.grad
            .get_or_insert_with(|| Tensor::zeros(&shape).expect("param shape is valid"))
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.data_mut().fill(T::zero());
        }
    }

    fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.as_ref().map(Tensor::cast),
        }
    }
}

#[derive(Clone, Debug)]
enum Op<T: Scalar> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu),
    MaxPool2d(MaxPool2d),
    GlobalAvgPool(GlobalAvgPool),
    Flatten(Flatten),
    Dense(Dense<T>),
    Dropout(Dropout),
    Softmax(Softmax<T>),
    Add(Add),
}

/// A named layer with a trainable flag.
#[derive(Clone, Debug)]
pub struct Layer<T: Scalar = f32> {
    name: String,
    trainable: bool,
    op: Op<T>,
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            Op::Conv2d($l) => $body,
            Op::BatchNorm($l) => $body,
            Op::Relu($l) => $body,
            Op::MaxPool2d($l) => $body,
            Op::GlobalAvgPool($l) => $body,
            Op::Flatten($l) => $body,
            Op::Dense($l) => $body,
            Op::Dropout($l) => $body,
            Op::Softmax($l) => $body,
            Op::Add($l) => $body,
        }
    };
}

macro_rules! from_generic {
    ($($variant:ident),*) => {$(
        impl<T: Scalar> From<$variant<T>> for Op<T> {
            fn from(l: $variant<T>) -> Self {
                Op::$variant(l)
            }
        }
    )*};
}
from_generic!(Conv2d, BatchNorm, Dense, Softmax);

macro_rules! from_plain {
    ($($variant:ident),*) => {$(
        impl<T: Scalar> From<$variant> for Op<T> {
            fn from(l: $variant) -> Self {
                Op::$variant(l)
            }
        }
    )*};
}
from_plain!(Relu, MaxPool2d, GlobalAvgPool, Flatten, Dropout, Add);

/// Behaviour shared by every layer implementation.
pub(crate) trait LayerOp<T: Scalar> {
    fn arity(&self) -> usize {
        1
    }
    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        mode: Mode,
        seed: u64,
        trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>>;
    /// Returns one gradient per input (empty when `need_input_grad` is false).
    fn backward(&mut self, upstream: &Tensor<T>, accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>>;
    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        Vec::new()
    }
    fn state(&self) -> Vec<(&'static str, &Tensor<T>)> {
        Vec::new()
    }
    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }
    fn clear_cache(&mut self);
}

pub(crate) fn missing_cache(kind: &str) -> Error {
    Error::State(format!("{kind} backward called before a train-mode forward"))
}

pub(crate) fn check_upstream<T: Scalar>(kind: &str, upstream: &Tensor<T>, expected: &[usize]) -> Result<()> {
    if upstream.shape() != expected {
        return Err(Error::Shape(format!(
            "{kind} backward: upstream {:?} does not match forward output {expected:?}",
            upstream.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Layer<T> {
    fn wrap(name: impl Into<String>, op: Op<T>) -> Self {
        Layer {
            name: name.into(),
            trainable: true,
            op,
        }
    }

    pub fn conv2d(name: impl Into<String>, conv: Conv2d<T>) -> Self {
        Self::wrap(name, conv.into())
    }
    pub fn batchnorm(name: impl Into<String>, bn: BatchNorm<T>) -> Self {
        Self::wrap(name, bn.into())
    }
    pub fn relu(name: impl Into<String>) -> Self {
        Self::wrap(name, Relu::new().into())
    }
    pub fn maxpool2d(name: impl Into<String>, pool: MaxPool2d) -> Self {
        Self::wrap(name, pool.into())
    }
    pub fn globalavgpool(name: impl Into<String>) -> Self {
        Self::wrap(name, GlobalAvgPool::default().into())
    }
    pub fn flatten(name: impl Into<String>) -> Self {
        Self::wrap(name, Flatten::default().into())
    }
    pub fn dense(name: impl Into<String>, dense: Dense<T>) -> Self {
        Self::wrap(name, dense.into())
    }
    pub fn dropout(name: impl Into<String>, rate: f64) -> Result<Self> {
        Ok(Self::wrap(name, Dropout::new(rate)?.into()))
    }
    pub fn softmax(name: impl Into<String>) -> Self {
        Self::wrap(name, Softmax::new().into())
    }
    pub fn add(name: impl Into<String>) -> Self {
        Self::wrap(name, Add::default().into())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> LayerKind {
        match &self.op {
            Op::Conv2d(_) => LayerKind::Conv2d,
            Op::BatchNorm(_) => LayerKind::BatchNorm,
            Op::Relu(_) => LayerKind::Relu,
            Op::MaxPool2d(_) => LayerKind::MaxPool2d,
            Op::GlobalAvgPool(_) => LayerKind::GlobalAvgPool,
            Op::Flatten(_) => LayerKind::Flatten,
            Op::Dense(_) => LayerKind::Dense,
            Op::Dropout(_) => LayerKind::Dropout,
            Op::Softmax(_) => LayerKind::Softmax,
            Op::Add(_) => LayerKind::Add,
        }
    }

    pub fn arity(&self) -> usize {
        dispatch!(&self.op, l => LayerOp::<T>::arity(l))
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Frozen layers keep propagating input gradients; optimizers skip their
    /// parameters and frozen batch normalization runs on its moving statistics.
    pub fn set_trainable(&mut self, flag: bool) {
        self.trainable = flag;
    }

    pub fn has_params(&self) -> bool {
        !self.params().is_empty()
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        self.forward_many(&[input], mode, seed)
    }

    pub fn forward_many(&mut self, inputs: &[&Tensor<T>], mode: Mode, seed: u64) -> Result<Tensor<T>> {
        self.forward_inner(inputs, mode, seed, mode == Mode::Train)
    }

    pub(crate) fn forward_inner(
        &mut self,
        inputs: &[&Tensor<T>],
        mode: Mode,
        seed: u64,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        if inputs.len() != self.arity() {
            return Err(Error::Shape(format!(
                "{} expects {} input(s), got {}",
                self.name,
                self.arity(),
                inputs.len()
            )));
        }
        let trainable = self.trainable;
        let out = dispatch!(&mut self.op, l => LayerOp::<T>::forward(l, inputs, mode, seed, trainable, keep_cache))?;
        out.ensure_finite(&self.name)?;
        Ok(out)
    }

    /// Gradient with respect to the (single) input.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mut grads = self.backward_many(upstream)?;
        if grads.len() != 1 {
            return Err(Error::State(format!(
                "{} has {} inputs; use backward_many",
                self.name,
                grads.len()
            )));
        }
        Ok(grads.pop().expect("one gradient"))
    }

    pub fn backward_many(&mut self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.backward_inner(upstream, true)
    }

    pub(crate) fn backward_inner(&mut self, upstream: &Tensor<T>, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let accumulate = self.trainable;
        dispatch!(&mut self.op, l => LayerOp::<T>::backward(l, upstream, accumulate, need_input_grad))
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        dispatch!(&self.op, l => LayerOp::<T>::params(l))
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        dispatch!(&mut self.op, l => LayerOp::<T>::params_mut(l))
    }

    /// Non-trainable buffers (batch normalization moving statistics).
    pub fn state(&self) -> Vec<(&'static str, &Tensor<T>)> {
        dispatch!(&self.op, l => LayerOp::<T>::state(l))
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        dispatch!(&mut self.op, l => LayerOp::<T>::state_mut(l))
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        dispatch!(&mut self.op, l => LayerOp::<T>::clear_cache(l))
    }

    /// `(trainable, non_trainable)` value counts.
    pub fn param_count(&self) -> (usize, usize) {
        let learnable: usize = self.params().iter().map(|(_, p)| p.value.len()).sum();
        let state: usize = self.state().iter().map(|(_, t)| t.len()).sum();
        if self.trainable {
            (learnable, state)
        } else {
            (0, learnable + state)
        }
    }

    /// Shadow copy at another precision (parameters, state and flags; caches
    /// are dropped).
    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        let op = match &self.op {
            Op::Conv2d(l) => Op::Conv2d(l.cast()),
            Op::BatchNorm(l) => Op::BatchNorm(l.cast()),
            Op::Relu(_) => Op::Relu(Relu::new()),
            Op::MaxPool2d(l) => Op::MaxPool2d(MaxPool2d::new(l.pool(), l.stride(), l.padding())),
            Op::GlobalAvgPool(_) => Op::GlobalAvgPool(GlobalAvgPool::default()),
            Op::Flatten(_) => Op::Flatten(Flatten::default()),
            Op::Dense(l) => Op::Dense(l.cast()),
            Op::Dropout(l) => Op::Dropout(Dropout::new(l.rate()).expect("rate already validated")),
            Op::Softmax(_) => Op::Softmax(Softmax::new()),
            Op::Add(_) => Op::Add(Add::default()),
        };
        Layer {
            name: self.name.clone(),
            trainable: self.trainable,
            op,
        }
    }

    pub fn as_conv2d(&self) -> Option<&Conv2d<T>> {
        match &self.op {
            Op::Conv2d(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_batchnorm(&self) -> Option<&BatchNorm<T>> {
        match &self.op {
            Op::BatchNorm(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_dense(&self) -> Option<&Dense<T>> {
        match &self.op {
            Op::Dense(d) => Some(d),
            _ => None,
        }
    }
}
