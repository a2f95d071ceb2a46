//! Layer graphs in topological order, with the parameter ledger.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerKind, Mode, Param};
use crate::seed::derive_seed;
use crate::tensor::{Scalar, Tensor};

/// Activation slot 0 is the model input; slot `i + 1` is node `i`'s output.
pub type Slot = usize;
pub const INPUT: Slot = 0;

#[derive(Clone, Debug)]
pub struct Node<T: Scalar = f32> {
    pub layer: Layer<T>,
    inputs: Vec<Slot>,
    backbone: bool,
}

impl<T: Scalar> Node<T> {
    pub fn inputs(&self) -> &[Slot] {
        &self.inputs
    }

    /// Whether the node belongs to a pretrained-style backbone (as opposed
    /// to the classification head).
    pub fn is_backbone(&self) -> bool {
        self.backbone
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLedgerEntry {
    pub index: usize,
    pub name: String,
    pub kind: LayerKind,
    pub trainable: usize,
    pub non_trainable: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub entries: Vec<ParamLedgerEntry>,
    pub total: usize,
    pub trainable: usize,
}

impl ModelSummary {
    pub fn non_trainable(&self) -> usize {
        self.total - self.trainable
    }
}

/// `1573574` -> `"1,573,574"`.
pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4}  {:<28} {:<14} {:>12} {:>14}",
            "#", "layer", "kind", "trainable", "non-trainable"
        )?;
        for e in &self.entries {
            if e.trainable + e.non_trainable == 0 {
                continue;
            }
            writeln!(
                f,
                "{:>4}  {:<28} {:<14} {:>12} {:>14}",
                e.index,
                e.name,
                e.kind.name(),
                group_thousands(e.trainable),
                group_thousands(e.non_trainable)
            )?;
        }
        write!(
            f,
            "total / trainable: {} / {}",
            group_thousands(self.total),
            group_thousands(self.trainable)
        )
    }
}

/// All learnable parameters and batch-norm statistics, in model order.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T: Scalar = f32>(Vec<Tensor<T>>);

#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    input_shape: Vec<usize>,
}

impl<T: Scalar> Model<T> {
    /// `input_shape` excludes the batch axis, e.g. `[99, 99, 3]`.
    pub fn new(input_shape: &[usize]) -> Self {
        Model {
            nodes: Vec::new(),
            input_shape: input_shape.to_vec(),
        }
    }

    /// Append a node reading from `inputs`; returns the node's output slot.
    pub fn push(&mut self, layer: Layer<T>, inputs: &[Slot], backbone: bool) -> Result<Slot> {
        let next = self.nodes.len() + 1;
        if inputs.len() != layer.arity() {
            return Err(Error::Shape(format!(
                "{} takes {} input(s), wired to {}",
                layer.name(),
                layer.arity(),
                inputs.len()
            )));
        }
        if let Some(&bad) = inputs.iter().find(|&&s| s >= next) {
            return Err(Error::Config(format!(
                "{} reads slot {bad}, which is not produced yet",
                layer.name()
            )));
        }
        if self.nodes.iter().any(|n| n.layer.name() == layer.name()) {
            return Err(Error::Config(format!("duplicate layer name {}", layer.name())));
        }
        self.nodes.push(Node {
            layer,
            inputs: inputs.to_vec(),
            backbone,
        });
        Ok(next)
    }

    /// Append a node fed by the previous node (or the input).
    pub fn chain(&mut self, layer: Layer<T>, backbone: bool) -> Result<Slot> {
        let prev = self.nodes.len();
        self.push(layer, &[prev], backbone)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn layer(&self, index: usize) -> &Layer<T> {
        &self.nodes[index].layer
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut Layer<T> {
        &mut self.nodes[index].layer
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.layer.name() == name)
    }

    pub fn backbone_indices(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].backbone).collect()
    }

    pub fn set_trainable_all(&mut self, flag: bool) {
        for n in &mut self.nodes {
            n.layer.set_trainable(flag);
        }
    }

    pub fn set_backbone_trainable(&mut self, flag: bool) {
        for n in self.nodes.iter_mut().filter(|n| n.backbone) {
            n.layer.set_trainable(flag);
        }
    }

    pub fn summary(&self) -> ModelSummary {
        let entries: Vec<ParamLedgerEntry> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(index, n)| {
                let (trainable, non_trainable) = n.layer.param_count();
                ParamLedgerEntry {
                    index,
                    name: n.layer.name().to_string(),
                    kind: n.layer.kind(),
                    trainable,
                    non_trainable,
                }
            })
            .collect();
        let trainable = entries.iter().map(|e| e.trainable).sum();
        let total = entries.iter().map(|e| e.trainable + e.non_trainable).sum();
        ModelSummary {
            entries,
            total,
            trainable,
        }
    }

    /// `layer/param` names with their parameters, in model order.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                let lname = n.layer.name();
                n.layer
                    .params()
                    .into_iter()
                    .map(move |(p, v)| (format!("{lname}/{p}"), v))
            })
            .collect()
    }

    /// Trainable parameters only, mutably.
    pub fn trainable_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.nodes
            .iter_mut()
            .filter(|n| n.layer.is_trainable())
            .flat_map(|n| {
                let lname = n.layer.name().to_string();
                n.layer
                    .params_mut()
                    .into_iter()
                    .map(move |(p, v)| (format!("{lname}/{p}"), v))
            })
            .collect()
    }

    pub fn named_state(&self) -> Vec<(String, &Tensor<T>)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                let lname = n.layer.name();
                n.layer
                    .state()
                    .into_iter()
                    .map(move |(p, v)| (format!("{lname}/{p}"), v))
            })
            .collect()
    }

    /// Every parameter and state tensor by `layer/name`, in the same order
    /// as [`Model::visit_tensors_mut`].
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for n in &self.nodes {
            let lname = n.layer.name();
            for (p, v) in n.layer.params() {
                out.push((format!("{lname}/{p}"), &v.value));
            }
            for (p, v) in n.layer.state() {
                out.push((format!("{lname}/{p}"), v));
            }
        }
        out
    }

    /// Visit every parameter and state tensor by `layer/name`, mutably, in
    /// the order of [`Model::named_tensors`].
    pub fn visit_tensors_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>) -> Result<()>) -> Result<()> {
        for n in &mut self.nodes {
            let lname = n.layer.name().to_string();
            for (p, v) in n.layer.params_mut() {
                f(&format!("{lname}/{p}"), &mut v.value)?;
            }
            for (p, v) in n.layer.state_mut() {
                f(&format!("{lname}/{p}"), v)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.layer.zero_grad();
        }
    }

    pub fn clear_caches(&mut self) {
        for n in &mut self.nodes {
            n.layer.clear_cache();
        }
    }

    pub fn snapshot(&self) -> Snapshot<T> {
        let mut out = Vec::new();
        for n in &self.nodes {
            out.extend(n.layer.params().into_iter().map(|(_, p)| p.value.clone()));
            out.extend(n.layer.state().into_iter().map(|(_, t)| t.clone()));
        }
        Snapshot(out)
    }

    pub fn restore(&mut self, snapshot: &Snapshot<T>) -> Result<()> {
        let mut it = snapshot.0.iter();
        self.visit_tensors_mut(|name, t| {
            let src = it
                .next()
                .ok_or_else(|| Error::State("snapshot has too few tensors".into()))?;
            if src.shape() != t.shape() {
                return Err(Error::Shape(format!("snapshot tensor for {name} has the wrong shape")));
            }
            *t = src.clone();
            Ok(())
        })?;
        if it.next().is_some() {
            return Err(Error::State("snapshot has too many tensors".into()));
        }
        Ok(())
    }

    /// Index of the lowest node with trainable parameters, if any.
    pub fn first_trainable(&self) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.layer.is_trainable() && n.layer.has_params())
    }

    fn ends_in_softmax(&self) -> bool {
        self.nodes.last().map(|n| n.layer.kind()) == Some(LayerKind::Softmax)
    }

    fn run(&mut self, x: &Tensor<T>, mode: Mode, seed: u64, end: usize) -> Result<Tensor<T>> {
        let expected_rank = self.input_shape.len() + 1;
        if x.rank() != expected_rank || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "model expects (N, {:?}) input, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        let cache_from = match mode {
            Mode::Train => self.first_trainable().unwrap_or(usize::MAX),
            Mode::Eval => usize::MAX,
        };
        let mut last_use = vec![0usize; end + 1];
        for (i, n) in self.nodes[..end].iter().enumerate() {
            for &s in &n.inputs {
                last_use[s] = last_use[s].max(i);
            }
        }
        let mut acts: Vec<Option<Tensor<T>>> = vec![None; end + 1];
        acts[INPUT] = Some(x.clone());
        for i in 0..end {
            let node = &mut self.nodes[i];
            let out = {
                let inputs: Vec<&Tensor<T>> = node
                    .inputs
                    .iter()
                    .map(|&s| acts[s].as_ref().expect("slot produced before use"))
                    .collect();
                let node_seed = derive_seed(seed, "dropout", i as u64);
                node.layer.forward_inner(&inputs, mode, node_seed, i >= cache_from)?
            };
            for &s in &node.inputs {
                if last_use[s] == i {
                    acts[s] = None;
                }
            }
            acts[i + 1] = Some(out);
        }
        Ok(acts[end].take().expect("final activation"))
    }

    /// Full forward pass (class probabilities for the zoo models).
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        self.run(x, mode, seed, self.nodes.len())
    }

    /// Forward pass stopping before the trailing softmax.
    pub fn forward_logits(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        if !self.ends_in_softmax() {
            return Err(Error::Config("model does not end in a softmax layer".into()));
        }
        self.run(x, mode, seed, self.nodes.len() - 1)
    }

    fn backprop(&mut self, grad: &Tensor<T>, end: usize) -> Result<()> {
        let Some(stop) = self.first_trainable() else {
            return Ok(());
        };
        if stop >= end {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; end + 1];
        grads[end] = Some(grad.clone());
        for i in (stop..end).rev() {
            let Some(g) = grads[i + 1].take() else { continue };
            let node = &mut self.nodes[i];
            // Slots at or below `stop` feed only frozen, parameter-free work.
            let need = node.inputs.iter().any(|&s| s > stop);
            let input_grads = node.layer.backward_inner(&g, need)?;
            if !need {
                continue;
            }
            for (&s, gi) in node.inputs.iter().zip(input_grads) {
                if s <= stop {
                    continue;
                }
                match &mut grads[s] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }

    /// Accumulate parameter gradients given `d loss / d output`.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        self.backprop(grad, self.nodes.len())
    }

    /// Accumulate parameter gradients given `d loss / d logits`, skipping the
    /// trailing softmax.
    pub fn backward_logits(&mut self, grad: &Tensor<T>) -> Result<()> {
        if !self.ends_in_softmax() {
            return Err(Error::Config("model does not end in a softmax layer".into()));
        }
        self.backprop(grad, self.nodes.len() - 1)
    }

    /// Shadow copy at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            nodes: self
                .nodes
                .iter()
                .map(|n| Node {
                    layer: n.layer.cast(),
                    inputs: n.inputs.clone(),
                    backbone: n.backbone,
                })
                .collect(),
            input_shape: self.input_shape.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;
    use crate::layers::{BatchNorm, Conv2d, Dense};
    use crate::tensor::Padding;

    fn tiny_residual() -> Model<f64> {
        let mut m = Model::new(&[4, 4, 2]);
        let a = m
            .chain(
                Layer::conv2d("c1", Conv2d::new(2, 3, (3, 3), 1, Padding::SamePreserving, 1).unwrap()),
                true,
            )
            .unwrap();
        m.chain(Layer::batchnorm("bn1", BatchNorm::new(3).unwrap()), true)
            .unwrap();
        let r = m.chain(Layer::relu("r1"), true).unwrap();
        let c2 = m
            .push(
                Layer::conv2d("c2", Conv2d::new(3, 3, (1, 1), 1, Padding::SameCeil, 2).unwrap()),
                &[r],
                true,
            )
            .unwrap();
        m.push(Layer::add("add"), &[c2, a], true).unwrap();
        m.chain(Layer::globalavgpool("gap"), false).unwrap();
        m.chain(Layer::dense("d", Dense::new(3, 6, 3).unwrap()), false).unwrap();
        m.chain(Layer::softmax("softmax"), false).unwrap();
        m
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(group_thousands(0), "0");
        assert_eq!(group_thousands(999), "999");
        assert_eq!(group_thousands(1_573_574), "1,573,574");
        assert_eq!(group_thousands(24_639_878), "24,639,878");
    }

    #[test]
    fn forward_shapes_and_probabilities() {
        let mut m = tiny_residual();
        let y = m
            .forward(&random_tensor(&[5, 4, 4, 2], 1, -1.0, 1.0), Mode::Eval, 0)
            .unwrap();
        assert_eq!(y.shape(), &[5, 6]);
        for row in y.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(m
            .forward(&random_tensor(&[5, 4, 4, 3], 1, -1.0, 1.0), Mode::Eval, 0)
            .is_err());
    }

    #[test]
    fn graph_gradients_match_finite_differences() {
        let mut m = tiny_residual();
        let x = random_tensor(&[2, 4, 4, 2], 5, -1.0, 1.0);
        let w = random_tensor(&[2, 6], 6, -1.0, 1.0);
        let loss = |m: &mut Model<f64>| -> f64 {
            let y = m.forward_logits(&x, Mode::Train, 0).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        m.zero_grad();
        m.forward_logits(&x, Mode::Train, 0).unwrap();
        m.backward_logits(&w).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = m
            .named_params()
            .into_iter()
            .map(|(n, p)| (n, p.grad.as_ref().unwrap().data().to_vec()))
            .collect();
        let eps = 1e-5;
        for (pi, (name, grad)) in analytic.iter().enumerate() {
            for (i, &g) in grad.iter().enumerate() {
                let orig;
                {
                    let mut t = m.trainable_params_mut();
                    orig = t[pi].1.value.data()[i];
                    t[pi].1.value.data_mut()[i] = orig + eps;
                }
                let plus = loss(&mut m);
                m.trainable_params_mut()[pi].1.value.data_mut()[i] = orig - eps;
                let minus = loss(&mut m);
                m.trainable_params_mut()[pi].1.value.data_mut()[i] = orig;
                let num = (plus - minus) / (2.0 * eps);
                let err = (num - g).abs();
                assert!(
                    err <= 1e-6 || err / num.abs().max(g.abs()) <= 1e-4,
                    "{name}[{i}]: analytic {g} numeric {num}"
                );
            }
        }
    }

    #[test]
    fn frozen_prefix_is_not_touched_by_backward() {
        let mut m: Model<f32> = tiny_residual().cast();
        for i in 0..3 {
            m.layer_mut(i).set_trainable(false);
        }
        let x: Tensor<f32> = random_tensor(&[2, 4, 4, 2], 5, -1.0, 1.0).cast();
        let before = m.snapshot();
        m.forward_logits(&x, Mode::Train, 0).unwrap();
        m.backward_logits(&Tensor::new(&[2, 6], crate::tensor::Init::Ones).unwrap())
            .unwrap();
        for (name, p) in m.named_params() {
            let frozen = name.starts_with("c1") || name.starts_with("bn1");
            assert_eq!(p.grad.is_none(), frozen, "{name}");
        }
        // Frozen batchnorm ran on moving statistics and left them alone.
        assert_eq!(m.snapshot(), before);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut m: Model<f32> = tiny_residual().cast();
        let snap = m.snapshot();
        m.visit_tensors_mut(|_, t| {
            t.data_mut().fill(0.5);
            Ok(())
        })
        .unwrap();
        assert_ne!(m.snapshot(), snap);
        m.restore(&snap).unwrap();
        assert_eq!(m.snapshot(), snap);
    }

    #[test]
    fn ledger_totals_match_buffers() {
        let m = tiny_residual();
        let s = m.summary();
        let buffers: usize = m.named_params().iter().map(|(_, p)| p.value.len()).sum::<usize>()
            + m.named_state().iter().map(|(_, t)| t.len()).sum::<usize>();
        assert_eq!(s.total, buffers);
        assert_eq!(
            s.entries.iter().map(|e| e.trainable + e.non_trainable).sum::<usize>(),
            s.total
        );
    }
}
