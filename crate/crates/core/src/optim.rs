//! SGD with momentum, Adam, and the fine-tuning phase switch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};
use crate::zoo::{Architecture, ModelConfig, OptimizerKind};

pub const MOMENTUM: f64 = 0.9;
pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-7;

/// Number of trailing backbone layer objects unfrozen for fine-tuning.
pub const FINE_TUNE_LAYERS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    /// Velocity (one tensor) or first and second moments (two tensors),
    /// keyed by `layer/param`.
    #[serde(skip)]
    pub slots: BTreeMap<String, Vec<Tensor>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Optimizer(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(OptimizerState {
            kind,
            learning_rate,
            momentum: MOMENTUM,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            t: 0,
            slots: BTreeMap::new(),
        })
    }

    fn slot_count(&self) -> usize {
        match self.kind {
            OptimizerKind::SgdMomentum => 1,
            OptimizerKind::Adam => 2,
        }
    }

    /// Zero slots for every trainable parameter not yet tracked.
    pub fn allocate<T: Scalar>(&mut self, model: &mut Model<T>) {
        let n = self.slot_count();
        for (name, p) in model.trainable_params_mut() {
            self.slots
                .entry(name)
                .or_insert_with(|| vec![Tensor::zeros_like(&p.value.cast()); n]);
        }
    }

    /// One update of every trainable parameter that has a gradient. The step
    /// counter advances once per call.
    pub fn step<T: Scalar>(&mut self, model: &mut Model<T>) -> Result<()> {
        self.t += 1;
        let n = self.slot_count();
        for (name, p) in model.trainable_params_mut() {
            let Some(grad) = p.grad.as_ref() else { continue };
            let slots = self
                .slots
                .entry(name.clone())
                .or_insert_with(|| vec![Tensor::zeros_like(&p.value.cast()); n]);
            if slots.iter().any(|s| s.shape() != p.value.shape()) || grad.shape() != p.value.shape() {
                return Err(Error::Optimizer(format!("shape mismatch for {name}")));
            }
            match self.kind {
                OptimizerKind::SgdMomentum => sgd_update(
                    p.value.data_mut(),
                    grad.data(),
                    slots[0].data_mut(),
                    self.learning_rate,
                    self.momentum,
                ),
                OptimizerKind::Adam => {
                    let (m, v) = slots.split_at_mut(1);
                    adam_update(
                        p.value.data_mut(),
                        grad.data(),
                        m[0].data_mut(),
                        v[0].data_mut(),
                        AdamStep {
                            lr: self.learning_rate,
                            beta1: self.beta1,
                            beta2: self.beta2,
                            epsilon: self.epsilon,
                            t: self.t,
                        },
                    )
                }
            }
        }
        Ok(())
    }
}

fn sgd_update<T: Scalar>(p: &mut [T], g: &[T], v: &mut [f32], lr: f64, momentum: f64) {
    for ((p, &g), v) in p.iter_mut().zip(g).zip(v) {
        let nv = momentum * *v as f64 - lr * g.as_f64();
        *v = nv as f32;
        *p = T::cast_from(p.as_f64() + *v as f64);
    }
}

#[derive(Clone, Copy)]
struct AdamStep {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
}

fn adam_update<T: Scalar>(p: &mut [T], g: &[T], m: &mut [f32], v: &mut [f32], s: AdamStep) {
    let t = s.t as i32;
    let lr_t = s.lr * (1.0 - s.beta2.powi(t)).sqrt() / (1.0 - s.beta1.powi(t));
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m).zip(v) {
        let g = g.as_f64();
        *m = (s.beta1 * *m as f64 + (1.0 - s.beta1) * g) as f32;
        *v = (s.beta2 * *v as f64 + (1.0 - s.beta2) * g * g) as f32;
        let delta = lr_t * *m as f64 / ((*v as f64).sqrt() + s.epsilon);
        *p = T::cast_from(p.as_f64() - delta);
    }
}

/// One momentum step on explicit tensors: `v = momentum·v − lr·g`, `p += v`.
pub fn sgd_momentum_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check_lengths(params, grads, &[velocity.len()])?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity) {
        check_shapes(p, &[g, v])?;
        sgd_update(p.data_mut(), g.data(), v.data_mut(), lr, momentum);
    }
    Ok(())
}

/// One bias-corrected Adam step on explicit tensors with the default
/// constants; `t` is the step number after this update (1-based).
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    first: &mut [Tensor],
    second: &mut [Tensor],
    lr: f64,
    t: u64,
) -> Result<()> {
    check_lengths(params, grads, &[first.len(), second.len()])?;
    if t == 0 {
        return Err(Error::Optimizer("adam step counter starts at 1".into()));
    }
    let s = AdamStep {
        lr,
        beta1: BETA1,
        beta2: BETA2,
        epsilon: EPSILON,
        t,
    };
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(first).zip(second) {
        check_shapes(p, &[g, m, v])?;
        adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), s);
    }
    Ok(())
}

fn check_lengths(params: &[Tensor], grads: &[Tensor], slots: &[usize]) -> Result<()> {
    if grads.len() != params.len() || slots.iter().any(|&n| n != params.len()) {
        return Err(Error::Optimizer(format!(
            "{} parameters, {} gradients, slot lists {:?}",
            params.len(),
            grads.len(),
            slots
        )));
    }
    Ok(())
}

fn check_shapes(p: &Tensor, others: &[&Tensor]) -> Result<()> {
    if let Some(bad) = others.iter().find(|o| o.shape() != p.shape()) {
        return Err(Error::Optimizer(format!(
            "shape mismatch: parameter {:?}, got {:?}",
            p.shape(),
            bad.shape()
        )));
    }
    Ok(())
}

/// Training phase: 1 trains the head (and all of a custom model), 2
/// fine-tunes the top of a residual backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }
}

/// Configure trainability and learning rate for a phase.
///
/// Entering phase 2 keeps the step counter and the head's slots and adds
/// zeroed slots for the newly unfrozen parameters.
pub fn apply_phase<T: Scalar>(
    config: &ModelConfig,
    model: &mut Model<T>,
    state: &mut OptimizerState,
    phase: Phase,
) -> Result<()> {
    match phase {
        Phase::One => {
            model.set_trainable_all(true);
            model.set_backbone_trainable(false);
            state.learning_rate = config.learning_rate;
        }
        Phase::Two => {
            if config.architecture != Architecture::Resnet50 {
                return Err(Error::Config(format!("model {} has no fine-tuning phase", config.id)));
            }
            let lr = config
                .fine_tune_learning_rate
                .ok_or_else(|| Error::Config(format!("model {} has no fine-tune learning rate", config.id)))?;
            let backbone = model.backbone_indices();
            let start = backbone.len().saturating_sub(FINE_TUNE_LAYERS);
            for &i in &backbone[start..] {
                model.layer_mut(i).set_trainable(true);
            }
            state.learning_rate = lr;
        }
    }
    state.allocate(model);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::zoo::{build_custom_cnn, build_resnet50, registry_lookup, Pooling};
    use proptest::prelude::*;

    fn t1(v: f32) -> Vec<Tensor> {
        vec![Tensor::from_vec(&[1], vec![v]).unwrap()]
    }

    #[test]
    fn sgd_hand_recurrence() {
        let mut p = t1(1.0);
        let mut v = t1(0.0);
        sgd_momentum_step(&mut p, &t1(1.0), &mut v, 0.01, 0.9).unwrap();
        assert!((p[0].data()[0] - 0.99).abs() < 1e-7);
        assert!((v[0].data()[0] + 0.01).abs() < 1e-7);
        sgd_momentum_step(&mut p, &t1(1.0), &mut v, 0.01, 0.9).unwrap();
        assert!((v[0].data()[0] + 0.019).abs() < 1e-7);
        assert!((p[0].data()[0] - 0.971).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = t1(0.3);
        let mut v = t1(0.0);
        sgd_momentum_step(&mut p, &t1(0.0), &mut v, 0.01, 0.9).unwrap();
        assert_eq!(p[0].data()[0], 0.3);
        let (mut m, mut s) = (t1(0.0), t1(0.0));
        for t in 1..=50 {
            adam_step(&mut p, &t1(0.0), &mut m, &mut s, 1e-4, t).unwrap();
        }
        assert_eq!(p[0].data()[0], 0.3);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        let mut p = t1(0.0);
        let (mut m, mut v) = (t1(0.0), t1(0.0));
        adam_step(&mut p, &t1(1.0), &mut m, &mut v, 1e-4, 1).unwrap();
        // With the epsilon applied to the uncorrected second moment the step
        // is lr / (1 + eps / sqrt(1 - b2)).
        let expected = -1e-4 / (1.0 + EPSILON / (1.0 - BETA2).sqrt());
        assert!((p[0].data()[0] as f64 - expected).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = t1(0.0);
        let g = vec![Tensor::zeros(&[2]).unwrap()];
        let mut v = t1(0.0);
        assert!(matches!(
            sgd_momentum_step(&mut p, &g, &mut v, 0.01, 0.9),
            Err(Error::Optimizer(_))
        ));
        let (mut m, mut s) = (t1(0.0), t1(0.0));
        assert!(matches!(
            adam_step(&mut p, &g, &mut m, &mut s, 0.01, 1),
            Err(Error::Optimizer(_))
        ));
    }

    proptest! {
        #[test]
        fn single_step_opposes_gradient(p0 in -5.0f32..5.0, g in prop_oneof![-3.0f32..-1e-3, 1e-3f32..3.0]) {
            let mut p = t1(p0);
            let mut v = t1(0.0);
            sgd_momentum_step(&mut p, &t1(g), &mut v, 0.01, 0.9).unwrap();
            prop_assert!((p[0].data()[0] - p0) * g < 0.0);
            let mut p = t1(p0);
            let (mut m, mut s) = (t1(0.0), t1(0.0));
            adam_step(&mut p, &t1(g), &mut m, &mut s, 1e-3, 1).unwrap();
            prop_assert!((p[0].data()[0] - p0) * g < 0.0);
        }

        #[test]
        fn quadratic_shrinks_within_1000_steps(p0 in prop_oneof![-10.0f64..-0.5, 0.5f64..10.0]) {
            // f(p) = p²/2, so g = p. Monotone approach to 0 in magnitude for
            // SGD at lr 0.001 and Adam at lr 0.0001 (the smallest initial
            // rates used by the experiments).
            let mut p = vec![Tensor::<f32>::from_f64s(&[1], &[p0]).unwrap()];
            let mut v = t1(0.0);
            let mut prev = p0.abs();
            for _ in 0..1000 {
                let g = p.clone();
                sgd_momentum_step(&mut p, &g, &mut v, 0.001, 0.9).unwrap();
                let now = (p[0].data()[0] as f64).abs();
                prop_assert!(now <= prev);
                prev = now;
            }
            prop_assert!(prev < p0.abs());

            for lr in [1e-4, 1e-5] {
                let mut p = vec![Tensor::<f32>::from_f64s(&[1], &[p0]).unwrap()];
                let (mut m, mut s) = (t1(0.0), t1(0.0));
                let mut prev = p0.abs();
                for t in 1..=1000 {
                    let g = p.clone();
                    adam_step(&mut p, &g, &mut m, &mut s, lr, t).unwrap();
                    let now = (p[0].data()[0] as f64).abs();
                    prop_assert!(now <= prev);
                    prev = now;
                }
                prop_assert!(prev < p0.abs());
            }
        }

        #[test]
        fn quadratic_converges_at_the_higher_sgd_rate(p0 in prop_oneof![-10.0f64..-0.5, 0.5f64..10.0]) {
            // At lr 0.01 with momentum 0.9 the iteration is underdamped: |p|
            // oscillates while its envelope decays by sqrt(0.9) per step.
            let mut p = vec![Tensor::<f32>::from_f64s(&[1], &[p0]).unwrap()];
            let mut v = t1(0.0);
            for _ in 0..1000 {
                let g = p.clone();
                sgd_momentum_step(&mut p, &g, &mut v, 0.01, 0.9).unwrap();
            }
            prop_assert!((p[0].data()[0] as f64).abs() < 1e-3 * p0.abs());
        }
    }

    #[test]
    fn frozen_parameters_are_bit_identical() {
        let mut model = build_custom_cnn(Pooling::Gap, 1).unwrap();
        model.layer_mut(0).set_trainable(false);
        let frozen_before = model.layer(0).params()[0].1.value.clone();
        let x = crate::gradcheck::random_tensor(&[2, 99, 99, 3], 2, 0.0, 1.0).cast::<f32>();
        let mut state = OptimizerState::new(OptimizerKind::Adam, 1e-3).unwrap();
        for _ in 0..3 {
            model.zero_grad();
            let logits = model.forward_logits(&x, Mode::Train, 0).unwrap();
            model.backward_logits(&logits).unwrap();
            state.step(&mut model).unwrap();
        }
        assert_eq!(model.layer(0).params()[0].1.value, frozen_before);
        assert_eq!(state.t, 3);
        assert!(!state.slots.keys().any(|k| k.starts_with("block1_conv/")));
    }

    #[test]
    fn phase_switch() {
        let cfg = registry_lookup(1).unwrap();
        let mut model = build_resnet50(cfg.pooling, None, 0).unwrap();
        let mut state = OptimizerState::new(cfg.optimizer, cfg.learning_rate).unwrap();
        apply_phase(&cfg, &mut model, &mut state, Phase::One).unwrap();
        assert_eq!(model.summary().trainable, 1_052_166);
        let head_slots = state.slots.clone();
        state.t = 7;
        apply_phase(&cfg, &mut model, &mut state, Phase::Two).unwrap();
        assert_eq!(state.learning_rate, 1e-5);
        assert_eq!(state.t, 7);
        for (k, v) in &head_slots {
            assert_eq!(&state.slots[k], v);
        }
        let backbone = model.backbone_indices();
        let unfrozen: Vec<usize> = backbone
            .iter()
            .copied()
            .filter(|&i| model.layer(i).is_trainable())
            .collect();
        assert_eq!(unfrozen.len(), FINE_TUNE_LAYERS);
        assert_eq!(unfrozen, backbone[backbone.len() - FINE_TUNE_LAYERS..]);
        let trainable_names: Vec<String> = model.trainable_params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(trainable_names.len(), state.slots.len());

        let cfg4 = registry_lookup(4).unwrap();
        let mut m4 = build_resnet50(cfg4.pooling, None, 0).unwrap();
        let mut s4 = OptimizerState::new(cfg4.optimizer, cfg4.learning_rate).unwrap();
        apply_phase(&cfg4, &mut m4, &mut s4, Phase::Two).unwrap();
        assert_eq!(s4.learning_rate, 0.001);

        let cfg8 = registry_lookup(8).unwrap();
        let mut m8 = build_custom_cnn(cfg8.pooling, 0).unwrap();
        let mut s8 = OptimizerState::new(cfg8.optimizer, cfg8.learning_rate).unwrap();
        assert!(matches!(
            apply_phase(&cfg8, &mut m8, &mut s8, Phase::Two),
            Err(Error::Config(_))
        ));
    }
}
