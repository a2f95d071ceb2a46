//! Central finite-difference gradient checking in double precision.
//!
//! The check treats a layer as a black box: it perturbs each input value and
//! each parameter value by `±eps`, re-runs the forward pass, and compares the
//! slope of `L = Σ out ⊙ R` (for a fixed random `R`) against the analytic
//! gradients produced by `backward`.

use rand::Rng;

use crate::error::Result;
use crate::layers::{Layer, Mode};
use crate::seed;
use crate::tensor::Tensor;

/// Default perturbation.
pub const EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradComparison {
    pub what: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradComparison {
    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            self.abs_error() / scale
        }
    }

    /// Within `rel_tol` relative error, or within `abs_floor` absolutely.
    pub fn passes(&self, rel_tol: f64, abs_floor: f64) -> bool {
        self.abs_error() <= abs_floor || self.rel_error() <= rel_tol
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub comparisons: Vec<GradComparison>,
}

impl GradReport {
    pub fn passes(&self, rel_tol: f64, abs_floor: f64) -> bool {
        self.comparisons.iter().all(|c| c.passes(rel_tol, abs_floor))
    }

    pub fn failures(&self, rel_tol: f64, abs_floor: f64) -> Vec<&GradComparison> {
        self.comparisons
            .iter()
            .filter(|c| !c.passes(rel_tol, abs_floor))
            .collect()
    }

    /// Largest relative error among comparisons that are not under the
    /// absolute floor.
    pub fn worst_rel_error(&self, abs_floor: f64) -> f64 {
        self.comparisons
            .iter()
            .filter(|c| c.abs_error() > abs_floor)
            .map(GradComparison::rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = seed::rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("valid random shape")
}

fn weighted_sum(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Compare analytic and numeric gradients of `layer` at `inputs`.
///
/// `seed` is passed to every forward call, so stochastic layers (dropout)
/// see the same mask throughout.
pub fn check_layer(
    layer: &mut Layer<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    seed: u64,
    eps: f64,
) -> Result<GradReport> {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let out = layer.forward_inner(&refs, mode, seed, true)?;
    let weights = random_tensor(out.shape(), seed ^ 0x5eed, -1.0, 1.0);
    layer.zero_grad();
    let input_grads = layer.backward_many(&weights)?;

    let mut report = GradReport::default();
    let eval = |layer: &mut Layer<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
        let out = layer.forward_inner(&refs, mode, seed, false)?;
        Ok(weighted_sum(&out, &weights))
    };

    let mut probe = inputs.to_vec();
    for (k, grad) in input_grads.iter().enumerate() {
        for i in 0..probe[k].len() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let plus = eval(layer, &probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let minus = eval(layer, &probe)?;
            probe[k].data_mut()[i] = orig;
            report.comparisons.push(GradComparison {
                what: format!("{}:input{k}", layer.name()),
                index: i,
                analytic: grad.data()[i],
                numeric: (plus - minus) / (2.0 * eps),
            });
        }
    }

    let analytic_params: Vec<(String, Tensor<f64>)> = layer
        .params()
        .iter()
        .map(|(name, p)| {
            let g = p.grad.clone().unwrap_or_else(|| Tensor::zeros_like(&p.value));
            (name.to_string(), g)
        })
        .collect();
    for (pi, (pname, grad)) in analytic_params.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = layer.params()[pi].1.value.data()[i];
            layer.params_mut()[pi].1.value.data_mut()[i] = orig + eps;
            let plus = eval(layer, inputs)?;
            layer.params_mut()[pi].1.value.data_mut()[i] = orig - eps;
            let minus = eval(layer, inputs)?;
            layer.params_mut()[pi].1.value.data_mut()[i] = orig;
            report.comparisons.push(GradComparison {
                what: format!("{}:{pname}", layer.name()),
                index: i,
                analytic: grad.data()[i],
                numeric: (plus - minus) / (2.0 * eps),
            });
        }
    }
    Ok(report)
}
