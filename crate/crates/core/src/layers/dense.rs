use crate::error::{Error, Result};
use crate::tensor::{gemm, transpose, Init, Scalar, Tensor};

use super::{check_upstream, missing_cache, LayerOp, Mode, Param};

/// Fully connected layer: `(N, inputs) -> (N, units)` with an
/// `(inputs, units)` kernel and bias.
#[derive(Clone, Debug)]
pub struct Dense<T: Scalar = f32> {
    inputs: usize,
    units: usize,
    kernel: Param<T>,
    bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, units: usize, seed: u64) -> Result<Self> {
        Ok(Dense {
            inputs,
            units,
            kernel: Param::new(Tensor::new(&[inputs, units], Init::HeNormal { seed })?),
            bias: Param::new(Tensor::zeros(&[units])?),
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }
    pub fn units(&self) -> usize {
        self.units
    }

    pub(crate) fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            inputs: self.inputs,
            units: self.units,
            kernel: self.kernel.cast(),
            bias: self.bias.cast(),
            cache: None,
        }
    }
}

impl<T: Scalar> LayerOp<T> for Dense<T> {
    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _mode: Mode,
        _seed: u64,
        _trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        let x = inputs[0];
        let &[n, k] = x.shape() else {
            return Err(Error::Shape(format!(
                "dense expects (N, features) input, got {:?}",
                x.shape()
            )));
        };
        if k != self.inputs {
            return Err(Error::Shape(format!("dense expects {} features, got {k}", self.inputs)));
        }
        let u = self.units;
        let mut out = vec![T::zero(); n * u];
        gemm(n, k, u, x.data(), self.kernel.value.data(), &mut out);
        for r in out.chunks_exact_mut(u) {
            for (v, &b) in r.iter_mut().zip(self.bias.value.data()) {
                *v += b;
            }
        }
        self.cache = keep_cache.then(|| x.clone());
        Tensor::from_vec(&[n, u], out)
    }

    fn backward(&mut self, upstream: &Tensor<T>, accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("dense"))?;
        let (n, k, u) = (x.shape()[0], self.inputs, self.units);
        check_upstream("dense", upstream, &[n, u])?;
        let dy = upstream.data();
        if accumulate {
            let x_t = transpose(n, k, x.data());
            let mut dw = vec![T::zero(); k * u];
            gemm(k, n, u, &x_t, dy, &mut dw);
            for (g, d) in self.kernel.grad_mut().data_mut().iter_mut().zip(dw) {
                *g += d;
            }
            let db = self.bias.grad_mut().data_mut();
            for r in dy.chunks_exact(u) {
                for (g, &d) in db.iter_mut().zip(r) {
                    *g += d;
                }
            }
        }
        if !need_input_grad {
            return Ok(Vec::new());
        }
        let w_t = transpose(k, u, self.kernel.value.data());
        let mut dx = vec![T::zero(); n * k];
        gemm(n, u, k, dy, &w_t, &mut dx);
        Ok(vec![Tensor::from_vec(&[n, k], dx)?])
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        vec![("kernel", &self.kernel), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("kernel", &mut self.kernel), ("bias", &mut self.bias)]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}
