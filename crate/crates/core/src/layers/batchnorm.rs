use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{check_upstream, missing_cache, LayerOp, Mode, Param};

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Per-channel batch normalization over the trailing axis.
///
/// In train mode a trainable layer normalizes by batch statistics and folds
/// them into the moving averages; otherwise (eval mode, or frozen) it
/// normalizes by the moving statistics and leaves them untouched.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Scalar = f32> {
    channels: usize,
    momentum: f64,
    epsilon: f64,
    gamma: Param<T>,
    beta: Param<T>,
    moving_mean: Tensor<T>,
    moving_variance: Tensor<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    shape: Vec<usize>,
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Self::with_constants(channels, DEFAULT_MOMENTUM, DEFAULT_EPSILON)
    }

    pub fn with_constants(channels: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "batchnorm momentum {momentum} / epsilon {epsilon} out of range"
            )));
        }
        Ok(BatchNorm {
            channels,
            momentum,
            epsilon,
            gamma: Param::new(Tensor::new(&[channels], crate::tensor::Init::Ones)?),
            beta: Param::new(Tensor::zeros(&[channels])?),
            moving_mean: Tensor::zeros(&[channels])?,
            moving_variance: Tensor::new(&[channels], crate::tensor::Init::Ones)?,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn momentum(&self) -> f64 {
        self.momentum
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn moving_mean(&self) -> &Tensor<T> {
        &self.moving_mean
    }
    pub fn moving_variance(&self) -> &Tensor<T> {
        &self.moving_variance
    }

    pub(crate) fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        BatchNorm {
            channels: self.channels,
            momentum: self.momentum,
            epsilon: self.epsilon,
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            moving_mean: self.moving_mean.cast(),
            moving_variance: self.moving_variance.cast(),
            cache: None,
        }
    }
}

impl<T: Scalar> LayerOp<T> for BatchNorm<T> {
    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        mode: Mode,
        _seed: u64,
        trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        let x = inputs[0];
        let c = self.channels;
        if x.rank() < 2 || x.shape()[x.rank() - 1] != c {
            return Err(Error::Shape(format!(
                "batchnorm over {c} channels got input {:?}",
                x.shape()
            )));
        }
        let m = x.len() / c;
        let eps = T::cast_from(self.epsilon);
        let batch_stats = mode == Mode::Train && trainable;
        let data = x.data();

        let (mean, var) = if batch_stats {
            let mut mean = vec![T::zero(); c];
            for row in data.chunks_exact(c) {
                for (s, &v) in mean.iter_mut().zip(row) {
                    *s += v;
                }
            }
            let count = T::cast_from(m as f64);
            mean.iter_mut().for_each(|s| *s /= count);
            let mut var = vec![T::zero(); c];
            for row in data.chunks_exact(c) {
                for ((s, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - mu;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s /= count);

            let mom = T::cast_from(self.momentum);
            let one_minus = T::cast_from(1.0 - self.momentum);
            for (mm, &mu) in self.moving_mean.data_mut().iter_mut().zip(&mean) {
                *mm = *mm * mom + mu * one_minus;
            }
            for (mv, &v) in self.moving_variance.data_mut().iter_mut().zip(&var) {
                *mv = *mv * mom + v * one_minus;
            }
            (mean, var)
        } else {
            (self.moving_mean.data().to_vec(), self.moving_variance.data().to_vec())
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut x_hat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for ((xr, hr), or) in data
            .chunks_exact(c)
            .zip(x_hat.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
        {
            for ch in 0..c {
                let h = (xr[ch] - mean[ch]) * inv_std[ch];
                hr[ch] = h;
                or[ch] = gamma[ch] * h + beta[ch];
            }
        }
        self.cache = keep_cache.then(|| BnCache {
            shape: x.shape().to_vec(),
            x_hat,
            inv_std,
            batch_stats,
        });
        Tensor::from_vec(x.shape(), out)
    }

    fn backward(&mut self, upstream: &Tensor<T>, accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batchnorm"))?;
        check_upstream("batchnorm", upstream, &cache.shape)?;
        let c = self.channels;
        let m = upstream.len() / c;
        let dy = upstream.data();

        let mut dbeta = vec![T::zero(); c];
        let mut dgamma = vec![T::zero(); c];
        for (dr, hr) in dy.chunks_exact(c).zip(cache.x_hat.chunks_exact(c)) {
            for ch in 0..c {
                dbeta[ch] += dr[ch];
                dgamma[ch] += dr[ch] * hr[ch];
            }
        }
        if accumulate {
            for (g, &d) in self.gamma.grad_mut().data_mut().iter_mut().zip(&dgamma) {
                *g += d;
            }
            for (g, &d) in self.beta.grad_mut().data_mut().iter_mut().zip(&dbeta) {
                *g += d;
            }
        }
        if !need_input_grad {
            return Ok(Vec::new());
        }
        let gamma = self.gamma.value.data();
        let mut dx = vec![T::zero(); dy.len()];
        if cache.batch_stats {
            let mf = T::cast_from(m as f64);
            let scale: Vec<T> = (0..c).map(|ch| gamma[ch] * cache.inv_std[ch] / mf).collect();
            for ((xr, dr), hr) in dx
                .chunks_exact_mut(c)
                .zip(dy.chunks_exact(c))
                .zip(cache.x_hat.chunks_exact(c))
            {
                for ch in 0..c {
                    xr[ch] = scale[ch] * (mf * dr[ch] - dbeta[ch] - hr[ch] * dgamma[ch]);
                }
            }
        } else {
            let scale: Vec<T> = (0..c).map(|ch| gamma[ch] * cache.inv_std[ch]).collect();
            for (xr, dr) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)) {
                for ch in 0..c {
                    xr[ch] = scale[ch] * dr[ch];
                }
            }
        }
        Ok(vec![Tensor::from_vec(&cache.shape, dx)?])
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    fn state(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("moving_mean", &self.moving_mean),
            ("moving_variance", &self.moving_variance),
        ]
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("moving_mean", &mut self.moving_mean),
            ("moving_variance", &mut self.moving_variance),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}
