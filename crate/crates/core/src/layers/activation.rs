use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

use super::{check_upstream, missing_cache, LayerOp, Mode};

/// `max(x, 0)`; the subgradient at exactly 0 is 0.
#[derive(Clone, Debug, Default)]
pub struct Relu {
    cache: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> LayerOp<T> for Relu {
    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _mode: Mode,
        _seed: u64,
        _trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        let x = inputs[0];
        let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.cache = keep_cache.then(|| (x.shape().to_vec(), x.data().iter().map(|&v| v > T::zero()).collect()));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>, _accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let (shape, mask) = self.cache.as_ref().ok_or_else(|| missing_cache("relu"))?;
        check_upstream("relu", upstream, shape)?;
        if !need_input_grad {
            return Ok(Vec::new());
        }
        let dx = upstream
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Ok(vec![Tensor::from_vec(shape, dx)?])
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// `(N, ...) -> (N, product of the rest)`.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl<T: Scalar> LayerOp<T> for Flatten {
    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _mode: Mode,
        _seed: u64,
        _trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        let x = inputs[0];
        let n = x.shape()[0];
        self.input_shape = keep_cache.then(|| x.shape().to_vec());
        x.clone().reshape(&[n, x.len() / n])
    }

    fn backward(&mut self, upstream: &Tensor<T>, _accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let shape = self.input_shape.as_ref().ok_or_else(|| missing_cache("flatten"))?;
        let n = shape[0];
        check_upstream("flatten", upstream, &[n, shape.iter().product::<usize>() / n])?;
        if !need_input_grad {
            return Ok(Vec::new());
        }
        Ok(vec![upstream.clone().reshape(shape)?])
    }

    fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}

#[derive(Clone, Debug)]
enum DropoutCache {
    Identity(Vec<usize>),
    Mask(Vec<usize>, Vec<bool>),
}

/// Inverted dropout: in train mode each value is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode is the
/// identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    cache: Option<DropoutCache>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate, cache: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn scale<T: Scalar>(&self) -> T {
        T::cast_from(1.0 / (1.0 - self.rate))
    }
}

impl<T: Scalar> LayerOp<T> for Dropout {
    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        mode: Mode,
        seed: u64,
        _trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        let x = inputs[0];
        if mode == Mode::Eval || self.rate == 0.0 {
            self.cache = keep_cache.then(|| DropoutCache::Identity(x.shape().to_vec()));
            return Ok(x.clone());
        }
        let mut rng = seed::rng(seed);
        let mask: Vec<bool> = (0..x.len()).map(|_| rng.random::<f64>() >= self.rate).collect();
        let scale = self.scale::<T>();
        let out = x
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &keep)| if keep { v * scale } else { T::zero() })
            .collect();
        let out = Tensor::from_vec(x.shape(), out)?;
        self.cache = keep_cache.then(|| DropoutCache::Mask(x.shape().to_vec(), mask));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>, _accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("dropout"))?;
        let shape = match cache {
            DropoutCache::Identity(s) | DropoutCache::Mask(s, _) => s,
        };
        check_upstream("dropout", upstream, shape)?;
        if !need_input_grad {
            return Ok(Vec::new());
        }
        match cache {
            DropoutCache::Identity(_) => Ok(vec![upstream.clone()]),
            DropoutCache::Mask(shape, mask) => {
                let scale = self.scale::<T>();
                let dx = upstream
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &keep)| if keep { g * scale } else { T::zero() })
                    .collect();
                Ok(vec![Tensor::from_vec(shape, dx)?])
            }
        }
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Row-wise softmax over the trailing axis with max subtraction.
#[derive(Clone, Debug)]
pub struct Softmax<T: Scalar = f32> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Default for Softmax<T> {
    fn default() -> Self {
        Softmax { cache: None }
    }
}

impl<T: Scalar> Softmax<T> {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Softmax of each trailing-axis row.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("softmax of a shapeless tensor".into()))?;
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        let mut max = T::neg_infinity();
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::from_vec(x.shape(), out)
}

impl<T: Scalar> LayerOp<T> for Softmax<T> {
    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _mode: Mode,
        _seed: u64,
        _trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        let y = softmax_rows(inputs[0])?;
        self.cache = keep_cache.then(|| y.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor<T>, _accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let y = self.cache.as_ref().ok_or_else(|| missing_cache("softmax"))?;
        check_upstream("softmax", upstream, y.shape())?;
        if !need_input_grad {
            return Ok(Vec::new());
        }
        let c = y.shape()[y.rank() - 1];
        let mut dx = vec![T::zero(); y.len()];
        for ((dr, yr), gr) in dx
            .chunks_exact_mut(c)
            .zip(y.data().chunks_exact(c))
            .zip(upstream.data().chunks_exact(c))
        {
            let mut dot = T::zero();
            for (&g, &p) in gr.iter().zip(yr) {
                dot += g * p;
            }
            for ((d, &g), &p) in dr.iter_mut().zip(gr).zip(yr) {
                *d = p * (g - dot);
            }
        }
        Ok(vec![Tensor::from_vec(y.shape(), dx)?])
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Elementwise sum of two equally shaped inputs (residual merge).
#[derive(Clone, Debug, Default)]
pub struct Add {
    shape: Option<Vec<usize>>,
}

impl<T: Scalar> LayerOp<T> for Add {
    fn arity(&self) -> usize {
        2
    }

    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _mode: Mode,
        _seed: u64,
        _trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "add of mismatched shapes {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = a.clone();
        out.add_assign(b)?;
        self.shape = keep_cache.then(|| a.shape().to_vec());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>, _accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let shape = self.shape.as_ref().ok_or_else(|| missing_cache("add"))?;
        check_upstream("add", upstream, shape)?;
        if !need_input_grad {
            return Ok(Vec::new());
        }
        Ok(vec![upstream.clone(), upstream.clone()])
    }

    fn clear_cache(&mut self) {
        self.shape = None;
    }
}
