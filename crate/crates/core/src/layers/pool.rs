use crate::error::{Error, Result};
use crate::tensor::{axis_geometry, Padding, Scalar, Tensor};

use super::{check_upstream, missing_cache, LayerOp, Mode};

/// Windowed max over NHWC maps. Padded positions never win; ties go to the
/// first position in row-major window order.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pool: usize,
    stride: usize,
    padding: Padding,
    cache: Option<PoolCache>,
}

#[derive(Clone, Debug)]
struct PoolCache {
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
    out_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(pool: usize, stride: usize, padding: Padding) -> Self {
        MaxPool2d {
            pool,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn pool(&self) -> usize {
        self.pool
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn padding(&self) -> Padding {
        self.padding
    }
}

impl<T: Scalar> LayerOp<T> for MaxPool2d {
    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _mode: Mode,
        _seed: u64,
        _trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        let x = inputs[0];
        let &[n, h, w, c] = x.shape() else {
            return Err(Error::Shape(format!(
                "maxpool2d expects (N,H,W,C) input, got {:?}",
                x.shape()
            )));
        };
        let (oh, pt) = axis_geometry(h, self.pool, self.stride, self.padding)?;
        let (ow, pl) = axis_geometry(w, self.pool, self.stride, self.padding)?;
        let data = x.data();
        let mut out = vec![T::neg_infinity(); n * oh * ow * c];
        let mut argmax = vec![usize::MAX; out.len()];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = ((b * oh + oy) * ow + ox) * c;
                    let (ov, oa) = (&mut out[o..o + c], &mut argmax[o..o + c]);
                    for ky in 0..self.pool {
                        let iy = (oy * self.stride + ky) as isize - pt as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.pool {
                            let ix = (ox * self.stride + kx) as isize - pl as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = ((b * h + iy as usize) * w + ix as usize) * c;
                            for ch in 0..c {
                                let v = data[i + ch];
                                if oa[ch] == usize::MAX || v > ov[ch] {
                                    ov[ch] = v;
                                    oa[ch] = i + ch;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.cache = keep_cache.then(|| PoolCache {
            argmax,
            input_shape: x.shape().to_vec(),
            out_shape: vec![n, oh, ow, c],
        });
        Tensor::from_vec(&[n, oh, ow, c], out)
    }

    fn backward(&mut self, upstream: &Tensor<T>, _accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("maxpool2d"))?;
        check_upstream("maxpool2d", upstream, &cache.out_shape)?;
        if !need_input_grad {
            return Ok(Vec::new());
        }
        let mut dx = Tensor::zeros(&cache.input_shape)?;
        let d = dx.data_mut();
        for (&src, &g) in cache.argmax.iter().zip(upstream.data()) {
            d[src] += g;
        }
        Ok(vec![dx])
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Spatial mean: `(N,H,W,C) -> (N,C)`.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl<T: Scalar> LayerOp<T> for GlobalAvgPool {
    fn forward(
        &mut self,
        inputs: &[&Tensor<T>],
        _mode: Mode,
        _seed: u64,
        _trainable: bool,
        keep_cache: bool,
    ) -> Result<Tensor<T>> {
        let x = inputs[0];
        let &[n, h, w, c] = x.shape() else {
            return Err(Error::Shape(format!(
                "globalavgpool expects (N,H,W,C) input, got {:?}",
                x.shape()
            )));
        };
        let hw = h * w;
        let count = T::cast_from(hw as f64);
        let mut out = vec![T::zero(); n * c];
        for (b, o) in out.chunks_exact_mut(c).enumerate() {
            let img = &x.data()[b * hw * c..(b + 1) * hw * c];
            for px in img.chunks_exact(c) {
                for (s, &v) in o.iter_mut().zip(px) {
                    *s += v;
                }
            }
            o.iter_mut().for_each(|s| *s /= count);
        }
        self.input_shape = keep_cache.then(|| x.shape().to_vec());
        Tensor::from_vec(&[n, c], out)
    }

    fn backward(&mut self, upstream: &Tensor<T>, _accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| missing_cache("globalavgpool"))?;
        let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        check_upstream("globalavgpool", upstream, &[n, c])?;
        if !need_input_grad {
            return Ok(Vec::new());
        }
        let count = T::cast_from((h * w) as f64);
        let mut dx = Vec::with_capacity(n * h * w * c);
        for g in upstream.data().chunks_exact(c) {
            let scaled: Vec<T> = g.iter().map(|&v| v / count).collect();
            for _ in 0..h * w {
                dx.extend_from_slice(&scaled);
            }
        }
        Ok(vec![Tensor::from_vec(shape, dx)?])
    }

    fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}
