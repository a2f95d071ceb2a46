use crate::error::{Error, Result};
use crate::tensor::{axis_geometry, gemm, transpose, Init, Padding, Scalar, Tensor};

use super::{check_upstream, missing_cache, LayerOp, Mode, Param};

/// 2-D cross-correlation over NHWC input with a `(kh, kw, in, filters)`
/// kernel and per-filter bias, computed as im2col followed by a matrix
/// product.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar = f32> {
    in_channels: usize,
    filters: usize,
    kernel_size: (usize, usize),
    stride: usize,
    padding: Padding,
    kernel: Param<T>,
    bias: Param<T>,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    cols: Vec<T>,
    input_shape: [usize; 4],
    out_shape: [usize; 4],
    pad: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        filters: usize,
        kernel_size: (usize, usize),
        stride: usize,
        padding: Padding,
        seed: u64,
    ) -> Result<Self> {
        if padding == Padding::SamePreserving && stride != 1 {
            return Err(Error::Shape(format!(
                "same_preserving convolution needs stride 1, got {stride}"
            )));
        }
        let kernel = Tensor::new(
            &[kernel_size.0, kernel_size.1, in_channels, filters],
            Init::HeNormal { seed },
        )?;
        let bias = Tensor::zeros(&[filters])?;
        Ok(Conv2d {
            in_channels,
            filters,
            kernel_size,
            stride,
            padding,
            kernel: Param::new(kernel),
            bias: Param::new(bias),
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn filters(&self) -> usize {
        self.filters
    }
    pub fn kernel_size(&self) -> (usize, usize) {
        self.kernel_size
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub(crate) fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            in_channels: self.in_channels,
            filters: self.filters,
            kernel_size: self.kernel_size,
            stride: self.stride,
            padding: self.padding,
            kernel: self.kernel.cast(),
            bias: self.bias.cast(),
            cache: None,
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_size == (1, 1) && self.stride == 1
    }
}

fn im2col<T: Scalar>(
    x: &[T],
    [n, h, w, c]: [usize; 4],
    (kh, kw): (usize, usize),
    stride: usize,
    (oh, ow): (usize, usize),
    (pt, pl): (usize, usize),
) -> Vec<T> {
    let kkc = kh * kw * c;
    let mut cols = vec![T::zero(); n * oh * ow * kkc];
    let mut row = 0;
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut cols[row * kkc..(row + 1) * kkc];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pl as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * w + ix as usize) * c;
                        let off = (ky * kw + kx) * c;
                        dst[off..off + c].copy_from_slice(&x[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    [n, h, w, c]: [usize; 4],
    (kh, kw): (usize, usize),
    stride: usize,
    (oh, ow): (usize, usize),
    (pt, pl): (usize, usize),
) -> Vec<T> {
    let kkc = kh * kw * c;
    let mut x = vec![T::zero(); n * h * w * c];
    let mut row = 0;
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = &cols[row * kkc..(row + 1) * kkc];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pl as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                        let off = (ky * kw + kx) * c;
                        for ch in 0..c {
                            x[dst + ch] += src[off + ch];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

impl<T: Scalar> LayerOp<T> for Conv2d<T> {
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
                "conv2d expects (N,H,W,C) input, got {:?}",
                x.shape()
            )));
        };
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv2d expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (kh, kw) = self.kernel_size;
        let (oh, pt) = axis_geometry(h, kh, self.stride, self.padding)?;
        let (ow, pl) = axis_geometry(w, kw, self.stride, self.padding)?;
        let rows = n * oh * ow;
        let kkc = kh * kw * c;
        let f = self.filters;

        let cols = if self.is_pointwise() {
            x.data().to_vec()
        } else {
            im2col(x.data(), [n, h, w, c], (kh, kw), self.stride, (oh, ow), (pt, pl))
        };
        let mut out = vec![T::zero(); rows * f];
        gemm(rows, kkc, f, &cols, self.kernel.value.data(), &mut out);
        let bias = self.bias.value.data();
        for r in out.chunks_exact_mut(f) {
            for (v, &b) in r.iter_mut().zip(bias) {
                *v += b;
            }
        }
        self.cache = keep_cache.then_some(ConvCache {
            cols,
            input_shape: [n, h, w, c],
            out_shape: [n, oh, ow, f],
            pad: (pt, pl),
        });
        Tensor::from_vec(&[n, oh, ow, f], out)
    }

    fn backward(&mut self, upstream: &Tensor<T>, accumulate: bool, need_input_grad: bool) -> Result<Vec<Tensor<T>>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
        check_upstream("conv2d", upstream, &cache.out_shape)?;
        let [n, oh, ow, f] = cache.out_shape;
        let rows = n * oh * ow;
        let (kh, kw) = self.kernel_size;
        let kkc = kh * kw * self.in_channels;
        let dout = upstream.data();

        if accumulate {
            let cols_t = transpose(rows, kkc, &cache.cols);
            let mut dw = vec![T::zero(); kkc * f];
            gemm(kkc, rows, f, &cols_t, dout, &mut dw);
            for (g, d) in self.kernel.grad_mut().data_mut().iter_mut().zip(dw) {
                *g += d;
            }
            let db = self.bias.grad_mut().data_mut();
            for r in dout.chunks_exact(f) {
                for (g, &d) in db.iter_mut().zip(r) {
                    *g += d;
                }
            }
        }
        if !need_input_grad {
            return Ok(Vec::new());
        }
        let w_t = transpose(kkc, f, self.kernel.value.data());
        let mut dcols = vec![T::zero(); rows * kkc];
        gemm(rows, f, kkc, dout, &w_t, &mut dcols);
        let dx = if self.is_pointwise() {
            dcols
        } else {
            col2im(&dcols, cache.input_shape, (kh, kw), self.stride, (oh, ow), cache.pad)
        };
        Ok(vec![Tensor::from_vec(&cache.input_shape, dx)?])
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
