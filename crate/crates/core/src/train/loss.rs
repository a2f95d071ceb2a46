//! Categorical cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct LossAndGrad<T: Scalar = f32> {
    /// Mean over the batch.
    pub loss: f64,
    /// Gradient with respect to the pre-softmax logits, `(probs − labels)/N`.
    pub grad: Tensor<T>,
    pub probs: Tensor<T>,
}

fn check_labels<T: Scalar>(labels: &Tensor<T>, shape: &[usize]) -> Result<()> {
    if labels.shape() != shape {
        return Err(Error::Shape(format!(
            "labels {:?} do not match predictions {shape:?}",
            labels.shape()
        )));
    }
    let c = shape[1];
    for (r, row) in labels.data().chunks_exact(c).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != c - 1 {
            return Err(Error::Label(format!("label row {r} is not one-hot")));
        }
    }
    Ok(())
}

fn batch_shape<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, c] if n > 0 && c > 0 => Ok((n, c)),
        _ => Err(Error::Shape(format!(
            "expected non-empty (N, classes), got {:?}",
            t.shape()
        ))),
    }
}

/// Loss from logits via log-sum-exp, with the logit gradient.
pub fn cross_entropy_from_logits<T: Scalar>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<LossAndGrad<T>> {
    let (n, c) = batch_shape(logits)?;
    check_labels(labels, logits.shape())?;
    let mut total = 0.0f64;
    let mut probs = Vec::with_capacity(n * c);
    for (row, lab) in logits.data().chunks_exact(c).zip(labels.data().chunks_exact(c)) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let lse = max + sum.ln();
        let target = lab.iter().position(|&v| v == T::one()).expect("checked one-hot");
        total += lse - row[target].as_f64();
        probs.extend(row.iter().map(|v| T::cast_from((v.as_f64() - lse).exp())));
    }
    let inv_n = 1.0 / n as f64;
    let grad = probs
        .iter()
        .zip(labels.data())
        .map(|(p, l)| T::cast_from((p.as_f64() - l.as_f64()) * inv_n))
        .collect();
    Ok(LossAndGrad {
        loss: total * inv_n,
        grad: Tensor::from_vec(&[n, c], grad)?,
        probs: Tensor::from_vec(&[n, c], probs)?,
    })
}

/// Loss from probabilities: `−mean log p(true class)`.
pub fn cross_entropy_loss<T: Scalar>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<f64> {
    let (n, c) = batch_shape(probs)?;
    check_labels(labels, probs.shape())?;
    let mut total = 0.0;
    for (r, (row, lab)) in probs
        .data()
        .chunks_exact(c)
        .zip(labels.data().chunks_exact(c))
        .enumerate()
    {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > 1e-5 {
            return Err(Error::Numeric(format!("probability row {r} sums to {s}")));
        }
        let target = lab.iter().position(|&v| v == T::one()).expect("checked one-hot");
        total -= row[target].as_f64().max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / n as f64)
}

/// One-hot `(N, classes)` rows from class indices.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Label(format!("class index {l} out of range 0..{classes}")));
        }
        data[r * classes + l] = T::one();
    }
    Tensor::from_vec(&[labels.len(), classes], data)
}
