//! Output activations, losses and the L2 weight penalty.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn rows_cols<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, k] => Ok((n, k)),
        _ => Err(Error::dim(op, t.shape(), &[0, 0])),
    }
}

/// Row-wise softmax of `[n, k]` logits. Each row is shifted by its maximum
/// before exponentiating, so very large logits do not overflow.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = rows_cols(logits, "softmax")?;
    if !logits.is_finite() {
        return Err(Error::numeric("softmax input"));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros([labels.len().max(1), classes.max(1)]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Validation(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        t.data_mut()[i * classes + l] = T::one();
    }
    Ok(t)
}

/// Index of the largest entry of each one-hot (or probability) row.
pub fn argmax_rows<T: Scalar>(t: &Tensor<T>) -> Vec<usize> {
    let k = *t.shape().last().expect("rank >= 1");
    t.data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(p − onehot) / n`.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, k) = rows_cols(logits, "cross_entropy_loss")?;
    if labels.len() != n {
        return Err(Error::dim("cross_entropy_loss labels", logits.shape(), &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Validation(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    if !logits.is_finite() {
        return Err(Error::numeric("cross-entropy logits"));
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (row, &label) in grad.data_mut().chunks_mut(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        // ln p[label] = z[label] − max − ln Σ exp(z − max)
        loss -= row[label].ln() - total.ln();
        for v in row.iter_mut() {
            *v = *v / total * inv_n;
        }
        row[label] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// `E = ½ Σ (t − o)²` with gradient `o − t`.
pub fn squared_error_loss<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if output.shape() != target.shape() {
        return Err(Error::dim("squared_error_loss", output.shape(), target.shape()));
    }
    let grad = output.sub(target)?;
    let half = T::from_f64_lossy(0.5);
    let loss = grad.data().iter().map(|&d| d * d).sum::<T>() * half;
    Ok((loss, grad))
}

/// `(λ/2) Σ w²` over the given tensors, with per-tensor gradients `λ w`.
pub fn l2_penalty<T: Scalar>(params: &[&Tensor<T>], lambda: T) -> Result<(T, Vec<Tensor<T>>)> {
    if lambda < T::zero() || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "L2 lambda must be finite and non-negative, got {lambda:?}"
        )));
    }
    let half = T::from_f64_lossy(0.5);
    let mut penalty = T::zero();
    let mut grads = Vec::with_capacity(params.len());
    for p in params {
        penalty += p.data().iter().map(|&w| w * w).sum::<T>();
        grads.push(p.scale(lambda));
    }
    Ok((penalty * lambda * half, grads))
}
