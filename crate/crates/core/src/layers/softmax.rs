use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Tensor::from_parts(logits.shape().to_vec(), exps.into_iter().map(|e| e / total).collect())
}

fn check_label(k: usize, label: usize) -> Result<()> {
    if label >= k {
        return Err(Error::invalid(format!("label {label} out of range for {k} classes")));
    }
    Ok(())
}

/// Returns `(−ln probs[label], probs)`.
pub fn softmax_xent_forward<T: Real>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    check_label(logits.len(), label)?;
    let top = (0..logits.len()).fold(0, |b, i| if logits.data()[i] > logits.data()[b] { i } else { b });
    let max = logits.data()[top];
    let shifted: Vec<T> = logits.data().iter().map(|&v| v - max).collect();
    // the max term is exactly 1; ln_1p keeps precision when the rest is tiny
    let rest: T = shifted.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, &v)| v.exp()).sum();
    let loss = rest.ln_1p() - shifted[label];
    Ok((loss, softmax(logits)))
}

/// `probs − onehot(label)`.
pub fn softmax_xent_backward<T: Real>(probs: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
    check_label(probs.len(), label)?;
    let mut d = probs.clone();
    d.data_mut()[label] -= T::one();
    Ok(d)
}
