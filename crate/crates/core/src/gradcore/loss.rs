use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Max-shifted softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter_mut().for_each(|v| *v = (*v - max).exp());
    let sum: f64 = row.iter().sum();
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Row softmax plus mean cross-entropy against class indices.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(Tensor, f64)> {
    let (n, c) = logits.expect_2d("softmax_xent", Some(labels.len()), None)?;
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (row, (&label, lrow)) in probs
        .data_mut()
        .chunks_exact_mut(c)
        .zip(labels.iter().zip(logits.data().chunks_exact(c)))
    {
        let max = lrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = lrow.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss -= lrow[label] - max - log_sum;
        softmax_in_place(row);
    }
    Ok((probs, loss / n as f64))
}

/// `(probs - onehot) / N`.
pub fn softmax_xent_backward(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, c) = probs.expect_2d("softmax_xent_backward", Some(labels.len()), None)?;
    let mut d = probs.clone();
    for (row, &label) in d.data_mut().chunks_exact_mut(c).zip(labels) {
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(d)
}
