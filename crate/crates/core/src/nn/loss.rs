use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `N x C` one-hot matrix.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(vec![labels.len(), num_classes]);
    for (row, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::Label(format!("label {label} outside 0..{num_classes}")));
        }
        t.data_mut()[row * num_classes + label] = 1.0;
    }
    Ok(t)
}

/// Categorical cross-entropy with natural log, averaged over the batch.
///
/// Returns the loss and the gradient with respect to the logits that
/// produced `probs` through a softmax, `(probs - targets) / N`.
pub fn cce_loss(probs: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if probs.dims() != targets.dims() || probs.dims().len() != 2 {
        return Err(Error::Shape(format!(
            "cce expects matching N x C inputs, got {:?} and {:?}",
            probs.dims(),
            targets.dims()
        )));
    }
    let (n, c) = (probs.dims()[0], probs.dims()[1]);
    if n == 0 {
        return Err(Error::Empty("loss batch"));
    }
    let mut loss = 0.0;
    for (row, (p, y)) in probs
        .data()
        .chunks_exact(c)
        .zip(targets.data().chunks_exact(c))
        .enumerate()
    {
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != c - 1 {
            return Err(Error::Label(format!("target row {row} is not one-hot: {y:?}")));
        }
        let k = y.iter().position(|&v| v == 1.0).expect("one entry is 1");
        loss -= p[k].max(f64::MIN_POSITIVE).ln();
    }
    let grad = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, y)| (p - y) / n as f64)
        .collect();
    Ok((loss / n as f64, Tensor::new(vec![n, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_uniform() {
        let y = one_hot(&[2, 0], 5).unwrap();
        let (l, g) = cce_loss(&y, &y).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let p = Tensor::filled(vec![2, 5], 0.2);
        let (l, _) = cce_loss(&p, &y).unwrap();
        assert!((l - 1.6094379124341003).abs() < 1e-12);
    }

    #[test]
    fn rejects_soft_targets() {
        let p = Tensor::filled(vec![1, 2], 0.5);
        let t = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!(matches!(cce_loss(&p, &t), Err(Error::Label(_))));
        assert!(one_hot(&[3], 3).is_err());
    }
}
