//! Cross-entropy classification loss with L2 weight regularization.

use crate::error::{Error, Result};
use crate::nn::layers::softmax_vec;
use crate::tensor::Tensor;

/// Probabilities are clamped here before the logarithm so confident wrong
/// predictions cannot produce -inf.
pub const PROB_CLAMP: f64 = 1e-12;

/// Class probabilities for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    probabilities: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Self {
        Self { probabilities: softmax_vec(logits) }
    }

    pub fn from_probabilities(probabilities: Vec<f64>) -> Result<Self> {
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::ShapeMismatch(format!(
                "probabilities must lie in [0,1] and sum to 1, got sum {sum}"
            )));
        }
        Ok(Self { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Predicted class index (0-based; ties broken by lowest index).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

fn check_one_hot(labels: &Tensor) -> Result<(usize, usize)> {
    let shape = labels.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!("labels must be [N, K], got {shape:?}")));
    }
    let (n, k) = (shape[0], shape[1]);
    for s in 0..n {
        let row = &labels.data()[s * k..(s + 1) * k];
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::ShapeMismatch(format!("labels row {s} is not one-hot")));
        }
    }
    Ok((n, k))
}

/// One-hot matrix from 0-based class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    let d = t.data_mut();
    for (s, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Dataset(format!("label {label} out of range for {classes} classes")));
        }
        d[s * classes + label] = 1.0;
    }
    Ok(t)
}

/// Batch-sum cross-entropy J = -Σ_i Σ_j t_ij ln y_ij over `[N, K]`
/// probabilities and one-hot labels.
pub fn cross_entropy(predictions: &Tensor, labels: &Tensor) -> Result<f64> {
    let (n, k) = check_one_hot(labels)?;
    if predictions.shape() != labels.shape() {
        return Err(Error::ShapeMismatch(format!(
            "predictions {:?} vs labels {:?}",
            predictions.shape(),
            labels.shape()
        )));
    }
    let y = predictions.data();
    let t = labels.data();
    let mut j = 0.0;
    for i in 0..n * k {
        if t[i] == 1.0 {
            j -= y[i].max(PROB_CLAMP).ln();
        }
    }
    Ok(j)
}

/// Gradient of the batch-sum cross-entropy with respect to the predicted
/// probabilities.
pub fn cross_entropy_backward(predictions: &Tensor, labels: &Tensor) -> Result<Tensor> {
    check_one_hot(labels)?;
    let mut grad = Tensor::zeros(predictions.shape());
    let g = grad.data_mut();
    let y = predictions.data();
    let t = labels.data();
    for i in 0..y.len() {
        if t[i] == 1.0 && y[i] > PROB_CLAMP {
            g[i] = -1.0 / y[i];
        }
    }
    Ok(grad)
}

/// ½ Σ w² over the given weight blocks.
pub fn l2_penalty<'a>(weights: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let mut acc = 0.0;
    for block in weights {
        for &w in block {
            acc += w * w;
        }
    }
    0.5 * acc
}

/// J_R = J + λ·½·Σ w². Applies to convolution and fully-connected weights;
/// biases and batch-norm parameters are excluded by the callers.
pub fn l2_regularized_loss<'a>(
    j: f64,
    weights: impl IntoIterator<Item = &'a [f64]>,
    lambda: f64,
) -> f64 {
    j + lambda * l2_penalty(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_gives_zero_loss() {
        let pred = Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let labels = one_hot(&[1], 3).unwrap();
        assert_eq!(cross_entropy(&pred, &labels).unwrap(), 0.0);
    }

    #[test]
    fn uniform_prediction_gives_ln_k() {
        let pred = Tensor::from_vec(&[1, 4], vec![0.25; 4]).unwrap();
        let labels = one_hot(&[2], 4).unwrap();
        let j = cross_entropy(&pred, &labels).unwrap();
        assert!((j - 4.0f64.ln()).abs() < 1e-12);
        assert!((j - 1.38629).abs() < 1e-5);
    }

    #[test]
    fn two_sample_sum() {
        let pred =
            Tensor::from_vec(&[2, 2], vec![0.5, 0.5, 0.25, 0.75]).unwrap();
        let labels = one_hot(&[0, 0], 2).unwrap();
        let j = cross_entropy(&pred, &labels).unwrap();
        assert!((j - (2.0f64.ln() + 4.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_one_hot_labels() {
        let pred = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        let labels = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        assert!(cross_entropy(&pred, &labels).is_err());
        let labels = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        assert!(cross_entropy(&pred, &labels).is_err());
    }

    #[test]
    fn clamp_prevents_infinite_loss() {
        let pred = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let labels = one_hot(&[0], 2).unwrap();
        let j = cross_entropy(&pred, &labels).unwrap();
        assert!(j.is_finite());
        assert!((j + PROB_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn l2_examples() {
        let blocks: Vec<Vec<f64>> = vec![vec![2.0]];
        let refs: Vec<&[f64]> = blocks.iter().map(|b| b.as_slice()).collect();
        assert_eq!(l2_regularized_loss(3.0, refs.iter().copied(), 0.0), 3.0);
        assert_eq!(l2_regularized_loss(0.0, refs.iter().copied(), 1.0), 2.0);
    }

    #[test]
    fn l2_matches_accumulation_oracle() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..7).map(|i| (i as f64) * -0.5 + 0.2).collect();
        let mut oracle = 0.0;
        for &w in a.iter().chain(&b) {
            oracle += 0.5 * w * w;
        }
        let got = l2_regularized_loss(1.5, [a.as_slice(), b.as_slice()], 0.7);
        assert!((got - (1.5 + 0.7 * oracle)).abs() < 1e-12);
    }

    #[test]
    fn prediction_invariants() {
        let p = Prediction::from_logits(&[0.0, 1.0, -1.0]);
        assert!((p.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p.argmax(), 1);
        assert!(Prediction::from_probabilities(vec![0.5, 0.6]).is_err());
    }
}
