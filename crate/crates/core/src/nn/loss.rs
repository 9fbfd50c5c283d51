//! Regression loss of the beam predictor and binary cross-entropy of the
//! domain classifier.

use crate::error::{Error, Result};

/// Probabilities are clamped to `[ε, 1 − ε]` before the logarithm.
pub const BCE_EPS: f64 = 1e-7;

/// Sum over outputs of the squared error, averaged over samples.
///
/// `predicted` and `target` hold `n` rows of `width` values.
pub fn mse_loss(predicted: &[f64], target: &[f64], width: usize) -> Result<f64> {
    check(predicted, target, width)?;
    let n = predicted.len() / width;
    let sum: f64 = predicted.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / n as f64)
}

/// Gradient of [`mse_loss`] w.r.t. `predicted`.
pub fn mse_grad(predicted: &[f64], target: &[f64], width: usize) -> Result<Vec<f64>> {
    check(predicted, target, width)?;
    let n = (predicted.len() / width) as f64;
    Ok(predicted.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

fn check(predicted: &[f64], target: &[f64], width: usize) -> Result<()> {
    if predicted.len() != target.len() || width == 0 || !predicted.len().is_multiple_of(width) || predicted.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets (width {width})",
            predicted.len(),
            target.len()
        )));
    }
    Ok(())
}

fn clamp(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// `−(1/N) Σ [y ln p + (1−y) ln(1−p)]` with natural logarithms.
pub fn bce_domain_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Shape(format!("{} probabilities vs {} labels", probs.len(), labels.len())));
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp(p);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-sum / probs.len() as f64)
}

/// Gradient of [`bce_domain_loss`] w.r.t. the probabilities; zero where the
/// clamp is active.
pub fn bce_grad(probs: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Shape(format!("{} probabilities vs {} labels", probs.len(), labels.len())));
    }
    let n = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                0.0
            } else {
                -(y / p - (1.0 - y) / (1.0 - p)) / n
            }
        })
        .collect())
}
