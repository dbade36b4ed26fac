use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::params::NOISE_VECTOR_LEN;

/// Mean squared error over the eight normalised entries.
pub fn loss_mlp(target: &[f64; NOISE_VECTOR_LEN], predicted: &[f64; NOISE_VECTOR_LEN]) -> f64 {
    target
        .iter()
        .zip(predicted)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / NOISE_VECTOR_LEN as f64
}

/// Mean absolute error over every sample of two clips.
pub fn loss_rec(x_d: &VideoClip, x_hat: &VideoClip) -> Result<f64> {
    if x_d.shape() != x_hat.shape() {
        return Err(Error::shape(format!("{} vs {}", x_d.shape(), x_hat.shape())));
    }
    Ok(mean_abs(x_d.data(), x_hat.data()))
}

pub(crate) fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub fn loss_total(head: f64, rec: f64, lambda_head: f64, lambda_rec: f64) -> f64 {
    lambda_head * head + lambda_rec * rec
}
