//! Per-channel batch normalization over `(N, D, H, W)`.

use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the supplied running statistics.
    Inference,
}

/// Batch statistics observed in train mode (biased variance).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) struct Normalized {
    pub output: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub stats: Option<BatchStats>,
}

fn split(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [n, c, rest @ ..] if !rest.is_empty() => Ok((*n, *c, rest.iter().product())),
        _ => Err(Error::InvalidShape(format!(
            "batchnorm expects [N, C, spatial..], got {shape:?}"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward(
    x: &[f64],
    shape: &[usize],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    epsilon: f64,
    mode: NormMode,
) -> Result<Normalized> {
    let (n, c, s) = split(shape)?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeMismatch {
            lhs: shape.to_vec(),
            rhs: vec![gamma.len()],
            context: "batchnorm channels vs gamma/beta",
        });
    }
    let count = n * s;
    let (mean, var, stats) = match mode {
        NormMode::Train => {
            if count < 2 {
                return Err(Error::InvalidShape(format!(
                    "batchnorm in train mode needs more than one value per channel, got {count}"
                )));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut acc = 0.0;
                for b in 0..n {
                    acc += x[(b * c + ch) * s..(b * c + ch + 1) * s].iter().sum::<f64>();
                }
                let m = acc / count as f64;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += x[(b * c + ch) * s..(b * c + ch + 1) * s]
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = sq / count as f64;
            }
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(stats))
        }
        NormMode::Inference => {
            if running_mean.len() != c || running_var.len() != c {
                return Err(Error::ShapeMismatch {
                    lhs: shape.to_vec(),
                    rhs: vec![running_mean.len()],
                    context: "batchnorm channels vs running statistics",
                });
            }
            (running_mean.to_vec(), running_var.to_vec(), None)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut output = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let range = (b * c + ch) * s..(b * c + ch + 1) * s;
            for i in range {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                output[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    Ok(Normalized {
        output,
        xhat,
        inv_std,
        stats,
    })
}

pub(crate) struct NormGrads {
    pub input: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub(crate) fn backward(
    dout: &[f64],
    shape: &[usize],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    mode: NormMode,
) -> NormGrads {
    let (n, c, s) = split(shape).expect("shape validated in forward");
    let count = (n * s) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            for i in (b * c + ch) * s..(b * c + ch + 1) * s {
                dgamma[ch] += dout[i] * xhat[i];
                dbeta[ch] += dout[i];
            }
        }
    }
    let mut dx = vec![0.0; dout.len()];
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] * inv_std[ch];
            for i in (b * c + ch) * s..(b * c + ch + 1) * s {
                dx[i] = match mode {
                    NormMode::Train => {
                        scale / count * (count * dout[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                    }
                    NormMode::Inference => scale * dout[i],
                };
            }
        }
    }
    NormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

/// `running <- (1 - m) * running + m * batch`.
pub fn update_running(running: &mut [f64], batch: &[f64], momentum: f64) {
    for (r, b) in running.iter_mut().zip(batch) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_standardizes_each_channel() {
        let x: Vec<f64> = (0..16).map(|i| (i * i) as f64).collect();
        let shape = [1, 2, 2, 2, 2];
        let out = forward(&x, &shape, &[1.0, 1.0], &[0.0, 0.0], &[], &[], 1e-5, NormMode::Train)
            .unwrap();
        for ch in out.output.chunks(8) {
            let mean = ch.iter().sum::<f64>() / 8.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn affine_parameters_shift_and_scale() {
        // already standardized input: mean 0, biased variance 1
        let x = [-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        let out = forward(&x, &[1, 1, 2, 2, 2], &[2.0], &[3.0], &[], &[], 1e-5, NormMode::Train)
            .unwrap();
        let mean = out.output.iter().sum::<f64>() / 8.0;
        let std = (out.output.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!((mean - 3.0).abs() < 1e-12);
        assert!((std - 2.0).abs() < 1e-4);
    }

    #[test]
    fn single_value_per_channel_is_rejected_in_train_mode() {
        let r = forward(&[1.0], &[1, 1, 1, 1, 1], &[1.0], &[0.0], &[], &[], 1e-5, NormMode::Train);
        assert!(r.is_err());
        let r = forward(
            &[1.0],
            &[1, 1, 1, 1, 1],
            &[1.0],
            &[0.0],
            &[0.0],
            &[1.0],
            1e-5,
            NormMode::Inference,
        );
        assert!(r.is_ok());
    }

    #[test]
    fn running_update_uses_momentum() {
        let mut r = vec![0.0, 1.0];
        update_running(&mut r, &[1.0, 3.0], 0.1);
        assert!((r[0] - 0.1).abs() < 1e-15);
        assert!((r[1] - 1.2).abs() < 1e-15);
    }
}
