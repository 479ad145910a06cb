use crate::arch::NamedTensor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[NamedTensor], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One Adam update with bias correction. Validates every gradient before
/// touching any parameter, so a failed step leaves everything unchanged.
pub fn adam_step(params: &mut [NamedTensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidShape(format!(
            "adam_step got {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                lhs: p.value.shape().to_vec(),
                rhs: g.shape().to_vec(),
                context: "adam_step parameter vs gradient",
            });
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of '{}' is {} at index {i}",
                p.name,
                g.data()[i]
            )));
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.t += 1;
    let t = state.t.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (pd, gd) = (p.value.data_mut(), g.data());
        for (i, (&gi, (mi, vi))) in gd.iter().zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut())).enumerate() {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            pd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> Vec<NamedTensor> {
        vec![NamedTensor {
            name: "w".into(),
            value: Tensor::scalar(v),
        }]
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = param(1.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[Tensor::scalar(0.5)], &mut s).unwrap();
        let expected = 1.0 - 0.001 * (0.5 / (0.5 + 1e-8));
        assert!((p[0].value.item().unwrap() - expected).abs() < 1e-15);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_bit_identical() {
        let mut p = param(0.123456789);
        let before = p.clone();
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut s).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = param(1.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let g = Tensor::from_parts(vec![], vec![f64::NAN]);
        let err = adam_step(&mut p, &[g], &mut s).unwrap_err();
        assert!(err.to_string().contains("'w'"), "{err}");
        assert_eq!(s.t, 0);
    }
}
