use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 0.005,
            decay: 0.99,
            eps: 1e-8,
        }
    }
}

/// One RMSProp update of a single tensor:
/// `v ← decay·v + (1−decay)·g²`, `θ ← θ − lr·g / sqrt(v + eps)`.
pub fn rmsprop_step(
    param: &mut Tensor,
    grad: &Tensor,
    accum: &mut Tensor,
    cfg: &RmsPropConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != accum.shape() {
        return Err(Error::shape(
            "rmsprop_step",
            format!(
                "param {:?}, grad {:?}, state {:?}",
                param.shape(),
                grad.shape(),
                accum.shape()
            ),
        ));
    }
    let it = param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(accum.data_mut());
    for ((p, &g), v) in it {
        *v = cfg.decay * *v + (1.0 - cfg.decay) * g * g;
        *p -= cfg.lr * g / (*v + cfg.eps).sqrt();
    }
    Ok(())
}

/// RMSProp over an ordered list of parameter tensors; accumulators persist
/// across steps.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub cfg: RmsPropConfig,
    state: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(cfg: RmsPropConfig) -> Self {
        RmsProp {
            cfg,
            state: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "rmsprop_step",
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        if self.state.is_empty() {
            self.state = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.state) {
            rmsprop_step(p, g, v, &self.cfg)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::matrix(1, 3, vec![0.1, -0.2, 0.3]);
        let before = p.clone();
        let mut v = Tensor::zeros(&[1, 3]);
        rmsprop_step(&mut p, &Tensor::zeros(&[1, 3]), &mut v, &RmsPropConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_hand_value() {
        let cfg = RmsPropConfig {
            lr: 0.005,
            decay: 0.9,
            eps: 1e-8,
        };
        let mut p = Tensor::scalar(0.0);
        let mut v = Tensor::scalar(0.0);
        rmsprop_step(&mut p, &Tensor::scalar(1.0), &mut v, &cfg).unwrap();
        let expected = -0.005 / (0.1f64 + 1e-8).sqrt();
        assert!((p.item() - expected).abs() < 1e-15);
        assert!((p.item() + 0.015811).abs() < 1e-6);
    }

    #[test]
    fn repeated_gradient_step_converges_to_lr() {
        let cfg = RmsPropConfig {
            lr: 0.005,
            decay: 0.9,
            eps: 1e-8,
        };
        let mut opt = RmsProp::new(cfg);
        let mut p = Tensor::scalar(0.0);
        let g = [Tensor::scalar(2.5)];
        let mut last = 0.0;
        let mut step = 0.0;
        for _ in 0..400 {
            opt.step(&mut [&mut p], &g).unwrap();
            step = last - p.item();
            last = p.item();
        }
        assert!((step - 0.005).abs() < 1e-9);
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut p = Tensor::zeros(&[2, 2]);
        let mut v = Tensor::zeros(&[2, 2]);
        let err = rmsprop_step(&mut p, &Tensor::zeros(&[1, 2]), &mut v, &RmsPropConfig::default());
        assert!(err.is_err());
    }
}
