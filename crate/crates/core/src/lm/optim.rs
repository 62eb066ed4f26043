use serde::{Deserialize, Serialize};

use super::model::{loss_and_grad, Batch, Mode};
use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f64]) {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            *p = (*p as f64 - step) as f32;
        }
    }
}

/// One optimizer step on `batch`. Returns the pre-step loss; on a
/// non-finite loss the parameters are left untouched.
pub fn backward_step(
    params: &mut ModelParams,
    batch: Batch<'_>,
    opt: &mut Adam,
    seed: u64,
) -> Result<f64> {
    let (loss, grads) = loss_and_grad(params, batch, Mode::Train { seed })?;
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    opt.update(params.data_mut(), &grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{CoarseExample, ModelConfig};

    fn model() -> ModelParams {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_len: 8,
            vocab_size: 10,
            n_aug_layers: 2,
            dropout: 0.1,
        };
        ModelParams::init(cfg, 1).unwrap()
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut m = model();
        let before = m.clone();
        let exs = [CoarseExample {
            ids: vec![9, 1, 2],
            label: 1,
        }];
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            m.n_params(),
        );
        backward_step(&mut m, Batch::Coarse(&exs), &mut opt, 0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut m = model();
        m.tensor_mut("cls.out.b").unwrap()[0] = f32::NAN;
        let before = m.clone();
        let exs = [CoarseExample {
            ids: vec![9, 1, 2],
            label: 1,
        }];
        let mut opt = Adam::new(AdamConfig::default(), m.n_params());
        assert!(matches!(
            backward_step(&mut m, Batch::Coarse(&exs), &mut opt, 0),
            Err(Error::NonFiniteLoss)
        ));
        assert_eq!(m.data().len(), before.data().len());
        assert!(m
            .data()
            .iter()
            .zip(before.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn loss_trends_down_on_memorizable_batch() {
        let mut m = model();
        let exs: Vec<CoarseExample> = (0..8)
            .map(|i| CoarseExample {
                ids: vec![9, (i % 4) as u32, 5 + (i % 2) as u32],
                label: (i % 2) as u8,
            })
            .collect();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 3e-3,
                ..Default::default()
            },
            m.n_params(),
        );
        let losses: Vec<f64> = (0..100)
            .map(|s| backward_step(&mut m, Batch::Coarse(&exs), &mut opt, s).unwrap())
            .collect();
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[90..].iter().sum::<f64>() / 10.0;
        assert!(tail < head * 0.5, "head {head} tail {tail}");
    }
}
