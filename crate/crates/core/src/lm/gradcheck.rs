use serde::Serialize;

use super::model::{batch_loss, loss_and_grad, Batch, Mode};
use super::ModelParams;
use crate::error::Result;

pub const ABS_FLOOR: f64 = 1e-6;

/// Analytic vs. central-difference gradient agreement for one tensor.
#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub rel_error: f64,
}

/// Compares the analytic gradient of `batch` with central finite differences
/// (step `h`, relative error of the per-tensor difference norm). Dropout must
/// be off for the comparison to be meaningful, so eval mode is used.
///
/// The denominator is floored at [`ABS_FLOOR`]: some gradients are exactly
/// zero (the attention key bias cancels in the softmax) and their numeric
/// estimate is pure rounding noise.
pub fn gradient_check(params: &ModelParams, batch: Batch<'_>, h: f32) -> Result<Vec<TensorCheck>> {
    let (_, analytic) = loss_and_grad(params, batch, Mode::Eval)?;
    let mut probe = params.clone();
    let mut out = Vec::new();
    for spec in params.tensors() {
        let (mut diff, mut a_norm, mut n_norm) = (0.0f64, 0.0f64, 0.0f64);
        for i in spec.range() {
            let x = params.data()[i];
            let (up, down) = (x + h, x - h);
            probe.data_mut()[i] = up;
            let lp = batch_loss(&probe, batch)?;
            probe.data_mut()[i] = down;
            let lm = batch_loss(&probe, batch)?;
            probe.data_mut()[i] = x;
            let numeric = (lp - lm) / (up as f64 - down as f64);
            diff += (numeric - analytic[i]).powi(2);
            a_norm += analytic[i].powi(2);
            n_norm += numeric.powi(2);
        }
        let (a_norm, n_norm) = (a_norm.sqrt(), n_norm.sqrt());
        let denom = (a_norm + n_norm).max(ABS_FLOOR);
        out.push(TensorCheck {
            name: spec.name.clone(),
            analytic_norm: a_norm,
            rel_error: diff.sqrt() / denom,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{CamInput, CoarseExample, FineExample, ModelConfig};

    fn tiny() -> ModelParams {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 12,
            max_len: 6,
            vocab_size: 14,
            n_aug_layers: 2,
            dropout: 0.1,
        };
        ModelParams::init(cfg, 21).unwrap()
    }

    #[test]
    fn coarse_gradients_match() {
        let m = tiny();
        let exs = [
            CoarseExample {
                ids: vec![13, 1, 12, 3],
                label: 1,
            },
            CoarseExample {
                ids: vec![13, 4, 5],
                label: 0,
            },
        ];
        for c in gradient_check(&m, Batch::Coarse(&exs), 1e-3).unwrap() {
            assert!(c.rel_error < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn fine_gradients_match_with_cam() {
        let m = tiny();
        let exs = [FineExample {
            ids: vec![1, 12, 3, 4, 5],
            target_pos: 1,
            target: 2,
            cam: Some(CamInput {
                ids: vec![12, 12, 3, 12, 5],
                positions: vec![0, 1, 3],
                targets: vec![1, 2, 4],
            }),
        }];
        let checks = gradient_check(
            &m,
            Batch::Fine {
                examples: &exs,
                cam_weight: 1.0,
            },
            1e-3,
        )
        .unwrap();
        for c in &checks {
            assert!(c.rel_error < 1e-4, "{c:?}");
        }
        assert!(checks
            .iter()
            .filter(|c| c.name.starts_with("aug."))
            .all(|c| c.analytic_norm > 0.0));
    }
}
