//! Epoch loop with checkpoint selection and early stopping, shared by the
//! coarse and fine stages.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{backward_step, Adam, AdamConfig, Batch, CoarseExample, FineExample, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many consecutive epochs without improvement.
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            patience: 2,
            batch_size: 32,
            lr: 1e-4,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_score: f64,
    pub improved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Criterion {
    /// Strictly lower dev loss wins.
    MinLoss,
    /// Dev accuracy at least as high as the best so far wins (later epochs
    /// are preferred on ties).
    MaxAccuracy,
}

impl Criterion {
    fn improves(self, score: f64, best: Option<f64>) -> bool {
        match (self, best) {
            (_, None) => true,
            (Criterion::MinLoss, Some(b)) => score < b,
            (Criterion::MaxAccuracy, Some(b)) => score >= b,
        }
    }
}

pub(crate) enum Prepared {
    Coarse(Vec<CoarseExample>),
    Fine {
        examples: Vec<FineExample>,
        cam_weight: f64,
    },
}

impl Prepared {
    fn batch(&self) -> Batch<'_> {
        match self {
            Prepared::Coarse(x) => Batch::Coarse(x),
            Prepared::Fine {
                examples,
                cam_weight,
            } => Batch::Fine {
                examples,
                cam_weight: *cam_weight,
            },
        }
    }
}

pub(crate) struct Outcome {
    pub best: ModelParams,
    pub best_score: f64,
    pub history: Vec<EpochLog>,
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub(crate) type Evaluator<'a> = dyn FnMut(&ModelParams) -> Result<f64> + 'a;

/// Trains `init` on `n_train` examples materialized by `prepare` (called
/// once per mini-batch with the example indices). `evaluate` scores the
/// model after each epoch; without it the last epoch is kept.
pub(crate) fn fit(
    init: ModelParams,
    n_train: usize,
    cfg: &TrainConfig,
    criterion: Criterion,
    mut prepare: impl FnMut(&[usize], &mut ChaCha8Rng) -> Result<Prepared>,
    mut evaluate: Option<&mut Evaluator<'_>>,
) -> Result<Outcome> {
    cfg.validate()?;
    if n_train == 0 {
        return Err(Error::NothingToTrain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        params.n_params(),
    );
    let mut best: Option<(ModelParams, f64)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let prepared = prepare(chunk, &mut rng)?;
            match backward_step(
                &mut params,
                prepared.batch(),
                &mut opt,
                step_seed(cfg.seed, step),
            ) {
                Ok(loss) => total += loss * chunk.len() as f64,
                Err(Error::NonFiniteLoss) => {
                    let last_good = best.map(|b| b.0).unwrap_or(params);
                    return Err(Error::Diverged {
                        epoch,
                        last_good: Box::new(last_good),
                    });
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
        let train_loss = total / n_train as f64;
        let score = match evaluate.as_mut() {
            Some(f) => f(&params)?,
            None => -(epoch as f64),
        };
        if !score.is_finite() {
            let last_good = best.map(|b| b.0).unwrap_or(params);
            return Err(Error::Diverged {
                epoch,
                last_good: Box::new(last_good),
            });
        }
        let improved = evaluate.is_none() || criterion.improves(score, best.as_ref().map(|b| b.1));
        stale = if improved { 0 } else { stale + 1 };
        if improved {
            best = Some((params.clone(), score));
        }
        info!(
            "epoch {epoch}: train loss {train_loss:.4}, dev {score:.4}{}",
            if improved { " *" } else { "" }
        );
        history.push(EpochLog {
            epoch,
            train_loss,
            dev_score: score,
            improved,
        });
        if evaluate.is_some() && stale >= cfg.patience {
            break;
        }
    }
    let (best, best_score) = best.expect("at least one epoch ran");
    Ok(Outcome {
        best,
        best_score,
        history,
    })
}
