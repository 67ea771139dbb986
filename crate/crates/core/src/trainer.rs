//! Mini-batch training with linear warmup and patience-based early stopping,
//! and the three-stage SIC -> SID -> SDD fine-tuning chain.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoder::{backward_from, forward, EncoderCheckpoint, EncoderError, EncoderParams, Stage};
use crate::features::FeatureSequence;
use crate::label::Label;
use crate::losses::{combined_loss, LossError, LossSetting, SclConfig};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("non-finite loss or gradient at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },
    #[error("target speaker(s) {0:?} also appear in stage 1/2 data")]
    SpeakerLeakage(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase", tag = "kind"))]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub loss_setting: LossSetting,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            warmup_steps: 200,
            batch_size: 32,
            patience_epochs: 10,
            max_epochs: 100,
            seed: 0,
            optimizer: Optimizer::default(),
            loss_setting: LossSetting::CE,
            temperature: SclConfig::default().temperature,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = TrainError::InvalidConfig;
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(bad("peak_lr must be finite and non-negative"));
        }
        if self.batch_size < 1 || (self.loss_setting.add_scl && self.batch_size < 2) {
            return Err(bad("batch_size must be at least 2 with the contrastive term"));
        }
        if self.patience_epochs < 1 {
            return Err(bad("patience_epochs must be at least 1"));
        }
        if self.max_epochs < 1 {
            return Err(bad("max_epochs must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(bad("temperature must be positive"));
        }
        Ok(())
    }

    /// Stable 64-bit digest of every field.
    pub fn digest(&self) -> u64 {
        let text = format!("{self:?}");
        let out = Sha256::digest(text.as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&out[..8]);
        u64::from_le_bytes(b)
    }
}

/// `peak_lr * min(1, step / warmup_steps)`, constant after warmup.
pub fn lr_at_step(config: &TrainConfig, step: u64) -> f64 {
    if config.warmup_steps == 0 || step >= config.warmup_steps {
        config.peak_lr
    } else {
        config.peak_lr * step as f64 / config.warmup_steps as f64
    }
}

/// One labeled training utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub speaker_id: String,
    pub label: Label,
    pub features: FeatureSequence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr_last_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    /// Parameters from the epoch with the lowest mean training loss.
    pub checkpoint: EncoderCheckpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

struct OptimizerState {
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, optimizer: &Optimizer, lr: f64, params: &mut EncoderParams, grad: &EncoderParams) {
        self.t += 1;
        let p = params.values_mut();
        let g = grad.values();
        match *optimizer {
            Optimizer::Sgd => {
                for (pi, gi) in p.iter_mut().zip(g) {
                    *pi -= lr * gi;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - libm::pow(beta1, f64::from(self.t));
                let c2 = 1.0 - libm::pow(beta2, f64::from(self.t));
                for i in 0..p.len() {
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g[i];
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g[i] * g[i];
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    p[i] -= lr * m / (libm::sqrt(v) + eps);
                }
            }
        }
        params.quantize();
    }
}

/// Splits a shuffled order into batches; a trailing singleton joins the
/// previous batch so every batch can form contrastive pairs.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() >= 2 && out[out.len() - 1].len() == 1 {
        let start = order.len() - out[out.len() - 2].len() - 1;
        out.pop();
        out.pop();
        out.push(&order[start..]);
    }
    out
}

/// Fine-tunes `init` on `data`.
///
/// The epoch loss is the summed per-utterance base loss (in dataset order)
/// plus each batch's contrastive term, divided by the dataset size. Training
/// stops after `max_epochs`, or once that loss has failed to strictly improve
/// on the best so far for `patience_epochs` consecutive epochs.
pub fn train_stage(
    init: &EncoderCheckpoint,
    data: &[Sample],
    config: &TrainConfig,
    stage: Stage,
) -> Result<StageOutcome, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let d_in = init.dims().d_in;
    if let Some(bad) = data.iter().find(|s| s.features.dim() != d_in) {
        return Err(EncoderError::DimMismatch {
            expected: d_in,
            got: bad.features.dim(),
        }
        .into());
    }

    let scl = SclConfig {
        temperature: config.temperature,
    };
    let mut rng = rng_for(config.seed, "train_stage/shuffle");
    let mut params = init.params.clone();
    let mut state = OptimizerState::new(params.values().len());
    let mut step: u64 = 0;
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut base_losses = vec![0.0; data.len()];

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut scl_total = 0.0;
        let mut lr = lr_at_step(config, step);
        for batch in batches(&order, config.batch_size) {
            let outputs = batch
                .iter()
                .map(|&i| forward(&params, &data[i].features))
                .collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<Label> = batch.iter().map(|&i| data[i].label).collect();
            let setting = if batch.len() < 2 {
                LossSetting {
                    add_scl: false,
                    ..config.loss_setting
                }
            } else {
                config.loss_setting
            };
            let (value, upstream) = combined_loss(setting, &scl, &outputs, &labels)?;
            if !value.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            for (&i, &l) in batch.iter().zip(&value.base_items) {
                base_losses[i] = l;
            }
            scl_total += value.scl;

            let mut grad = EncoderParams::zeros(params.dims());
            for ((&i, out), up) in batch.iter().zip(&outputs).zip(&upstream) {
                grad.accumulate(&backward_from(&params, &data[i].features, out, up)?);
            }
            grad.scale(1.0 / batch.len() as f64);
            if !grad.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            lr = lr_at_step(config, step);
            state.step(&config.optimizer, lr, &mut params, &grad);
            step += 1;
            if !params.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
        }
        let mean_loss = (base_losses.iter().sum::<f64>() + scl_total) / data.len() as f64;
        history.push(EpochRecord {
            epoch,
            mean_loss,
            lr_last_step: lr,
        });
        if mean_loss < best.0 {
            best = (mean_loss, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience_epochs {
                break;
            }
        }
    }

    let (_, best_params, best_epoch) = best;
    Ok(StageOutcome {
        checkpoint: EncoderCheckpoint {
            params: best_params,
            stage,
            seed: config.seed,
            config_digest: config.digest(),
            generation: init.generation + 1,
        },
        history,
        best_epoch,
    })
}

/// Data and settings for the three fine-tuning stages.
#[derive(Debug, Clone)]
pub struct StagePlan {
    /// Control speech.
    pub stage1: Vec<Sample>,
    /// Multi-speaker dysarthric speech, optionally merged with more data.
    pub stage2: Vec<Sample>,
    /// Target speaker enrollment speech.
    pub stage3: Vec<Sample>,
    pub configs: [TrainConfig; 3],
}

impl StagePlan {
    /// Target speakers must not appear in stage 1 or 2.
    pub fn check_disjoint(&self) -> Result<(), TrainError> {
        let earlier: BTreeSet<&str> = self
            .stage1
            .iter()
            .chain(&self.stage2)
            .map(|s| s.speaker_id.as_str())
            .collect();
        let leaked: BTreeSet<&str> = self
            .stage3
            .iter()
            .map(|s| s.speaker_id.as_str())
            .filter(|s| earlier.contains(s))
            .collect();
        if leaked.is_empty() {
            Ok(())
        } else {
            Err(TrainError::SpeakerLeakage(leaked.into_iter().map(String::from).collect()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreeStageOutcome {
    pub sic: StageOutcome,
    pub sid: StageOutcome,
    pub sdd: StageOutcome,
}

pub fn run_three_stage(plan: &StagePlan, init: &EncoderCheckpoint) -> Result<ThreeStageOutcome, TrainError> {
    plan.check_disjoint()?;
    let sic = train_stage(init, &plan.stage1, &plan.configs[0], Stage::Sic)?;
    let sid = train_stage(&sic.checkpoint, &plan.stage2, &plan.configs[1], Stage::Sid)?;
    let sdd = train_stage(&sid.checkpoint, &plan.stage3, &plan.configs[2], Stage::Sdd)?;
    Ok(ThreeStageOutcome { sic, sid, sdd })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        let cfg = TrainConfig {
            peak_lr: 1e-3,
            warmup_steps: 200,
            ..Default::default()
        };
        assert_eq!(lr_at_step(&cfg, 0), 0.0);
        assert_eq!(lr_at_step(&cfg, 100), 5e-4);
        assert_eq!(lr_at_step(&cfg, 200), 1e-3);
        assert_eq!(lr_at_step(&cfg, 10_000), 1e-3);
        let flat = TrainConfig {
            warmup_steps: 0,
            ..cfg
        };
        assert_eq!(lr_at_step(&flat, 0), 1e-3);
    }

    #[test]
    fn trailing_singleton_joins_previous_batch() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(batches(&order[..1], 4).len(), 1);
        assert_eq!(batches(&order[..8], 4).len(), 2);
    }

    #[test]
    fn config_validation() {
        let scl_small = TrainConfig {
            batch_size: 1,
            loss_setting: LossSetting::CE_SCL,
            ..Default::default()
        };
        assert!(scl_small.validate().is_err());
        assert!(TrainConfig { patience_epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert_ne!(TrainConfig::default().digest(), TrainConfig { seed: 1, ..Default::default() }.digest());
    }
}
