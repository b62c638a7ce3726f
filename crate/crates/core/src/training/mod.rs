//! Uptraining and fine-tuning loops, schedules and the WER evaluation harness.

mod batching;
mod eval;
mod finetune;
mod log;
mod uptrain;

pub use batching::{pack_batches, BatchStream};
pub use eval::{
    corpus_wer, edit_distance, evaluate, wer, AudioCondition, CellResult, EvalCell, EvalGrid, EvalReport,
    VisualCondition,
};
pub use finetune::{finetune, FinetuneConfig, FinetuneOutcome};
pub use log::RunLog;
pub use uptrain::{batch_objective, replay_loss, uptrain, StepPlan, StepRecord, UptrainConfig, UptrainOutcome};

use std::path::Path;

use candle_core::Var;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::corruption::{CorruptionContext, PatchBank};
use crate::data::NoiseBanks;
use crate::{Error, Result};

/// Occluder patches per pool in the synthetic patch bank.
pub const PATCHES_PER_POOL: usize = 8;

/// Read-only corruption resources shared by every stage.
#[derive(Debug, Clone)]
pub struct Resources {
    pub banks: NoiseBanks,
    pub patches: PatchBank,
}

impl Resources {
    pub fn new(banks: NoiseBanks, patch_seed: u64, video_size: [usize; 2]) -> Self {
        Self {
            banks,
            patches: PatchBank::synthetic(patch_seed, video_size[0], video_size[1], PATCHES_PER_POOL),
        }
    }

    pub fn load(noise_dir: &Path, patch_seed: u64, video_size: [usize; 2]) -> Result<Self> {
        Ok(Self::new(NoiseBanks::load(noise_dir)?, patch_seed, video_size))
    }

    pub fn ctx(&self) -> CorruptionContext<'_> {
        CorruptionContext {
            banks: &self.banks,
            patches: &self.patches,
        }
    }
}

/// Linear warmup to `peak`, then polynomial decay to zero at `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
    pub power: f64,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1) as f64;
        let left = (1.0 - (step - self.warmup) as f64 / span).max(0.0);
        self.peak * left.powf(self.power)
    }
}

/// Adam-style optimizer settings shared by both loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
        }
    }
}

pub(crate) fn optimizer(vars: Vec<Var>, lr: f64, weight_decay: f64, adam: &AdamConfig) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay,
        },
    )?)
}

pub(crate) fn set_lr(opt: &mut AdamW, lr: f64) {
    opt.set_learning_rate(lr);
}

pub(crate) fn check_finite(step: usize, what: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            msg: format!("{what} is {value}"),
        })
    }
}

/// Stable hash of a parameter set; used to probe for unexpected updates.
pub fn params_hash(vars: &[(String, Var)]) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (name, v) in vars {
        h.update(name.as_bytes());
        for x in v.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()? {
            h.update(x.to_le_bytes());
        }
    }
    Ok(format!("{:x}", h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_linear_decay() {
        let s = LrSchedule { peak: 1.0, warmup: 4, total: 14, power: 1.0 };
        assert_eq!(s.at(0), 0.25);
        assert_eq!(s.at(3), 1.0);
        assert_eq!(s.at(4), 1.0);
        assert!((s.at(9) - 0.5).abs() < 1e-12);
        assert_eq!(s.at(14), 0.0);
        assert_eq!(s.at(100), 0.0);
    }
}
