use candle_core::DType;
use candle_nn::Optimizer;
use serde::{Deserialize, Serialize};

use super::{check_finite, optimizer, set_lr, AdamConfig, BatchStream, LrSchedule, Resources, RunLog};
use crate::corruption::{corrupt_sequence, sample_plan, AudioAugment, CorruptionConfig, CorruptionPlan, SnrDraw};
use crate::data::PairedSequence;
use crate::exec::{self, Exec};
use crate::model::{sample_modality_mode, AvModel, Batch, Checkpoint, ModalityMode, ModelConfig};
use crate::rng;
use crate::tensor_io::HostTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of steps spent warming up.
    pub warmup_frac: f64,
    pub lr_power: f64,
    /// Encoder receives no updates for the first `⌈frac·steps⌉` steps.
    pub freeze_encoder_frac: f64,
    pub batch_frames: usize,
    pub corruption: CorruptionConfig,
    /// Whole-utterance noise probability, SNR drawn from N(mean, std²).
    pub noise_prob: f64,
    pub noise_snr_mean: f64,
    pub noise_snr_std: f64,
    pub modality_dropout: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-3,
            weight_decay: 0.01,
            warmup_frac: 1.0 / 3.0,
            lr_power: 1.0,
            freeze_encoder_frac: 0.8,
            batch_frames: 2000,
            corruption: CorruptionConfig::default(),
            noise_prob: 0.25,
            noise_snr_mean: 0.0,
            noise_snr_std: 5.0,
            modality_dropout: 0.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_frames == 0 || !(self.lr > 0.0) || !(self.lr_power > 0.0) {
            return Err(Error::Config("finetune steps, batch_frames, lr and lr_power must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("finetune.warmup_frac must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.freeze_encoder_frac) {
            return Err(Error::Config("finetune.freeze_encoder_frac must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_prob) || !(self.noise_snr_std >= 0.0) {
            return Err(Error::Config("finetune noise_prob must be in [0, 1] and noise_snr_std ≥ 0".into()));
        }
        if self.corruption.audio_augment.is_some() {
            return Err(Error::Config(
                "set whole-utterance noise through finetune.noise_prob, not corruption.audio_augment".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.modality_dropout) {
            return Err(Error::Config("finetune.modality_dropout must be in [0, 0.5]".into()));
        }
        self.corruption.validate()
    }

    /// First step at which the encoder may change.
    pub fn freeze_boundary(&self) -> usize {
        (self.freeze_encoder_frac * self.steps as f64).ceil() as usize
    }

    pub fn effective_corruption(&self) -> CorruptionConfig {
        let mut c = self.corruption.clone();
        if self.noise_prob > 0.0 {
            c.audio_augment = Some(AudioAugment {
                prob: self.noise_prob,
                snr: SnrDraw::Normal {
                    mean: self.noise_snr_mean,
                    std: self.noise_snr_std,
                },
            });
        }
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FinetuneRecord {
    step: usize,
    lr: f64,
    encoder_frozen: bool,
    ids: Vec<String>,
    modes: Vec<ModalityMode>,
    plans: Vec<CorruptionPlan>,
    nll: f64,
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub model: AvModel,
    pub last_nll: f64,
}

impl FinetuneOutcome {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::from_model(&self.model, None, serde_json::json!({ "stage": "finetune" }))
    }
}

/// Train the decoder (and, after the freeze, the encoder) with teacher-forced
/// NLL on corrupted inputs. Starts from `init` with its heads stripped, or
/// from a random encoder when `init` is `None`.
pub fn finetune(
    cfg: &FinetuneConfig,
    model_cfg: &ModelConfig,
    train: &[PairedSequence],
    res: &Resources,
    init: Option<&Checkpoint>,
    exec: Exec,
    log: &mut RunLog,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("fine-tuning needs at least one training sequence".into()));
    }
    let mut model = match init {
        Some(ck) => {
            let mut m = ck.clone().export_for_finetune().to_model(DType::F32)?;
            m.strip_heads();
            m
        }
        None => AvModel::new(model_cfg.clone(), &[], DType::F32)?,
    };
    if model.decoder.is_none() {
        model.attach_decoder(rng::derive_seed(cfg.seed, "decoder"))?;
    }
    let corruption = cfg.effective_corruption();
    let warmup = (cfg.warmup_frac * cfg.steps as f64).round() as usize;
    let sched = LrSchedule {
        peak: cfg.lr,
        warmup,
        total: cfg.steps,
        power: cfg.lr_power,
    };
    let mut opt = optimizer(model.store.all_vars(), cfg.lr, cfg.weight_decay, &cfg.adam)?;
    let mut stream = BatchStream::new(train.iter().map(|s| s.len()).collect(), cfg.batch_frames, cfg.seed);
    let boundary = cfg.freeze_boundary();
    let ctx = res.ctx();
    let mut last_nll = f64::NAN;
    for step in 0..cfg.steps {
        let idx = stream.next_batch();
        let seqs: Vec<&PairedSequence> = idx.iter().map(|&i| &train[i]).collect();
        let prepared = exec::try_map(exec, &seqs, |s| {
            let mut r = rng::stream_parts(cfg.seed, &["finetune", &step.to_string(), &s.id]);
            let plan = sample_plan(s.len(), &corruption, ctx, &mut r)?;
            let mode = sample_modality_mode(&mut r, cfg.modality_dropout)?;
            let (a, v) = corrupt_sequence(s, &plan, ctx)?;
            Ok::<_, Error>((plan, mode, a, v))
        })?;
        let a: Vec<&HostTensor> = prepared.iter().map(|p| &p.2).collect();
        let v: Vec<&HostTensor> = prepared.iter().map(|p| &p.3).collect();
        let modes: Vec<ModalityMode> = prepared.iter().map(|p| p.1).collect();
        let batch = Batch::new(&a, &v, None, DType::F32)?;
        let frozen = step < boundary;
        let mut memory = model.encoder.forward(&batch, &modes, false)?.last;
        if frozen {
            memory = memory.detach();
        }
        let transcripts: Vec<Vec<u32>> = seqs.iter().map(|s| s.transcript.clone()).collect();
        let nll = model.decoder()?.nll(&memory, &batch.valid, &transcripts)?;
        let value = nll.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        check_finite(step, "fine-tuning NLL", value)?;
        let lr = sched.at(step);
        set_lr(&mut opt, lr);
        opt.step(&nll.backward()?)?;
        last_nll = value;
        log.write(&FinetuneRecord {
            step,
            lr,
            encoder_frozen: frozen,
            ids: seqs.iter().map(|s| s.id.clone()).collect(),
            modes,
            plans: prepared.into_iter().map(|p| p.0).collect(),
            nll: value,
        })?;
    }
    log.flush()?;
    Ok(FinetuneOutcome { model, last_nll })
}
