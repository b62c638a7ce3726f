use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use candle_nn::Optimizer;
use serde::{Deserialize, Serialize};

use super::{check_finite, optimizer, set_lr, AdamConfig, BatchStream, LrSchedule, Resources, RunLog};
use crate::corruption::{
    corrupt_sequence, sample_plan, AudioAugment, CorruptionConfig, CorruptionContext, CorruptionPlan, SnrDraw,
};
use crate::data::PairedSequence;
use crate::distillation::{build_codebook, valid_rows, Codebook, EmaConfig, TargetNeeds, TeacherState};
use crate::exec::{self, Exec};
use crate::losses::{task_frames, task_loss, task_spec, total_loss, Component, InputRoute, LossBundle, TargetKind, TaskWeights};
use crate::masking::{sample_mask_plan, MaskConfig, MaskPlan};
use crate::model::{sample_modality_mode, AvModel, Batch, Checkpoint, Encoder, ModalityMode, ModelConfig, ParamStore, Task};
use crate::rng;
use crate::tensor_io::HostTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UptrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Defaults to 5% of `steps`.
    pub warmup_steps: Option<usize>,
    pub lr_power: f64,
    /// Padded frames per batch.
    pub batch_frames: usize,
    pub corruption: CorruptionConfig,
    pub mask: MaskConfig,
    pub weights: TaskWeights,
    /// Probability of whole-utterance noise instead of a partial chunk.
    pub clean_noise_prob: f64,
    pub clean_noise_snr_db: f64,
    pub modality_dropout: f64,
    pub ema: EmaConfig,
    /// Teacher frames clustered for the codebook (at least 10 per codeword).
    pub codebook_frames: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for UptrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: 1e-4,
            weight_decay: 0.01,
            warmup_steps: None,
            lr_power: 1.0,
            batch_frames: 2000,
            corruption: CorruptionConfig::default(),
            mask: MaskConfig::default(),
            weights: TaskWeights::default(),
            clean_noise_prob: 0.25,
            clean_noise_snr_db: 0.0,
            modality_dropout: 0.25,
            ema: EmaConfig::default(),
            codebook_frames: 4000,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl UptrainConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_steps.unwrap_or(self.steps / 20)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.warmup() >= self.steps {
            return Err(Error::Config(format!(
                "uptrain needs steps > warmup_steps, got {} and {}",
                self.steps,
                self.warmup()
            )));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.lr_power > 0.0) || self.batch_frames == 0 {
            return Err(Error::Config("uptrain lr, lr_power, batch_frames must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.clean_noise_prob) {
            return Err(Error::Config("uptrain.clean_noise_prob must be in [0, 1]".into()));
        }
        if self.corruption.audio_augment.is_some() {
            return Err(Error::Config(
                "set whole-utterance noise through uptrain.clean_noise_prob, not corruption.audio_augment".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.modality_dropout) {
            return Err(Error::Config("uptrain.modality_dropout must be in [0, 0.5]".into()));
        }
        self.corruption.validate()?;
        self.mask.validate()?;
        self.weights.validate()?;
        self.ema.validate()
    }

    /// Corruption config including the whole-utterance augmentation.
    pub fn effective_corruption(&self) -> CorruptionConfig {
        let mut c = self.corruption.clone();
        if self.clean_noise_prob > 0.0 {
            c.audio_augment = Some(AudioAugment {
                prob: self.clean_noise_prob,
                snr: SnrDraw::Fixed { db: self.clean_noise_snr_db },
            });
        }
        c
    }
}

/// Everything sampled for one sequence at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub id: String,
    pub mode: ModalityMode,
    pub corruption: CorruptionPlan,
    pub mask: MaskPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub eta: f64,
    pub plans: Vec<StepPlan>,
    pub loss: LossBundle,
}

#[derive(Debug)]
pub struct UptrainOutcome {
    pub model: AvModel,
    pub teacher: TeacherState,
    pub codebook: Option<Codebook>,
    pub last_loss: Option<LossBundle>,
}

impl UptrainOutcome {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::from_model(
            &self.model,
            self.codebook.as_ref().map(|c| &c.centroids),
            serde_json::json!({ "stage": "uptrain" }),
        )
    }
}

fn sample_step_plan(
    seq: &PairedSequence,
    step: usize,
    corruption: &CorruptionConfig,
    cfg: &UptrainConfig,
    ctx: CorruptionContext<'_>,
) -> Result<StepPlan> {
    let mut r = rng::stream_parts(cfg.seed, &["uptrain", &step.to_string(), &seq.id]);
    let plan = sample_plan(seq.len(), corruption, ctx, &mut r)?;
    let mask = sample_mask_plan(seq.len(), &cfg.mask, &plan, &mut r)?;
    let mode = sample_modality_mode(&mut r, cfg.modality_dropout)?;
    Ok(StepPlan {
        id: seq.id.clone(),
        mode,
        corruption: plan,
        mask,
    })
}

/// Model for uptraining: encoder from `init` (or fresh), fresh heads.
fn initial_model(model_cfg: &ModelConfig, tasks: &[Task], init: Option<&Checkpoint>) -> Result<AvModel> {
    match init {
        None => AvModel::new(model_cfg.clone(), tasks, DType::F32),
        Some(ck) => {
            if ck.config != *model_cfg {
                return Err(Error::Config("init checkpoint model config differs from model section".into()));
            }
            let mut enc = ck.tensors.clone();
            enc.retain(|k, _| k.starts_with("encoder."));
            let mut store = ParamStore::from_tensors(enc, DType::F32)?;
            store.reseed(rng::derive_seed(model_cfg.seed, "heads"));
            let mut model = AvModel::build(model_cfg.clone(), store, tasks, false)?;
            model.store.clear_seed();
            Ok(model)
        }
    }
}

fn collect_codebook(
    teacher: &Encoder,
    train: &[PairedSequence],
    model_cfg: &ModelConfig,
    cfg: &UptrainConfig,
) -> Result<Codebook> {
    let need = cfg.codebook_frames.max(10 * model_cfg.codebook_size);
    let lengths: Vec<usize> = train.iter().map(|s| s.len()).collect();
    let batches = super::pack_batches(&lengths, cfg.batch_frames, rng::derive_seed(cfg.seed, "codebook"), 0);
    let mut rows: Vec<f32> = Vec::new();
    let d = model_cfg.d_model;
    for b in batches {
        if rows.len() / d >= need {
            break;
        }
        let seqs: Vec<&PairedSequence> = b.iter().map(|&i| &train[i]).collect();
        let batch = clean_batch(&seqs, DType::F32)?;
        let t = crate::distillation::make_targets(
            teacher,
            &batch,
            model_cfg.top_k,
            TargetNeeds { av: true, ..Default::default() },
            None,
        )?;
        rows.extend(valid_rows(t.av.as_ref().expect("av requested"), &batch.lengths)?);
    }
    build_codebook(&rows, d, model_cfg.codebook_size, rng::derive_seed(cfg.seed, "kmeans"))
}

fn clean_batch(seqs: &[&PairedSequence], dtype: DType) -> Result<Batch> {
    let a: Vec<&HostTensor> = seqs.iter().map(|s| &s.audio).collect();
    let v: Vec<&HostTensor> = seqs.iter().map(|s| &s.video).collect();
    Batch::new(&a, &v, None, dtype)
}

/// Weighted objective of one batch: teacher targets from the clean
/// sequences, one student forward over the `corrupted` inputs under the
/// plans' masks and modality modes. Runs in the model's precision.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    model: &AvModel,
    teacher: &Encoder,
    codebook: Option<&Codebook>,
    weights: &TaskWeights,
    seqs: &[&PairedSequence],
    plans: &[StepPlan],
    corrupted: &[(HostTensor, HostTensor)],
) -> Result<(Tensor, LossBundle)> {
    let tasks = weights.active();
    let mut needs = TargetNeeds::default();
    let mut need_clusters = false;
    for &t in &tasks {
        match task_spec(t).target {
            TargetKind::Features(ModalityMode::Av) => needs.av = true,
            TargetKind::Features(ModalityMode::AudioOnly) => needs.a_only = true,
            TargetKind::Features(ModalityMode::VideoOnly) => needs.v_only = true,
            TargetKind::Clusters => need_clusters = true,
        }
    }
    if need_clusters && codebook.is_none() {
        return Err(Error::State("MLM weight is positive but no codebook was built".into()));
    }
    let dtype = model.store.dtype();
    let clean = clean_batch(seqs, dtype)?;
    let targets = crate::distillation::make_targets(
        teacher,
        &clean,
        model.config.top_k,
        needs,
        if need_clusters { codebook } else { None },
    )?;
    let ca: Vec<&HostTensor> = corrupted.iter().map(|(a, _)| a).collect();
    let cv: Vec<&HostTensor> = corrupted.iter().map(|(_, v)| v).collect();
    let masks: Vec<MaskPlan> = plans.iter().map(|p| p.mask.clone()).collect();
    let student = Batch::new(&ca, &cv, Some(&masks), dtype)?;
    let modes: Vec<ModalityMode> = plans.iter().map(|p| p.mode).collect();
    let mut comps: BTreeMap<Task, Component> = BTreeMap::new();
    if !tasks.is_empty() {
        let out = model.encoder.forward(&student, &modes, true)?;
        let heads = model.heads()?;
        for &task in &tasks {
            let route = task_spec(task).input;
            let sets: Vec<Vec<usize>> = plans
                .iter()
                .map(|p| match route {
                    InputRoute::Mode(m) if m != p.mode => Vec::new(),
                    _ => task_frames(task, &p.corruption, &p.mask),
                })
                .collect();
            let w = student.frame_weights(&sets)?;
            let pred = heads.predict(task, &out.last)?;
            comps.insert(task, task_loss(task, &pred, &targets, &w)?);
        }
    }
    total_loss(&comps, weights)
}

fn corrupt_all(
    exec: Exec,
    seqs: &[&PairedSequence],
    plans: &[StepPlan],
    ctx: CorruptionContext<'_>,
) -> Result<Vec<(HostTensor, HostTensor)>> {
    let pairs: Vec<(&PairedSequence, &StepPlan)> = seqs.iter().copied().zip(plans).collect();
    exec::try_map(exec, &pairs, |(s, p)| corrupt_sequence(s, &p.corruption, ctx))
}

/// Recompute a logged step's objective for the current parameters.
pub fn replay_loss(
    model: &AvModel,
    teacher: &Encoder,
    codebook: Option<&Codebook>,
    weights: &TaskWeights,
    record: &StepRecord,
    train: &[PairedSequence],
    res: &Resources,
) -> Result<LossBundle> {
    let seqs: Vec<&PairedSequence> = record
        .plans
        .iter()
        .map(|p| {
            train
                .iter()
                .find(|s| s.id == p.id)
                .ok_or_else(|| Error::Lookup(format!("sequence {} not in training set", p.id)))
        })
        .collect::<Result<_>>()?;
    let corrupted = corrupt_all(Exec::Sequential, &seqs, &record.plans, res.ctx())?;
    Ok(batch_objective(model, teacher, codebook, weights, &seqs, &record.plans, &corrupted)?.1)
}

/// Corrupted representation learning with an EMA teacher.
pub fn uptrain(
    cfg: &UptrainConfig,
    model_cfg: &ModelConfig,
    train: &[PairedSequence],
    res: &Resources,
    init: Option<&Checkpoint>,
    exec: Exec,
    log: &mut RunLog,
) -> Result<UptrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("uptraining needs at least one training sequence".into()));
    }
    let tasks = cfg.weights.active();
    let model = initial_model(model_cfg, &tasks, init)?;
    let teacher = TeacherState::from_student(&model.store, model_cfg, cfg.ema, cfg.steps.saturating_sub(1).max(1))?;
    let codebook = if tasks.contains(&Task::Mlm) {
        Some(collect_codebook(&teacher.encoder, train, model_cfg, cfg)?)
    } else {
        None
    };
    let corruption = cfg.effective_corruption();
    let sched = LrSchedule {
        peak: cfg.lr,
        warmup: cfg.warmup(),
        total: cfg.steps,
        power: cfg.lr_power,
    };
    let mut opt = optimizer(model.store.all_vars(), cfg.lr, cfg.weight_decay, &cfg.adam)?;
    let mut stream = BatchStream::new(train.iter().map(|s| s.len()).collect(), cfg.batch_frames, cfg.seed);
    let ctx = res.ctx();
    let mut last_loss = None;
    for step in 0..cfg.steps {
        let idx = stream.next_batch();
        let seqs: Vec<&PairedSequence> = idx.iter().map(|&i| &train[i]).collect();
        let plans = exec::try_map(exec, &seqs, |s| sample_step_plan(s, step, &corruption, cfg, ctx))?;
        let corrupted = corrupt_all(exec, &seqs, &plans, ctx)?;
        let lr = sched.at(step);
        set_lr(&mut opt, lr);
        let (total, bundle) = batch_objective(&model, &teacher.encoder, codebook.as_ref(), &cfg.weights, &seqs, &plans, &corrupted)?;
        check_finite(step, "uptrain loss", bundle.total)?;
        if !tasks.is_empty() {
            let grads = total.backward()?;
            opt.step(&grads)?;
        }
        let eta = teacher.eta(step);
        teacher.ema_update(&model.store, eta)?;
        let record = StepRecord {
            step,
            lr,
            eta,
            plans,
            loss: bundle,
        };
        log.write(&record)?;
        last_loss = Some(record.loss);
    }
    log.flush()?;
    Ok(UptrainOutcome {
        model,
        teacher,
        codebook,
        last_loss,
    })
}
