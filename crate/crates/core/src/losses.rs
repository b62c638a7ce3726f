//! Masked, corrupted-prediction and cluster losses and the weighted objective.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::corruption::CorruptionPlan;
use crate::distillation::TargetBundle;
use crate::masking::MaskPlan;
use crate::model::{ModalityMode, Task};
use crate::{Error, Result};

/// Which student input a task reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRoute {
    /// Any modality mode (the masked tasks).
    Any,
    Mode(ModalityMode),
}

/// Which frames a task is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameSet {
    Masked,
    CorruptedAudio,
    CorruptedVideo,
    CorruptedAny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Features(ModalityMode),
    Clusters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub input: InputRoute,
    pub frames: FrameSet,
    pub target: TargetKind,
}

pub fn task_spec(task: Task) -> TaskSpec {
    use FrameSet::*;
    use ModalityMode::*;
    let (input, frames, target) = match task {
        Task::Mask => (InputRoute::Any, Masked, TargetKind::Features(Av)),
        Task::Mlm => (InputRoute::Any, Masked, TargetKind::Clusters),
        Task::Avcp => (InputRoute::Mode(Av), CorruptedAny, TargetKind::Features(Av)),
        Task::Acp => (InputRoute::Mode(VideoOnly), CorruptedVideo, TargetKind::Features(AudioOnly)),
        Task::Vcp => (InputRoute::Mode(AudioOnly), CorruptedAudio, TargetKind::Features(VideoOnly)),
        Task::Macp => (InputRoute::Mode(Av), CorruptedVideo, TargetKind::Features(AudioOnly)),
        Task::Mvcp => (InputRoute::Mode(Av), CorruptedAudio, TargetKind::Features(VideoOnly)),
        Task::AcpW => (InputRoute::Mode(AudioOnly), CorruptedAudio, TargetKind::Features(AudioOnly)),
        Task::VcpW => (InputRoute::Mode(VideoOnly), CorruptedVideo, TargetKind::Features(VideoOnly)),
        Task::MacpW => (InputRoute::Mode(Av), CorruptedAudio, TargetKind::Features(AudioOnly)),
        Task::MvcpW => (InputRoute::Mode(Av), CorruptedVideo, TargetKind::Features(VideoOnly)),
    };
    TaskSpec { input, frames, target }
}

/// Frames of one sequence scored by `task`.
pub fn task_frames(task: Task, plan: &CorruptionPlan, mask: &MaskPlan) -> Vec<usize> {
    match task_spec(task).frames {
        FrameSet::Masked => mask.union(),
        FrameSet::CorruptedAudio => plan.c_audio.clone(),
        FrameSet::CorruptedVideo => plan.c_video.clone(),
        FrameSet::CorruptedAny => plan.union(),
    }
}

/// Within-modal switches: when set, the λ of the cross-modal task is
/// applied to its within-modal variant instead.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WithinModal {
    pub acp: bool,
    pub vcp: bool,
    pub macp: bool,
    pub mvcp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskWeights {
    #[serde(alias = "λ_ACP")]
    pub lambda_acp: f64,
    #[serde(alias = "λ_VCP")]
    pub lambda_vcp: f64,
    #[serde(alias = "λ_MASK")]
    pub lambda_mask: f64,
    #[serde(alias = "λ_MLM")]
    pub lambda_mlm: f64,
    #[serde(alias = "λ_AVCP")]
    pub lambda_avcp: f64,
    #[serde(alias = "λ_mACP")]
    pub lambda_macp: f64,
    #[serde(alias = "λ_mVCP")]
    pub lambda_mvcp: f64,
    pub lambda_acp_w: f64,
    pub lambda_vcp_w: f64,
    pub lambda_macp_w: f64,
    pub lambda_mvcp_w: f64,
    pub within_modal: WithinModal,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            lambda_acp: 1.0,
            lambda_vcp: 1.0,
            lambda_mask: 1.0,
            lambda_mlm: 2.0,
            lambda_avcp: 0.0,
            lambda_macp: 0.0,
            lambda_mvcp: 0.0,
            lambda_acp_w: 0.0,
            lambda_vcp_w: 0.0,
            lambda_macp_w: 0.0,
            lambda_mvcp_w: 0.0,
            within_modal: WithinModal::default(),
        }
    }
}

impl TaskWeights {
    /// Only the masked-prediction objectives.
    pub fn masked_only() -> Self {
        Self {
            lambda_acp: 0.0,
            lambda_vcp: 0.0,
            ..Self::default()
        }
    }

    pub fn zero() -> Self {
        Self {
            lambda_mask: 0.0,
            lambda_mlm: 0.0,
            ..Self::masked_only()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (task, w) in self.raw() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("weight for {task} must be finite and ≥ 0, got {w}")));
            }
        }
        Ok(())
    }

    fn raw(&self) -> [(Task, f64); 11] {
        [
            (Task::Mask, self.lambda_mask),
            (Task::Mlm, self.lambda_mlm),
            (Task::Acp, self.lambda_acp),
            (Task::Vcp, self.lambda_vcp),
            (Task::Avcp, self.lambda_avcp),
            (Task::Macp, self.lambda_macp),
            (Task::Mvcp, self.lambda_mvcp),
            (Task::AcpW, self.lambda_acp_w),
            (Task::VcpW, self.lambda_vcp_w),
            (Task::MacpW, self.lambda_macp_w),
            (Task::MvcpW, self.lambda_mvcp_w),
        ]
    }

    /// Effective weight per task after applying the within-modal switches.
    pub fn effective(&self) -> BTreeMap<Task, f64> {
        let mut w: BTreeMap<Task, f64> = self.raw().into_iter().collect();
        let mut swap = |on: bool, from: Task, to: Task| {
            if on {
                let v = w.insert(from, 0.0).unwrap_or(0.0);
                *w.get_mut(&to).unwrap() += v;
            }
        };
        swap(self.within_modal.acp, Task::Acp, Task::AcpW);
        swap(self.within_modal.vcp, Task::Vcp, Task::VcpW);
        swap(self.within_modal.macp, Task::Macp, Task::MacpW);
        swap(self.within_modal.mvcp, Task::Mvcp, Task::MvcpW);
        w
    }

    /// Tasks with a positive effective weight.
    pub fn active(&self) -> Vec<Task> {
        self.effective().into_iter().filter(|&(_, w)| w > 0.0).map(|(t, _)| t).collect()
    }
}

/// One computed loss term with the number of frames it averaged over.
#[derive(Debug, Clone)]
pub struct Component {
    pub loss: Tensor,
    pub count: usize,
}

/// Mean over weighted frames of the per-frame MSE (averaged over features).
/// `pred`, `target`: `[B,T,d]`; `weights`: `[B,T]` with 0/1 entries.
pub fn frame_mse(pred: &Tensor, target: &Tensor, weights: &Tensor) -> Result<Component> {
    if pred.dims() != target.dims() {
        return Err(Error::Argument(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.dims(),
            target.dims()
        )));
    }
    let (b, t, _) = pred.dims3()?;
    if weights.dims() != [b, t] {
        return Err(Error::Argument(format!("frame weights {:?} do not match [{b},{t}]", weights.dims())));
    }
    let count = count_of(weights)?;
    if count == 0 {
        return Ok(Component { loss: zero(pred.dtype(), pred)?, count: 0 });
    }
    let per_frame = (pred - target)?.sqr()?.mean(D::Minus1)?;
    let loss = ((per_frame * weights)?.sum_all()? / count as f64)?;
    Ok(Component { loss, count })
}

/// Mean cross-entropy over weighted frames. `logits`: `[B,T,K]`; `ids`: `[B,T]` (u32).
pub fn frame_cross_entropy(logits: &Tensor, ids: &Tensor, weights: &Tensor) -> Result<Component> {
    let (b, t, _) = logits.dims3()?;
    if ids.dims() != [b, t] || weights.dims() != [b, t] {
        return Err(Error::Argument("cluster ids / weights do not match the logits".into()));
    }
    let count = count_of(weights)?;
    if count == 0 {
        return Ok(Component { loss: zero(logits.dtype(), logits)?, count: 0 });
    }
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = logp.gather(&ids.to_dtype(DType::U32)?.unsqueeze(2)?, D::Minus1)?.squeeze(D::Minus1)?;
    let loss = ((picked * weights)?.sum_all()?.neg()? / count as f64)?;
    Ok(Component { loss, count })
}

fn count_of(weights: &Tensor) -> Result<usize> {
    Ok(weights.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?.round() as usize)
}

fn zero(dtype: DType, like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::zeros((), dtype, like.device())?)
}

/// Regression or cluster loss of `task` given head outputs and teacher targets.
pub fn task_loss(task: Task, head_out: &Tensor, targets: &TargetBundle, weights: &Tensor) -> Result<Component> {
    match task_spec(task).target {
        TargetKind::Features(mode) => frame_mse(head_out, targets.get(mode)?, weights),
        TargetKind::Clusters => frame_cross_entropy(head_out, targets.cluster_ids()?, weights),
    }
}

pub fn masked_loss(pred: &Tensor, targets: &TargetBundle, weights: &Tensor) -> Result<Component> {
    task_loss(Task::Mask, pred, targets, weights)
}

pub fn avcp_loss(pred: &Tensor, targets: &TargetBundle, weights: &Tensor) -> Result<Component> {
    task_loss(Task::Avcp, pred, targets, weights)
}

pub fn acp_loss(pred: &Tensor, targets: &TargetBundle, weights: &Tensor, within_modal: bool) -> Result<Component> {
    task_loss(if within_modal { Task::AcpW } else { Task::Acp }, pred, targets, weights)
}

pub fn vcp_loss(pred: &Tensor, targets: &TargetBundle, weights: &Tensor, within_modal: bool) -> Result<Component> {
    task_loss(if within_modal { Task::VcpW } else { Task::Vcp }, pred, targets, weights)
}

pub fn macp_loss(pred: &Tensor, targets: &TargetBundle, weights: &Tensor, within_modal: bool) -> Result<Component> {
    task_loss(if within_modal { Task::MacpW } else { Task::Macp }, pred, targets, weights)
}

pub fn mvcp_loss(pred: &Tensor, targets: &TargetBundle, weights: &Tensor, within_modal: bool) -> Result<Component> {
    task_loss(if within_modal { Task::MvcpW } else { Task::Mvcp }, pred, targets, weights)
}

pub fn mlm_loss(logits: &Tensor, targets: &TargetBundle, weights: &Tensor) -> Result<Component> {
    task_loss(Task::Mlm, logits, targets, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    pub loss: f64,
    pub count: usize,
    pub weight: f64,
}

/// Scalar summary of one objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub terms: BTreeMap<String, TermRecord>,
    pub total: f64,
}

/// `Σ λ_task · loss_task` over the components; errors if a task with a
/// positive weight was not computed.
pub fn total_loss(components: &BTreeMap<Task, Component>, weights: &TaskWeights) -> Result<(Tensor, LossBundle)> {
    let eff = weights.effective();
    for (task, &w) in &eff {
        if w > 0.0 && !components.contains_key(task) {
            return Err(Error::Config(format!("weight for {task} is {w} but the loss was not computed")));
        }
    }
    let mut total: Option<Tensor> = None;
    let mut terms = BTreeMap::new();
    for (task, c) in components {
        let w = eff.get(task).copied().unwrap_or(0.0);
        let value = c.loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        terms.insert(task.as_str().to_string(), TermRecord { loss: value, count: c.count, weight: w });
        if w > 0.0 {
            let term = (&c.loss * w)?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
    }
    let total = match total {
        Some(t) => t,
        None => match components.values().next() {
            Some(c) => c.loss.zeros_like()?,
            None => Tensor::zeros((), DType::F32, &candle_core::Device::Cpu)?,
        },
    };
    let value = total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    Ok((total, LossBundle { terms, total: value }))
}
