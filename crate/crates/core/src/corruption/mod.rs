//! Corruption plans and the visual/audio corruption functions.
//!
//! A [`CorruptionPlan`] fixes which frames are corrupted (`C^a`, `C^v`) and
//! how, down to the noise clip, offset, patch and noise seed, so applying a
//! logged plan replays the corruption bit for bit. Frames outside the plan's
//! index sets are never touched.

mod audio;
mod plan;
mod video;

pub use audio::{apply_audio, mix_noise_at_snr, snr_db_achieved, Mix};
pub use plan::{sample_plan, AudioEvent, CorruptionPlan, VideoEvent};
pub use video::{apply_video, blur3x3, pixelate, Patch, PatchBank, PatchPool};

use serde::{Deserialize, Serialize};

use crate::data::{NoiseBanks, NoiseCategory, PairedSequence, Split};
use crate::tensor_io::HostTensor;
use crate::{Error, Result};

/// Evaluation SNR sweep in dB.
pub const EVAL_SNRS: [f64; 5] = [-10.0, -5.0, 0.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualKind {
    Occlude,
    GaussNoise,
    Blur,
    Pixelate,
    HandsOcclude,
}

impl VisualKind {
    /// Kinds reserved for evaluation.
    pub fn is_unseen(self) -> bool {
        matches!(self, VisualKind::Pixelate | VisualKind::HandsOcclude)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VisualKind::Occlude => "occlude",
            VisualKind::GaussNoise => "gauss_noise",
            VisualKind::Blur => "blur",
            VisualKind::Pixelate => "pixelate",
            VisualKind::HandsOcclude => "hands_occlude",
        }
    }
}

/// Number of primary visual events per sequence: a fixed count or a uniform
/// choice from a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Frequency {
    Fixed(u32),
    Choice(Vec<u32>),
}

impl Default for Frequency {
    fn default() -> Self {
        Frequency::Fixed(1)
    }
}

/// How the secondary Gaussian-noise / blur events are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondaryEvents {
    /// Gaussian noise and blur each occur independently with `gauss_or_blur_prob`.
    #[default]
    Bernoulli,
    /// Exactly one of Gaussian noise or blur, chosen uniformly.
    ExactlyOne,
    Off,
}

/// SNR of a whole-utterance audio augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SnrDraw {
    Fixed { db: f64 },
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

/// Whole-utterance noise augmentation, applied instead of partial corruption
/// with probability `prob`. Augmented frames are not part of `C^a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioAugment {
    pub prob: f64,
    pub snr: SnrDraw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    pub visual_ratio_range: [f64; 2],
    pub audio_ratio_range: [f64; 2],
    pub snr_db: f64,
    /// Kinds drawn for the primary visual events.
    pub visual_kinds: Vec<VisualKind>,
    pub audio_categories: Vec<NoiseCategory>,
    pub visual_frequency: Frequency,
    pub gauss_or_blur_prob: f64,
    pub secondary: SecondaryEvents,
    pub gauss_sigma: f64,
    pub pixelate_block: usize,
    pub audio_augment: Option<AudioAugment>,
    /// Split whose noise clips the plan draws from.
    pub split: Split,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            visual_ratio_range: [0.1, 0.5],
            audio_ratio_range: [0.3, 0.5],
            snr_db: -10.0,
            visual_kinds: vec![VisualKind::Occlude],
            audio_categories: NoiseCategory::SEEN.to_vec(),
            visual_frequency: Frequency::Fixed(1),
            gauss_or_blur_prob: 0.3,
            secondary: SecondaryEvents::Bernoulli,
            gauss_sigma: 0.1,
            pixelate_block: 3,
            audio_augment: None,
            split: Split::Train,
        }
    }
}

impl CorruptionConfig {
    /// No corruption at all.
    pub fn clean() -> Self {
        Self {
            visual_ratio_range: [0.0, 0.0],
            audio_ratio_range: [0.0, 0.0],
            secondary: SecondaryEvents::Off,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("visual_ratio_range", self.visual_ratio_range), ("audio_ratio_range", self.audio_ratio_range)] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::Config(format!("{name} must satisfy 0 ≤ low ≤ high ≤ 1, got [{lo}, {hi}]")));
            }
        }
        match &self.visual_frequency {
            Frequency::Fixed(0) => return Err(Error::Config("visual_frequency must be ≥ 1".into())),
            Frequency::Choice(v) if v.is_empty() || v.contains(&0) => {
                return Err(Error::Config("visual_frequency choices must be non-empty and ≥ 1".into()))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.gauss_or_blur_prob) {
            return Err(Error::Config("gauss_or_blur_prob must be in [0, 1]".into()));
        }
        if !(self.gauss_sigma >= 0.0) || self.pixelate_block == 0 {
            return Err(Error::Config("gauss_sigma must be ≥ 0 and pixelate_block ≥ 1".into()));
        }
        if self.visual_ratio_range[1] > 0.0 && self.visual_kinds.is_empty() {
            return Err(Error::Config("nonzero visual ratio with no visual kinds".into()));
        }
        let audio_needed = self.audio_ratio_range[1] > 0.0 || self.audio_augment.is_some_and(|a| a.prob > 0.0);
        if audio_needed && self.audio_categories.is_empty() {
            return Err(Error::Config("nonzero audio corruption with no audio categories".into()));
        }
        if let Some(aug) = &self.audio_augment {
            if !(0.0..=1.0).contains(&aug.prob) {
                return Err(Error::Config("audio_augment.prob must be in [0, 1]".into()));
            }
            if let SnrDraw::Normal { std, .. } = aug.snr {
                if !(std >= 0.0) {
                    return Err(Error::Config("audio_augment SNR std must be ≥ 0".into()));
                }
            }
            if let SnrDraw::Uniform { low, high } = aug.snr {
                if !(low <= high) {
                    return Err(Error::Config("audio_augment SNR range needs low ≤ high".into()));
                }
            }
        }
        if self.split != Split::Test {
            if let Some(k) = self.visual_kinds.iter().find(|k| k.is_unseen()) {
                return Err(Error::Config(format!(
                    "visual kind {} is reserved for test-split configs",
                    k.as_str()
                )));
            }
            if let Some(c) = self.audio_categories.iter().find(|c| c.is_unseen()) {
                return Err(Error::Config(format!("noise category {c} is reserved for test-split configs")));
            }
        }
        Ok(())
    }
}

/// Shared read-only resources needed to sample and apply plans.
#[derive(Debug, Clone, Copy)]
pub struct CorruptionContext<'a> {
    pub banks: &'a NoiseBanks,
    pub patches: &'a PatchBank,
}

/// Apply a plan to both modalities of a sequence.
pub fn corrupt_sequence(
    seq: &PairedSequence,
    plan: &CorruptionPlan,
    ctx: CorruptionContext<'_>,
) -> Result<(HostTensor, HostTensor)> {
    if plan.frames != seq.len() {
        return Err(Error::Argument(format!(
            "plan for {} frames applied to {} ({} frames)",
            plan.frames,
            seq.id,
            seq.len()
        )));
    }
    let audio = apply_audio(&seq.audio, plan, ctx.banks)?;
    let video = apply_video(&seq.video, plan, ctx.patches)?;
    Ok((audio, video))
}
