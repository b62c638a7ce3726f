//! Masked-frame plans for the masked prediction task.
//!
//! Mask segments are laid down after corruption: any proposed frame that is
//! already corrupted in either modality is dropped rather than moved, so the
//! effective masking ratio ends up well below the nominal probability.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corruption::CorruptionPlan;
use crate::rng::Stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub audio_mask_prob: f64,
    pub video_mask_prob: f64,
    pub audio_segment_len: usize,
    pub video_segment_len: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            audio_mask_prob: 0.8,
            video_mask_prob: 0.3,
            audio_segment_len: 10,
            video_segment_len: 5,
        }
    }
}

impl MaskConfig {
    pub fn none() -> Self {
        Self {
            audio_mask_prob: 0.0,
            video_mask_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("audio_mask_prob", self.audio_mask_prob), ("video_mask_prob", self.video_mask_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.audio_segment_len == 0 || self.video_segment_len == 0 {
            return Err(Error::Config("mask segment lengths must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskPlan {
    /// Sorted `M^a`.
    pub m_audio: Vec<usize>,
    /// Sorted `M^v`.
    pub m_video: Vec<usize>,
}

impl MaskPlan {
    /// Sorted `M^a ∪ M^v`.
    pub fn union(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.m_audio.iter().chain(&self.m_video).copied().collect();
        set.into_iter().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.m_audio.is_empty() && self.m_video.is_empty()
    }

    /// `(M^a ∪ M^v) ∩ (C^a ∪ C^v) = ∅` and all indices below `T`.
    pub fn check_disjoint(&self, plan: &CorruptionPlan) -> Result<()> {
        let corrupted: BTreeSet<usize> = plan.union().into_iter().collect();
        for t in self.union() {
            if t >= plan.frames {
                return Err(Error::State(format!("mask index {t} ≥ T={}", plan.frames)));
            }
            if corrupted.contains(&t) {
                return Err(Error::State(format!("frame {t} is both masked and corrupted")));
            }
        }
        Ok(())
    }
}

fn propose(frames: usize, prob: f64, seg: usize, rng: &mut Stream, blocked: &BTreeSet<usize>) -> Vec<usize> {
    if prob <= 0.0 {
        return Vec::new();
    }
    let seg = seg.min(frames);
    let starts = (prob * frames as f64 / seg as f64).round() as usize;
    let mut picked = BTreeSet::new();
    for _ in 0..starts {
        let s = rng.random_range(0..=frames - seg);
        picked.extend((s..s + seg).filter(|t| !blocked.contains(t)));
    }
    picked.into_iter().collect()
}

/// Sample `M^a` and `M^v` for a sequence already corrupted by `plan`.
///
/// `round(prob·T / segment_len)` segment starts are drawn uniformly with
/// replacement (overlaps merge), which proposes about `prob·T` frames per
/// modality before collisions with `C^a ∪ C^v` are discarded.
pub fn sample_mask_plan(frames: usize, cfg: &MaskConfig, plan: &CorruptionPlan, rng: &mut Stream) -> Result<MaskPlan> {
    if frames == 0 {
        return Err(Error::Argument("cannot mask a sequence with T = 0".into()));
    }
    cfg.validate()?;
    if plan.frames != frames {
        return Err(Error::Argument(format!("corruption plan covers {} frames, not {frames}", plan.frames)));
    }
    let blocked: BTreeSet<usize> = plan.union().into_iter().collect();
    let m_audio = propose(frames, cfg.audio_mask_prob, cfg.audio_segment_len, rng, &blocked);
    let m_video = propose(frames, cfg.video_mask_prob, cfg.video_segment_len, rng, &blocked);
    Ok(MaskPlan { m_audio, m_video })
}

/// `(|M^a| / T, |M^v| / T)`.
pub fn effective_ratios(mask: &MaskPlan, frames: usize) -> Result<(f64, f64)> {
    if frames == 0 {
        return Err(Error::Argument("T must be ≥ 1".into()));
    }
    Ok((
        mask.m_audio.len() as f64 / frames as f64,
        mask.m_video.len() as f64 / frames as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_probs_give_empty_plan() {
        let m = sample_mask_plan(40, &MaskConfig::none(), &CorruptionPlan::empty(40), &mut rng::stream(0, "m")).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn fully_corrupted_audio_blocks_all_masks() {
        let plan = CorruptionPlan {
            frames: 30,
            c_audio: (0..30).collect(),
            ..CorruptionPlan::default()
        };
        let cfg = MaskConfig {
            audio_mask_prob: 1.0,
            video_mask_prob: 1.0,
            ..MaskConfig::default()
        };
        for s in 0..20 {
            let m = sample_mask_plan(30, &cfg, &plan, &mut rng::stream(s, "m")).unwrap();
            assert!(m.m_audio.is_empty() && m.m_video.is_empty());
        }
    }

    #[test]
    fn ratios_by_definition() {
        let m = MaskPlan {
            m_audio: vec![],
            m_video: (0..25).collect(),
        };
        assert_eq!(effective_ratios(&m, 100).unwrap(), (0.0, 0.25));
        assert!(effective_ratios(&m, 0).is_err());
    }

    #[test]
    fn short_sequences_clip_segments() {
        let m = sample_mask_plan(
            3,
            &MaskConfig {
                audio_mask_prob: 1.0,
                ..MaskConfig::default()
            },
            &CorruptionPlan::empty(3),
            &mut rng::stream(1, "m"),
        )
        .unwrap();
        assert_eq!(m.m_audio, vec![0, 1, 2]);
    }
}
