use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CorruptionConfig, CorruptionContext, Frequency, SecondaryEvents, SnrDraw, VisualKind};
use crate::data::NoiseCategory;
use crate::rng::Stream;
use crate::{Error, Result};

/// Noise mixed into a contiguous audio span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioEvent {
    pub start: usize,
    pub len: usize,
    pub category: NoiseCategory,
    pub clip_id: String,
    /// Frame of the clip aligned with `start`; the clip is tiled as needed.
    pub clip_offset: usize,
    pub snr_db: f64,
}

/// One visual corruption over a contiguous span of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEvent {
    pub start: usize,
    pub len: usize,
    pub kind: VisualKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
}

/// Corrupted index sets plus everything needed to replay the corruption.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionPlan {
    pub frames: usize,
    /// Sorted `C^a`.
    pub c_audio: Vec<usize>,
    /// Sorted `C^v`.
    pub c_video: Vec<usize>,
    pub audio_events: Vec<AudioEvent>,
    pub video_events: Vec<VideoEvent>,
    /// Whole-utterance augmentation; its frames are not in `C^a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_augment: Option<AudioEvent>,
}

impl CorruptionPlan {
    pub fn empty(frames: usize) -> Self {
        Self {
            frames,
            ..Self::default()
        }
    }

    /// Sorted `C^a ∪ C^v`.
    pub fn union(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self.c_audio.iter().chain(&self.c_video).copied().collect();
        u.sort_unstable();
        u.dedup();
        u
    }

    /// Check index bounds and that event spans exactly tile the index sets.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, set: &[usize], spans: Vec<(usize, usize)>| -> Result<()> {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::State(format!("{name} is not strictly sorted")));
            }
            if set.last().is_some_and(|&t| t >= self.frames) {
                return Err(Error::State(format!("{name} has an index ≥ T={}", self.frames)));
            }
            let mut tiled: Vec<usize> = spans.iter().flat_map(|&(s, l)| s..s + l).collect();
            let n = tiled.len();
            tiled.sort_unstable();
            tiled.dedup();
            if tiled.len() != n {
                return Err(Error::State(format!("{name} event spans overlap")));
            }
            if tiled != set {
                return Err(Error::State(format!("{name} event spans do not tile the index set")));
            }
            Ok(())
        };
        check("C^a", &self.c_audio, self.audio_events.iter().map(|e| (e.start, e.len)).collect())?;
        check("C^v", &self.c_video, self.video_events.iter().map(|e| (e.start, e.len)).collect())?;
        if let Some(a) = &self.audio_augment {
            if a.start != 0 || a.len != self.frames {
                return Err(Error::State("audio augmentation must span the whole sequence".into()));
            }
        }
        Ok(())
    }
}

fn uniform_in(rng: &mut Stream, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Random composition of `total` into `parts` positive integers.
fn positive_composition(rng: &mut Stream, total: usize, parts: usize) -> Vec<usize> {
    debug_assert!(parts >= 1 && parts <= total);
    let mut cuts: Vec<usize> = sample(rng, total - 1, parts - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        out.push(c - prev);
        prev = c;
    }
    out
}

/// Uniform weak composition of `total` into `parts` non-negative integers.
fn weak_composition(rng: &mut Stream, total: usize, parts: usize) -> Vec<usize> {
    positive_composition(rng, total + parts, parts).into_iter().map(|x| x - 1).collect()
}

fn pick_clip(
    rng: &mut Stream,
    cfg: &CorruptionConfig,
    ctx: CorruptionContext<'_>,
) -> Result<(NoiseCategory, String, usize)> {
    let category = *cfg
        .audio_categories
        .get(rng.random_range(0..cfg.audio_categories.len()))
        .expect("validated non-empty");
    let clips = ctx.banks.category(category, cfg.split);
    if clips.is_empty() {
        return Err(Error::Config(format!("no {category} clips in the {} split", cfg.split)));
    }
    let clip = clips[rng.random_range(0..clips.len())];
    let offset = rng.random_range(0..clip.track.len());
    Ok((category, clip.id.clone(), offset))
}

/// Sample a corruption plan for a `frames`-long sequence.
///
/// Audio: one contiguous chunk of `round(r·T)` frames, `r` uniform in the
/// audio ratio range, start uniform. Video: the primary events plus any
/// secondary noise/blur events share `round(r·T)` frames split into
/// non-overlapping spans at random positions.
pub fn sample_plan(
    frames: usize,
    cfg: &CorruptionConfig,
    ctx: CorruptionContext<'_>,
    rng: &mut Stream,
) -> Result<CorruptionPlan> {
    if frames == 0 {
        return Err(Error::Argument("cannot plan corruption for T = 0".into()));
    }
    cfg.validate()?;
    let mut plan = CorruptionPlan::empty(frames);

    let augment = match cfg.audio_augment {
        Some(aug) if aug.prob > 0.0 && rng.random_bool(aug.prob) => Some(aug),
        _ => None,
    };
    if let Some(aug) = augment {
        let (category, clip_id, clip_offset) = pick_clip(rng, cfg, ctx)?;
        let snr_db = match aug.snr {
            SnrDraw::Fixed { db } => db,
            SnrDraw::Normal { mean, std } => Normal::new(mean, std).expect("validated std").sample(rng),
            SnrDraw::Uniform { low, high } => uniform_in(rng, [low, high]),
        };
        plan.audio_augment = Some(AudioEvent {
            start: 0,
            len: frames,
            category,
            clip_id,
            clip_offset,
            snr_db,
        });
    } else {
        let ratio = uniform_in(rng, cfg.audio_ratio_range);
        let len = ((ratio * frames as f64).round() as usize).min(frames);
        if len > 0 {
            let start = rng.random_range(0..=frames - len);
            let (category, clip_id, clip_offset) = pick_clip(rng, cfg, ctx)?;
            plan.audio_events.push(AudioEvent {
                start,
                len,
                category,
                clip_id,
                clip_offset,
                snr_db: cfg.snr_db,
            });
            plan.c_audio = (start..start + len).collect();
        }
    }

    let ratio = uniform_in(rng, cfg.visual_ratio_range);
    let total = ((ratio * frames as f64).round() as usize).min(frames);
    if total > 0 {
        let primary = match &cfg.visual_frequency {
            Frequency::Fixed(n) => *n as usize,
            Frequency::Choice(v) => v[rng.random_range(0..v.len())] as usize,
        };
        let mut kinds: Vec<VisualKind> = (0..primary)
            .map(|_| cfg.visual_kinds[rng.random_range(0..cfg.visual_kinds.len())])
            .collect();
        match cfg.secondary {
            SecondaryEvents::Bernoulli => {
                if rng.random_bool(cfg.gauss_or_blur_prob) {
                    kinds.push(VisualKind::GaussNoise);
                }
                if rng.random_bool(cfg.gauss_or_blur_prob) {
                    kinds.push(VisualKind::Blur);
                }
            }
            SecondaryEvents::ExactlyOne => {
                kinds.push(if rng.random_bool(0.5) { VisualKind::GaussNoise } else { VisualKind::Blur });
            }
            SecondaryEvents::Off => {}
        }
        kinds.truncate(total);
        kinds.shuffle(rng);

        let lens = positive_composition(rng, total, kinds.len());
        let gaps = weak_composition(rng, frames - total, kinds.len() + 1);
        let mut cursor = gaps[0];
        for (i, kind) in kinds.into_iter().enumerate() {
            let len = lens[i];
            let mut ev = VideoEvent {
                start: cursor,
                len,
                kind,
                patch: None,
                sigma: None,
                noise_seed: None,
                block: None,
            };
            match kind {
                VisualKind::Occlude | VisualKind::HandsOcclude => {
                    let pool = ctx.patches.pool_for(kind);
                    if pool.is_empty() {
                        return Err(Error::Config(format!("patch pool for {} is empty", kind.as_str())));
                    }
                    ev.patch = Some(rng.random_range(0..pool.len()));
                }
                VisualKind::GaussNoise => {
                    ev.sigma = Some(cfg.gauss_sigma);
                    ev.noise_seed = Some(rng.random());
                }
                VisualKind::Pixelate => ev.block = Some(cfg.pixelate_block),
                VisualKind::Blur => {}
            }
            plan.c_video.extend(cursor..cursor + len);
            plan.video_events.push(ev);
            cursor += len + gaps[i + 1];
        }
    }
    debug_assert!(plan.validate().is_ok());
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::PatchBank;
    use crate::data::{NoiseBanks, NoiseClip, Split};
    use crate::rng;
    use crate::tensor_io::HostTensor;

    pub(crate) fn tiny_banks() -> NoiseBanks {
        let clips = NoiseCategory::SEEN
            .iter()
            .map(|&c| NoiseClip {
                id: format!("{c}-0"),
                category: c,
                split: Split::Train,
                track: HostTensor::new(vec![5, 2], (0..10).map(|i| i as f32 + 1.0).collect()).unwrap(),
                sources: vec![],
            })
            .collect();
        NoiseBanks::from_clips(clips).unwrap()
    }

    #[test]
    fn compositions_sum_correctly() {
        let mut r = rng::stream(1, "c");
        for total in 1..20 {
            for parts in 1..=total {
                let p = positive_composition(&mut r, total, parts);
                assert_eq!(p.len(), parts);
                assert_eq!(p.iter().sum::<usize>(), total);
                assert!(p.iter().all(|&x| x >= 1));
            }
            let w = weak_composition(&mut r, total, 4);
            assert_eq!(w.iter().sum::<usize>(), total);
        }
    }

    #[test]
    fn zero_ratios_give_empty_sets() {
        let banks = tiny_banks();
        let patches = PatchBank::synthetic(0, 16, 16, 4);
        let ctx = CorruptionContext { banks: &banks, patches: &patches };
        let cfg = CorruptionConfig {
            visual_ratio_range: [0.0, 0.0],
            audio_ratio_range: [0.0, 0.0],
            ..CorruptionConfig::default()
        };
        let plan = sample_plan(50, &cfg, ctx, &mut rng::stream(0, "p")).unwrap();
        assert!(plan.c_audio.is_empty() && plan.c_video.is_empty());
        assert!(plan.audio_events.is_empty() && plan.video_events.is_empty());
    }

    #[test]
    fn zero_frames_is_argument_error() {
        let banks = tiny_banks();
        let patches = PatchBank::synthetic(0, 16, 16, 4);
        let ctx = CorruptionContext { banks: &banks, patches: &patches };
        let r = sample_plan(0, &CorruptionConfig::default(), ctx, &mut rng::stream(0, "p"));
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn empty_kinds_with_ratio_is_config_error() {
        let banks = tiny_banks();
        let patches = PatchBank::synthetic(0, 16, 16, 4);
        let ctx = CorruptionContext { banks: &banks, patches: &patches };
        let cfg = CorruptionConfig {
            visual_kinds: vec![],
            ..CorruptionConfig::default()
        };
        assert!(matches!(
            sample_plan(20, &cfg, ctx, &mut rng::stream(0, "p")),
            Err(Error::Config(_))
        ));
        let cfg = CorruptionConfig {
            audio_categories: vec![],
            ..CorruptionConfig::default()
        };
        assert!(matches!(
            sample_plan(20, &cfg, ctx, &mut rng::stream(0, "p")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn augmentation_leaves_audio_index_set_empty() {
        let banks = tiny_banks();
        let patches = PatchBank::synthetic(0, 16, 16, 4);
        let ctx = CorruptionContext { banks: &banks, patches: &patches };
        let cfg = CorruptionConfig {
            audio_augment: Some(super::super::AudioAugment {
                prob: 1.0,
                snr: SnrDraw::Fixed { db: 0.0 },
            }),
            ..CorruptionConfig::default()
        };
        let plan = sample_plan(40, &cfg, ctx, &mut rng::stream(3, "p")).unwrap();
        assert!(plan.c_audio.is_empty());
        let aug = plan.audio_augment.as_ref().unwrap();
        assert_eq!((aug.start, aug.len, aug.snr_db), (0, 40, 0.0));
        plan.validate().unwrap();
    }
}
