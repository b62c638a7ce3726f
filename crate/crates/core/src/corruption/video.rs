use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CorruptionPlan, VisualKind};
use crate::data::synth_mouth_region;
use crate::rng;
use crate::tensor_io::HostTensor;
use crate::{Error, Result};

/// An occluder image with a per-pixel opacity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f32>,
    pub opaque: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchPool {
    /// Object-like occluders used during training.
    Objects,
    /// Larger hand-like occluders reserved for evaluation.
    Hands,
}

/// Procedural occluders with disjoint train (objects) and test (hands) pools.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBank {
    pub objects: Vec<Patch>,
    pub hands: Vec<Patch>,
}

impl PatchBank {
    pub fn synthetic(seed: u64, frame_h: usize, frame_w: usize, per_pool: usize) -> Self {
        let mut rng = rng::stream(seed, "patches");
        let objects = (0..per_pool).map(|_| object_patch(&mut rng, frame_h, frame_w)).collect();
        let hands = (0..per_pool).map(|_| hand_patch(&mut rng, frame_h, frame_w)).collect();
        Self { objects, hands }
    }

    pub fn pool(&self, pool: PatchPool) -> &[Patch] {
        match pool {
            PatchPool::Objects => &self.objects,
            PatchPool::Hands => &self.hands,
        }
    }

    pub fn pool_for(&self, kind: VisualKind) -> &[Patch] {
        match kind {
            VisualKind::HandsOcclude => &self.hands,
            _ => &self.objects,
        }
    }
}

fn object_patch(rng: &mut rng::Stream, fh: usize, fw: usize) -> Patch {
    let (h, w) = ((fh / 2).max(1), (fw / 2).max(1));
    let base = rng.random_range(0.0f32..1.0);
    let alt = rng.random_range(0.0f32..1.0);
    let period = rng.random_range(1..=3usize);
    let ellipse = rng.random_bool(0.5);
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let mut pixels = Vec::with_capacity(h * w);
    let mut opaque = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            pixels.push(if ((r / period) + (c / period)) % 2 == 0 { base } else { alt });
            let inside = !ellipse || {
                let dy = (r as f32 - cy) / (h as f32 / 2.0);
                let dx = (c as f32 - cx) / (w as f32 / 2.0);
                dy * dy + dx * dx <= 1.05
            };
            opaque.push(inside);
        }
    }
    Patch { h, w, pixels, opaque }
}

fn hand_patch(rng: &mut rng::Stream, fh: usize, fw: usize) -> Patch {
    let (h, w) = ((fh / 2 + 2).min(fh), (fw / 2 + 4).min(fw));
    let skin = rng.random_range(0.65f32..0.85);
    let palm_rows = h / 2;
    let finger_w = rng.random_range(2..=3usize);
    let mut pixels = Vec::with_capacity(h * w);
    let mut opaque = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let finger = c / finger_w;
            let gap = c % finger_w == finger_w - 1;
            let in_palm = r >= h - palm_rows;
            let shade = if gap { -0.15 } else { 0.02 * finger as f32 };
            pixels.push((skin + shade).clamp(0.0, 1.0));
            opaque.push(in_palm || !gap);
        }
    }
    Patch { h, w, pixels, opaque }
}

/// Replace each `block × block` cell by its mean; edge cells may be smaller
/// and are averaged independently.
pub fn pixelate(frame: &mut [f32], h: usize, w: usize, block: usize) {
    for r0 in (0..h).step_by(block) {
        for c0 in (0..w).step_by(block) {
            let (r1, c1) = ((r0 + block).min(h), (c0 + block).min(w));
            let mut sum = 0.0f64;
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += frame[r * w + c] as f64;
                }
            }
            let mean = (sum / ((r1 - r0) * (c1 - c0)) as f64) as f32;
            for r in r0..r1 {
                for c in c0..c1 {
                    frame[r * w + c] = mean;
                }
            }
        }
    }
}

/// 3×3 box filter with edge replication.
pub fn blur3x3(frame: &mut [f32], h: usize, w: usize) {
    let src = frame.to_vec();
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        src[r * w + c] as f64
    };
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut s = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    s += at(r + dr, c + dc);
                }
            }
            frame[r as usize * w + c as usize] = (s / 9.0) as f32;
        }
    }
}

fn paste(frame: &mut [f32], h: usize, w: usize, patch: &Patch) {
    let (r0, r1, c0, c1) = synth_mouth_region(h, w);
    let top = ((r0 + r1) / 2) as isize - (patch.h / 2) as isize;
    let left = ((c0 + c1) / 2) as isize - (patch.w / 2) as isize;
    for pr in 0..patch.h {
        for pc in 0..patch.w {
            let (r, c) = (top + pr as isize, left + pc as isize);
            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                continue;
            }
            let i = pr * patch.w + pc;
            if patch.opaque[i] {
                frame[r as usize * w + c as usize] = patch.pixels[i];
            }
        }
    }
}

/// Apply the plan's visual events to a `T × H × W` track.
pub fn apply_video(video: &HostTensor, plan: &CorruptionPlan, patches: &PatchBank) -> Result<HostTensor> {
    if video.shape.len() != 3 {
        return Err(Error::Argument(format!("video must be T×H×W, got {:?}", video.shape)));
    }
    let (h, w) = (video.shape[1], video.shape[2]);
    let mut out = video.clone();
    for ev in &plan.video_events {
        if ev.start + ev.len > out.len() {
            return Err(Error::Argument(format!(
                "video event [{}, {}) exceeds T={}",
                ev.start,
                ev.start + ev.len,
                out.len()
            )));
        }
        match ev.kind {
            VisualKind::Occlude | VisualKind::HandsOcclude => {
                let pool = patches.pool_for(ev.kind);
                let idx = ev.patch.ok_or_else(|| Error::Config("occlusion event without a patch".into()))?;
                let patch = pool
                    .get(idx)
                    .ok_or_else(|| Error::Lookup(format!("patch {idx} not in the {} pool", ev.kind.as_str())))?;
                for t in ev.start..ev.start + ev.len {
                    paste(out.row_mut(t), h, w, patch);
                }
            }
            VisualKind::GaussNoise => {
                let sigma = ev.sigma.unwrap_or(0.1);
                let seed = ev.noise_seed.ok_or_else(|| Error::Config("noise event without a seed".into()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0f64, sigma).map_err(|e| Error::Config(e.to_string()))?;
                for t in ev.start..ev.start + ev.len {
                    for v in out.row_mut(t) {
                        *v = ((*v as f64 + normal.sample(&mut rng)) as f32).clamp(0.0, 1.0);
                    }
                }
            }
            VisualKind::Blur => {
                for t in ev.start..ev.start + ev.len {
                    blur3x3(out.row_mut(t), h, w);
                }
            }
            VisualKind::Pixelate => {
                let block = ev.block.unwrap_or(3);
                for t in ev.start..ev.start + ev.len {
                    pixelate(out.row_mut(t), h, w, block);
                }
            }
        }
    }
    Ok(out)
}
