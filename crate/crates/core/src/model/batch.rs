//! Padded mini-batches on the device.

use candle_core::{DType, Device, Tensor};

use crate::masking::MaskPlan;
use crate::tensor_io::HostTensor;
use crate::{Error, Result};

/// One padded batch. Frame-level tensors are `[B, T]` with 1.0 marking
/// valid (resp. masked) frames and 0.0 elsewhere.
#[derive(Debug, Clone)]
pub struct Batch {
    pub audio: Tensor,
    pub video: Tensor,
    pub valid: Tensor,
    pub mask_audio: Tensor,
    pub mask_video: Tensor,
    pub lengths: Vec<usize>,
}

impl Batch {
    /// `audio[i]` is `[T_i, d_a]`, `video[i]` is `[T_i, H, W]`.
    pub fn new(
        audio: &[&HostTensor],
        video: &[&HostTensor],
        masks: Option<&[MaskPlan]>,
        dtype: DType,
    ) -> Result<Self> {
        if audio.is_empty() || audio.len() != video.len() {
            return Err(Error::Argument(format!(
                "batch needs matching non-empty audio/video lists, got {} and {}",
                audio.len(),
                video.len()
            )));
        }
        if let Some(m) = masks {
            if m.len() != audio.len() {
                return Err(Error::Argument("one mask plan per sequence required".into()));
            }
        }
        let b = audio.len();
        let d_a = audio[0].row_len();
        let (h, w) = match video[0].shape.as_slice() {
            [_, h, w] => (*h, *w),
            s => return Err(Error::Argument(format!("video must be [T,H,W], got {s:?}"))),
        };
        let mut lengths = Vec::with_capacity(b);
        for (a, v) in audio.iter().zip(video) {
            if a.len() != v.len() {
                return Err(Error::Argument(format!(
                    "audio has {} frames but video has {}",
                    a.len(),
                    v.len()
                )));
            }
            if a.row_len() != d_a || v.shape[1..] != [h, w] || a.len() == 0 {
                return Err(Error::Argument("inconsistent feature shapes in batch".into()));
            }
            lengths.push(a.len());
        }
        let t = *lengths.iter().max().unwrap_or(&1);
        let mut a_buf = vec![0f32; b * t * d_a];
        let mut v_buf = vec![0f32; b * t * h * w];
        let mut valid = vec![0f32; b * t];
        let mut ma = vec![0f32; b * t];
        let mut mv = vec![0f32; b * t];
        for i in 0..b {
            let n = lengths[i];
            a_buf[i * t * d_a..(i * t + n) * d_a].copy_from_slice(&audio[i].data);
            v_buf[i * t * h * w..(i * t + n) * h * w].copy_from_slice(&video[i].data);
            valid[i * t..i * t + n].fill(1.0);
            if let Some(m) = masks {
                for &f in &m[i].m_audio {
                    ma[i * t + f] = 1.0;
                }
                for &f in &m[i].m_video {
                    mv[i * t + f] = 1.0;
                }
            }
        }
        let dev = Device::Cpu;
        let mk = |data: Vec<f32>, shape: &[usize]| -> Result<Tensor> {
            Ok(Tensor::from_vec(data, shape, &dev)?.to_dtype(dtype)?)
        };
        Ok(Self {
            audio: mk(a_buf, &[b, t, d_a])?,
            video: mk(v_buf, &[b, t, h, w])?,
            valid: mk(valid, &[b, t])?,
            mask_audio: mk(ma, &[b, t])?,
            mask_video: mk(mv, &[b, t])?,
            lengths,
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.valid.dims()[1]
    }

    pub fn dtype(&self) -> DType {
        self.valid.dtype()
    }

    pub fn has_mask(&self) -> Result<bool> {
        let total = (self.mask_audio.sum_all()? + self.mask_video.sum_all()?)?;
        Ok(total.to_dtype(DType::F64)?.to_scalar::<f64>()? > 0.0)
    }

    /// `[B, T]` indicator tensor of the given per-sequence frame sets.
    pub fn frame_weights(&self, sets: &[Vec<usize>]) -> Result<Tensor> {
        frame_weights(&self.lengths, self.max_len(), sets, self.dtype())
    }
}

pub fn frame_weights(lengths: &[usize], t: usize, sets: &[Vec<usize>], dtype: DType) -> Result<Tensor> {
    if sets.len() != lengths.len() {
        return Err(Error::Argument(format!(
            "{} frame sets for a batch of {}",
            sets.len(),
            lengths.len()
        )));
    }
    let mut w = vec![0f32; lengths.len() * t];
    for (i, set) in sets.iter().enumerate() {
        for &f in set {
            if f >= lengths[i] {
                return Err(Error::Argument(format!(
                    "frame {f} out of range for sequence of length {}",
                    lengths[i]
                )));
            }
            w[i * t + f] = 1.0;
        }
    }
    Ok(Tensor::from_vec(w, (lengths.len(), t), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Per-sequence keep factors `[B, 1, 1]`.
pub fn keep_factors(keep: &[bool], dtype: DType) -> Result<Tensor> {
    let v: Vec<f32> = keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(v, (keep.len(), 1, 1), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, fill: f32) -> (HostTensor, HostTensor) {
        (
            HostTensor::new(vec![t, 2], vec![fill; t * 2]).unwrap(),
            HostTensor::new(vec![t, 2, 2], vec![fill; t * 4]).unwrap(),
        )
    }

    #[test]
    fn pads_and_marks_masks() {
        let (a1, v1) = seq(2, 1.0);
        let (a2, v2) = seq(3, 2.0);
        let masks = vec![
            MaskPlan { m_audio: vec![1], m_video: vec![] },
            MaskPlan { m_audio: vec![], m_video: vec![0, 2] },
        ];
        let b = Batch::new(&[&a1, &a2], &[&v1, &v2], Some(&masks), DType::F32).unwrap();
        assert_eq!(b.audio.dims(), &[2, 3, 2]);
        assert_eq!(b.valid.to_vec2::<f32>().unwrap(), vec![vec![1., 1., 0.], vec![1., 1., 1.]]);
        assert_eq!(b.mask_audio.to_vec2::<f32>().unwrap()[0], vec![0., 1., 0.]);
        assert_eq!(b.mask_video.to_vec2::<f32>().unwrap()[1], vec![1., 0., 1.]);
        assert_eq!(b.audio.to_vec3::<f32>().unwrap()[0][2], vec![0., 0.]);
        assert!(b.has_mask().unwrap());
    }

    #[test]
    fn rejects_length_mismatch() {
        let (a, _) = seq(2, 0.0);
        let (_, v) = seq(3, 0.0);
        assert!(matches!(Batch::new(&[&a], &[&v], None, DType::F32), Err(Error::Argument(_))));
    }
}
