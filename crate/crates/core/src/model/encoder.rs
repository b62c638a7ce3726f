//! Feature extractors, fusion and transformer blocks.

use candle_core::{Tensor, D};

use super::batch::{keep_factors, Batch};
use super::nn::{key_padding_bias, sinusoidal, Attention, FeedForward, LayerNorm, Linear};
use super::params::{Init, ParamPath};
use super::{ModalityMode, ModelConfig};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Output of every block, `[B, T, d]` each.
    pub layer_states: Vec<Tensor>,
    /// Final normalized states `[B, T, d]`.
    pub last: Tensor,
}

impl EncoderOutput {
    /// Mean of the last `k` block outputs.
    pub fn top_k_mean(&self, k: usize) -> Result<Tensor> {
        let l = self.layer_states.len();
        if k == 0 || k > l {
            return Err(Error::Config(format!("top_k {k} outside 1..={l}")));
        }
        let mut acc = self.layer_states[l - k].clone();
        for s in &self.layer_states[l - k + 1..] {
            acc = (acc + s)?;
        }
        Ok((acc / k as f64)?)
    }
}

#[derive(Debug, Clone)]
struct Conv {
    weight: Tensor,
    bias: Tensor,
}

impl Conv {
    fn new(p: &mut ParamPath<'_>, c_in: usize, c_out: usize) -> Result<Self> {
        let fan_in = c_in * 9;
        Ok(Self {
            weight: p.get("weight", &[c_out, c_in, 3, 3], Init::FanIn(fan_in))?,
            bias: p.get("bias", &[c_out], Init::FanIn(fan_in))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.bias.dims()[0];
        let y = x.conv2d(&self.weight, 1, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
struct VideoExtractor {
    convs: Vec<Conv>,
    proj: Linear,
    norm: [f64; 2],
}

impl VideoExtractor {
    fn new(p: &mut ParamPath<'_>, cfg: &ModelConfig) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c_in = 1;
        let (mut h, mut w) = (cfg.video_size[0], cfg.video_size[1]);
        for (i, &c) in cfg.video_conv_channels.iter().enumerate() {
            convs.push(Conv::new(&mut p.pp(format!("conv{i}")), c_in, c)?);
            c_in = c;
            h /= 2;
            w /= 2;
        }
        let proj = Linear::new(&mut p.pp("proj"), c_in * h * w, cfg.d_model / 2)?;
        Ok(Self { convs, proj, norm: cfg.video_norm })
    }

    /// `[B, T, H, W]` to `[B, T, d/2]`.
    fn forward(&self, video: &Tensor) -> Result<Tensor> {
        let (b, t, h, w) = video.dims4()?;
        let mut x = video.reshape((b * t, 1, h, w))?.affine(1.0 / self.norm[1], -self.norm[0] / self.norm[1])?;
        for conv in &self.convs {
            x = conv.forward(&x)?.gelu_erf()?.avg_pool2d(2)?;
        }
        let x = x.flatten_from(1)?.reshape((b, t, ()))?;
        self.proj.forward(&x)
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff: FeedForward,
}

impl Block {
    fn new(p: &mut ParamPath<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            ln1: LayerNorm::new(&mut p.pp("ln1"), d)?,
            attn: Attention::new(&mut p.pp("attn"), d, cfg.n_heads)?,
            ln2: LayerNorm::new(&mut p.pp("ln2"), d)?,
            ff: FeedForward::new(&mut p.pp("ff"), d, d * cfg.ff_mult)?,
        })
    }

    fn forward(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, Some(bias))?)?;
        let h = self.ln2.forward(&x)?;
        Ok((&x + self.ff.forward(&h)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    audio: Linear,
    video: VideoExtractor,
    ln_audio: LayerNorm,
    ln_video: LayerNorm,
    mask_audio: Tensor,
    mask_video: Tensor,
    fusion: Linear,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    d_model: usize,
}

impl Encoder {
    pub fn new(p: &mut ParamPath<'_>, cfg: &ModelConfig) -> Result<Self> {
        let half = cfg.d_model / 2;
        let blocks = (0..cfg.n_blocks)
            .map(|i| Block::new(&mut p.pp(format!("block{i}")), cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            audio: Linear::new(&mut p.pp("audio"), cfg.audio_dim, half)?,
            video: VideoExtractor::new(&mut p.pp("video"), cfg)?,
            ln_audio: LayerNorm::new(&mut p.pp("ln_audio"), half)?,
            ln_video: LayerNorm::new(&mut p.pp("ln_video"), half)?,
            mask_audio: p.get("mask_audio", &[half], Init::Normal(0.5))?,
            mask_video: p.get("mask_video", &[half], Init::Normal(0.5))?,
            fusion: Linear::new(&mut p.pp("fusion"), cfg.d_model, cfg.d_model)?,
            blocks,
            ln_out: LayerNorm::new(&mut p.pp("ln_out"), cfg.d_model)?,
            d_model: cfg.d_model,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Encode a batch under one modality mode per sequence. With `masked`
    /// the batch's masked frames are replaced by the mask embeddings.
    pub fn forward(&self, batch: &Batch, modes: &[ModalityMode], masked: bool) -> Result<EncoderOutput> {
        if modes.len() != batch.size() {
            return Err(Error::Argument(format!(
                "{} modality modes for a batch of {}",
                modes.len(),
                batch.size()
            )));
        }
        let dtype = batch.dtype();
        let keep_a: Vec<bool> = modes.iter().map(|m| m.keeps_audio()).collect();
        let keep_v: Vec<bool> = modes.iter().map(|m| m.keeps_video()).collect();
        let (ma, mv) = if masked {
            (Some(&batch.mask_audio), Some(&batch.mask_video))
        } else {
            (None, None)
        };
        self.forward_raw(
            &batch.audio,
            &batch.video,
            &batch.valid,
            ma,
            mv,
            &keep_factors(&keep_a, dtype)?,
            &keep_factors(&keep_v, dtype)?,
        )
    }

    /// Forward over raw tensors; see [`Encoder::forward`].
    #[allow(clippy::too_many_arguments)]
    pub fn forward_raw(
        &self,
        audio: &Tensor,
        video: &Tensor,
        valid: &Tensor,
        mask_audio: Option<&Tensor>,
        mask_video: Option<&Tensor>,
        keep_audio: &Tensor,
        keep_video: &Tensor,
    ) -> Result<EncoderOutput> {
        let (fa, fv) = self.extract(audio, video)?;
        self.forward_features(&fa, &fv, valid, mask_audio, mask_video, keep_audio, keep_video)
    }

    /// Normalized per-modality extractor outputs, `[B, T, d/2]` each.
    pub fn extract(&self, audio: &Tensor, video: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, t, _) = audio.dims3()?;
        let (bv, tv, _, _) = video.dims4()?;
        if (b, t) != (bv, tv) {
            return Err(Error::Argument(format!(
                "audio is [{b},{t}] but video is [{bv},{tv}] frames"
            )));
        }
        let fa = self.ln_audio.forward(&self.audio.forward(audio)?)?;
        let fv = self.ln_video.forward(&self.video.forward(video)?)?;
        Ok((fa, fv))
    }

    /// Everything after the extractors: masking, modality zeroing, fusion
    /// and the transformer blocks.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_features(
        &self,
        fa: &Tensor,
        fv: &Tensor,
        valid: &Tensor,
        mask_audio: Option<&Tensor>,
        mask_video: Option<&Tensor>,
        keep_audio: &Tensor,
        keep_video: &Tensor,
    ) -> Result<EncoderOutput> {
        let t = fa.dims3()?.1;
        let mut fa = fa.clone();
        let mut fv = fv.clone();
        if let Some(m) = mask_audio {
            fa = replace_masked(&fa, m, &self.mask_audio)?;
        }
        if let Some(m) = mask_video {
            fv = replace_masked(&fv, m, &self.mask_video)?;
        }
        let fa = fa.broadcast_mul(keep_audio)?;
        let fv = fv.broadcast_mul(keep_video)?;
        let fused = self.fusion.forward(&Tensor::cat(&[&fa, &fv], D::Minus1)?)?;
        let pos = sinusoidal(t, self.d_model, fused.dtype(), fused.device())?;
        let mut x = fused.broadcast_add(&pos.unsqueeze(0)?)?;
        let bias = key_padding_bias(valid)?;
        let mut layer_states = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.forward(&x, &bias)?;
            layer_states.push(x.clone());
        }
        let last = self.ln_out.forward(&x)?;
        Ok(EncoderOutput { layer_states, last })
    }
}

/// `x·(1−m) + m⊗e` for `x: [B,T,d]`, `m: [B,T]`, `e: [d]`.
fn replace_masked(x: &Tensor, m: &Tensor, emb: &Tensor) -> Result<Tensor> {
    let m = m.unsqueeze(2)?;
    let keep = (m.ones_like()? - &m)?;
    Ok(x.broadcast_mul(&keep)?.broadcast_add(&m.broadcast_mul(&emb.reshape((1, 1, ()))?)?)?)
}
