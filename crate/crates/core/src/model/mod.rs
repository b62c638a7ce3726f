//! Audio-visual encoder, prediction heads and recognition decoder.

pub mod batch;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod heads;
pub mod nn;
pub mod params;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use batch::Batch;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use decoder::Decoder;
pub use encoder::{Encoder, EncoderOutput};
pub use heads::Heads;
pub use params::{Init, ParamPath, ParamStore};

/// Precision used for training and inference.
pub const DEFAULT_DTYPE: candle_core::DType = candle_core::DType::F32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub top_k: usize,
    pub ff_mult: usize,
    pub video_conv_channels: Vec<usize>,
    pub decoder_layers: usize,
    pub codebook_size: usize,
    pub audio_dim: usize,
    pub video_size: [usize; 2],
    /// Pixel mean and std subtracted/divided before the video convolutions.
    pub video_norm: [f64; 2],
    pub vocab_size: usize,
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_blocks: 4,
            n_heads: 4,
            top_k: 2,
            ff_mult: 4,
            video_conv_channels: vec![8, 16],
            decoder_layers: 2,
            codebook_size: 64,
            audio_dim: 26,
            video_size: [16, 16],
            video_norm: [0.5, 0.25],
            vocab_size: 16,
            max_decode_len: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_blocks == 0 {
            return bad("model.n_blocks must be at least 1".into());
        }
        if self.top_k == 0 || self.top_k > self.n_blocks {
            return bad(format!(
                "model.top_k must be in 1..={}, got {}",
                self.n_blocks, self.top_k
            ));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model % 2 != 0 {
            return bad("model.d_model must be even".into());
        }
        if self.video_conv_channels.is_empty() || self.video_conv_channels.contains(&0) {
            return bad("model.video_conv_channels must be non-empty and positive".into());
        }
        let pool = 1usize << self.video_conv_channels.len();
        if self.video_size[0] < pool || self.video_size[1] < pool {
            return bad(format!(
                "model.video_size {:?} too small for {} pooling stages",
                self.video_size,
                self.video_conv_channels.len()
            ));
        }
        if !(self.video_norm[1] > 0.0) || !self.video_norm[0].is_finite() {
            return bad("model.video_norm std must be positive".into());
        }
        if self.codebook_size == 0 || self.vocab_size < 2 || self.ff_mult == 0 {
            return bad("model.codebook_size, vocab_size and ff_mult must be positive (vocab ≥ 2)".into());
        }
        if self.audio_dim == 0 || self.max_decode_len == 0 {
            return bad("model.audio_dim and max_decode_len must be positive".into());
        }
        Ok(())
    }

    /// Begin-of-sequence input token id.
    pub fn bos(&self) -> u32 {
        self.vocab_size as u32
    }

    /// End-of-sequence output class.
    pub fn eos(&self) -> u32 {
        self.vocab_size as u32
    }
}

/// Prediction tasks that own a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "MASK")]
    Mask,
    #[serde(rename = "ACP")]
    Acp,
    #[serde(rename = "VCP")]
    Vcp,
    #[serde(rename = "AVCP")]
    Avcp,
    #[serde(rename = "mACP")]
    Macp,
    #[serde(rename = "mVCP")]
    Mvcp,
    #[serde(rename = "MLM")]
    Mlm,
    #[serde(rename = "ACP(w)")]
    AcpW,
    #[serde(rename = "VCP(w)")]
    VcpW,
    #[serde(rename = "mACP(w)")]
    MacpW,
    #[serde(rename = "mVCP(w)")]
    MvcpW,
}

impl Task {
    pub const ALL: [Task; 11] = [
        Task::Mask,
        Task::Acp,
        Task::Vcp,
        Task::Avcp,
        Task::Macp,
        Task::Mvcp,
        Task::Mlm,
        Task::AcpW,
        Task::VcpW,
        Task::MacpW,
        Task::MvcpW,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Mask => "MASK",
            Task::Acp => "ACP",
            Task::Vcp => "VCP",
            Task::Avcp => "AVCP",
            Task::Macp => "mACP",
            Task::Mvcp => "mVCP",
            Task::Mlm => "MLM",
            Task::AcpW => "ACP(w)",
            Task::VcpW => "VCP(w)",
            Task::MacpW => "mACP(w)",
            Task::MvcpW => "mVCP(w)",
        }
    }

    /// Parameter-name-safe key.
    pub fn key(self) -> &'static str {
        match self {
            Task::Mask => "mask",
            Task::Acp => "acp",
            Task::Vcp => "vcp",
            Task::Avcp => "avcp",
            Task::Macp => "macp",
            Task::Mvcp => "mvcp",
            Task::Mlm => "mlm",
            Task::AcpW => "acp_w",
            Task::VcpW => "vcp_w",
            Task::MacpW => "macp_w",
            Task::MvcpW => "mvcp_w",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s) || t.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityMode {
    #[serde(alias = "AV")]
    Av,
    #[serde(rename = "audio")]
    AudioOnly,
    #[serde(rename = "video")]
    VideoOnly,
}

impl ModalityMode {
    pub const ALL: [ModalityMode; 3] = [ModalityMode::Av, ModalityMode::AudioOnly, ModalityMode::VideoOnly];

    pub fn keeps_audio(self) -> bool {
        self != ModalityMode::VideoOnly
    }

    pub fn keeps_video(self) -> bool {
        self != ModalityMode::AudioOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityMode::Av => "av",
            ModalityMode::AudioOnly => "audio",
            ModalityMode::VideoOnly => "video",
        }
    }
}

impl fmt::Display for ModalityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "av" => Ok(ModalityMode::Av),
            "audio" | "a" | "audio_only" => Ok(ModalityMode::AudioOnly),
            "video" | "v" | "video_only" => Ok(ModalityMode::VideoOnly),
            _ => Err(Error::Config(format!("unknown modality mode {s:?} (av|audio|video)"))),
        }
    }
}

pub fn sample_modality_mode<R: Rng + ?Sized>(rng: &mut R, p_drop: f64) -> Result<ModalityMode> {
    if !(0.0..=0.5).contains(&p_drop) {
        return Err(Error::Config(format!("modality dropout must be in [0, 0.5], got {p_drop}")));
    }
    let u: f64 = rng.random();
    Ok(if u < p_drop {
        ModalityMode::AudioOnly
    } else if u < 2.0 * p_drop {
        ModalityMode::VideoOnly
    } else {
        ModalityMode::Av
    })
}

/// Encoder plus optional heads and decoder over one parameter store.
#[derive(Debug)]
pub struct AvModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub heads: Option<Heads>,
    pub decoder: Option<Decoder>,
}

impl AvModel {
    /// Fresh encoder (and the requested heads) initialized from `config.seed`.
    pub fn new(config: ModelConfig, tasks: &[Task], dtype: candle_core::DType) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut model = Self::build(config, ParamStore::seeded(seed, dtype), tasks, false)?;
        model.store.clear_seed();
        Ok(model)
    }

    /// Build modules over an existing store; missing parameters are created
    /// only if the store carries a seed.
    pub fn build(config: ModelConfig, mut store: ParamStore, tasks: &[Task], decoder: bool) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(&mut store.root().pp("encoder"), &config)?;
        let heads = if tasks.is_empty() {
            None
        } else {
            Some(Heads::new(&mut store.root().pp("heads"), &config, tasks)?)
        };
        let decoder = if decoder {
            Some(Decoder::new(&mut store.root().pp("decoder"), &config)?)
        } else {
            None
        };
        Ok(Self {
            config,
            store,
            encoder,
            heads,
            decoder,
        })
    }

    /// Attach a freshly initialized decoder, seeding new parameters from `seed`.
    pub fn attach_decoder(&mut self, seed: u64) -> Result<()> {
        self.store.reseed(seed);
        let decoder = Decoder::new(&mut self.store.root().pp("decoder"), &self.config)?;
        self.store.clear_seed();
        self.decoder = Some(decoder);
        Ok(())
    }

    /// Drop prediction heads and their parameters.
    pub fn strip_heads(&mut self) {
        self.store.remove_prefix("heads.");
        self.heads = None;
    }

    pub fn heads(&self) -> Result<&Heads> {
        self.heads
            .as_ref()
            .ok_or_else(|| Error::State("model has no prediction heads".into()))
    }

    pub fn decoder(&self) -> Result<&Decoder> {
        self.decoder
            .as_ref()
            .ok_or_else(|| Error::State("model has no decoder attached".into()))
    }

    pub fn encoder_vars(&self) -> Vec<candle_core::Var> {
        self.store.vars_with_prefix("encoder.")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn config_invariants() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad_k = ModelConfig { top_k: 5, ..Default::default() };
        assert!(matches!(bad_k.validate(), Err(Error::Config(_))));
        let bad_heads = ModelConfig { n_heads: 5, ..Default::default() };
        assert!(matches!(bad_heads.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn modality_dropout_frequencies() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            match sample_modality_mode(&mut r, 0.25).unwrap() {
                ModalityMode::AudioOnly => counts[0] += 1,
                ModalityMode::VideoOnly => counts[1] += 1,
                ModalityMode::Av => counts[2] += 1,
            }
        }
        let f: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        assert!((f[0] - 0.25).abs() < 0.02 && (f[1] - 0.25).abs() < 0.02 && (f[2] - 0.5).abs() < 0.02);
        for _ in 0..100 {
            assert_eq!(sample_modality_mode(&mut r, 0.0).unwrap(), ModalityMode::Av);
        }
        assert!(matches!(sample_modality_mode(&mut r, 0.6), Err(Error::Config(_))));
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
            let j = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<Task>(&j).unwrap(), t);
        }
        assert!("XYZ".parse::<Task>().is_err());
    }
}
