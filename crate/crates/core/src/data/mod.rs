//! Synthetic paired audio-visual corpus.
//!
//! Each utterance is a symbol string rendered frame by frame: every symbol
//! owns an audio prototype (a `d_a`-dim feature vector) and a video prototype
//! (a grayscale frame whose mouth region carries a symbol-specific pattern).
//! Frames are prototype plus Gaussian jitter, so audio and video are
//! correlated through the shared symbol track and either modality alone is
//! enough to transcribe a clean utterance.

mod manifest;
mod noise;
mod synth;

pub use manifest::{load_sequence, write_sequence, Manifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION};
pub use noise::{
    generate_noise_banks, NoiseBankSpec, NoiseBanks, NoiseCategory, NoiseClip, NoiseRecord, NOISE_MANIFEST_FILE,
};
pub use synth::{generate_corpus, render_utterance, sample_symbols, Prototypes};
pub(crate) use synth::mouth_region as synth_mouth_region;

use serde::{Deserialize, Serialize};

use crate::tensor_io::HostTensor;
use crate::{Error, Result};

/// Frame rate shared by the audio feature track and the video track.
pub const FRAME_RATE: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One utterance: time-aligned audio features, video frames and transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSequence {
    pub id: String,
    /// `T × d_a` feature track.
    pub audio: HostTensor,
    /// `T × H × W` grayscale frames in `[0, 1]`.
    pub video: HostTensor,
    pub transcript: Vec<u32>,
    pub split: Split,
}

impl PairedSequence {
    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.audio.shape.len() != 2 || self.video.shape.len() != 3 {
            return Err(Error::Argument(format!(
                "{}: audio must be T×d and video T×H×W, got {:?} / {:?}",
                self.id, self.audio.shape, self.video.shape
            )));
        }
        if self.audio.len() != self.video.len() {
            return Err(Error::Argument(format!(
                "{}: audio has {} frames, video has {}",
                self.id,
                self.audio.len(),
                self.video.len()
            )));
        }
        if self.is_empty() {
            return Err(Error::Argument(format!("{}: empty sequence", self.id)));
        }
        if self.transcript.is_empty() {
            return Err(Error::Argument(format!("{}: empty transcript", self.id)));
        }
        if self.video.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument(format!("{}: video values outside [0,1]", self.id)));
        }
        Ok(())
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub vocab_size: usize,
    /// Inclusive range of frames a single symbol lasts.
    pub symbol_duration_range: [usize; 2],
    /// Inclusive range of symbols per utterance.
    pub symbols_per_utterance: [usize; 2],
    pub d_a: usize,
    pub video_size: [usize; 2],
    pub jitter_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            symbol_duration_range: [4, 8],
            symbols_per_utterance: [3, 6],
            d_a: 26,
            video_size: [16, 16],
            jitter_std: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!("vocab_size must be ≥ 2, got {}", self.vocab_size)));
        }
        let [lo, hi] = self.symbol_duration_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid symbol_duration_range [{lo}, {hi}]")));
        }
        let [lo, hi] = self.symbols_per_utterance;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid symbols_per_utterance [{lo}, {hi}]")));
        }
        if self.d_a == 0 || self.video_size[0] < 3 || self.video_size[1] < 3 {
            return Err(Error::Config("d_a must be ≥ 1 and video frames at least 3×3".into()));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::Config(format!("jitter_std must be ≥ 0, got {}", self.jitter_std)));
        }
        Ok(())
    }
}
