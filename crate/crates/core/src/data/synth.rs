use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{write_sequence, Manifest, ManifestEntry, PairedSequence, Split, SynthSpec, MANIFEST_VERSION};
use crate::exec::{self, Exec};
use crate::rng::{self, Stream};
use crate::tensor_io::HostTensor;
use crate::{Error, Result};

/// Per-symbol audio and video prototypes, fixed for a corpus seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    /// `vocab × d_a`.
    pub audio: Vec<Vec<f32>>,
    /// `vocab × (H·W)`.
    pub video: Vec<Vec<f32>>,
    pub video_size: [usize; 2],
}

impl Prototypes {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(spec.seed, "prototypes");
        let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
        let audio = (0..spec.vocab_size)
            .map(|_| (0..spec.d_a).map(|_| normal.sample(&mut rng) as f32).collect())
            .collect();

        let [h, w] = spec.video_size;
        let base = face_background(h, w);
        let (r0, r1, c0, c1) = mouth_region(h, w);
        // Symbol patterns live on a coarse grid so that blur and pixelation
        // degrade rather than erase them.
        let (gh, gw) = ((r1 - r0).div_ceil(2), (c1 - c0).div_ceil(2));
        let video = (0..spec.vocab_size)
            .map(|_| {
                let grid: Vec<f32> = (0..gh * gw).map(|_| rng.random_range(0.05f32..0.95)).collect();
                let mut frame = base.clone();
                for r in r0..r1 {
                    for c in c0..c1 {
                        frame[r * w + c] = grid[((r - r0) / 2) * gw + (c - c0) / 2];
                    }
                }
                frame
            })
            .collect();
        Ok(Self {
            audio,
            video,
            video_size: spec.video_size,
        })
    }
}

/// Central box of a frame standing in for the mouth: rows `[r0, r1)`, cols `[c0, c1)`.
pub(crate) fn mouth_region(h: usize, w: usize) -> (usize, usize, usize, usize) {
    (h / 4, h - h / 4, w / 4, w - w / 4)
}

fn face_background(h: usize, w: usize) -> Vec<f32> {
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let scale = (cy * cy + cx * cx).sqrt().max(1.0);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let d = ((r as f32 - cy).powi(2) + (c as f32 - cx).powi(2)).sqrt() / scale;
            out.push(0.6 - 0.3 * d);
        }
    }
    out
}

/// Symbol string with no symbol repeated back to back, so that durations
/// never make a transcript ambiguous.
pub fn sample_symbols(spec: &SynthSpec, rng: &mut Stream) -> Vec<u32> {
    let [lo, hi] = spec.symbols_per_utterance;
    let n = rng.random_range(lo..=hi);
    let mut out: Vec<u32> = Vec::with_capacity(n);
    for _ in 0..n {
        let s = loop {
            let s = rng.random_range(0..spec.vocab_size as u32);
            if out.last() != Some(&s) {
                break s;
            }
        };
        out.push(s);
    }
    out
}

/// Render a symbol string to time-aligned audio and video tracks.
pub fn render_utterance(
    spec: &SynthSpec,
    protos: &Prototypes,
    symbols: &[u32],
    rng: &mut Stream,
) -> (HostTensor, HostTensor) {
    let [dlo, dhi] = spec.symbol_duration_range;
    let durations: Vec<usize> = symbols.iter().map(|_| rng.random_range(dlo..=dhi)).collect();
    let t_total: usize = durations.iter().sum();
    let [h, w] = spec.video_size;
    let normal = (spec.jitter_std > 0.0).then(|| Normal::new(0.0f64, spec.jitter_std).expect("valid std"));

    let mut audio = Vec::with_capacity(t_total * spec.d_a);
    let mut video = Vec::with_capacity(t_total * h * w);
    for (&s, &d) in symbols.iter().zip(&durations) {
        let (mu_a, mu_v) = (&protos.audio[s as usize], &protos.video[s as usize]);
        for _ in 0..d {
            match &normal {
                Some(n) => {
                    audio.extend(mu_a.iter().map(|&m| (m as f64 + n.sample(rng)) as f32));
                    video.extend(mu_v.iter().map(|&m| ((m as f64 + n.sample(rng)) as f32).clamp(0.0, 1.0)));
                }
                None => {
                    audio.extend_from_slice(mu_a);
                    video.extend_from_slice(mu_v);
                }
            }
        }
    }
    (
        HostTensor {
            shape: vec![t_total, spec.d_a],
            data: audio,
        },
        HostTensor {
            shape: vec![t_total, h, w],
            data: video,
        },
    )
}

/// Synthesize one utterance from its own `(seed, id)` stream.
pub(crate) fn synthesize(spec: &SynthSpec, protos: &Prototypes, id: &str, split: Split) -> PairedSequence {
    let mut rng = rng::stream(spec.seed, id);
    let transcript = sample_symbols(spec, &mut rng);
    let (audio, video) = render_utterance(spec, protos, &transcript, &mut rng);
    PairedSequence {
        id: id.to_string(),
        audio,
        video,
        transcript,
        split,
    }
}

pub(crate) fn sequence_id(split: Split, index: usize) -> String {
    format!("{}-{index:05}", split.as_str())
}

/// Generate and persist a corpus under `out_dir`, returning its manifest.
pub fn generate_corpus(
    spec: &SynthSpec,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    out_dir: &Path,
    exec: Exec,
) -> Result<Manifest> {
    spec.validate()?;
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(Error::Argument("every split needs at least one sequence".into()));
    }
    let protos = Prototypes::new(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let jobs: Vec<(Split, usize)> = [(Split::Train, n_train), (Split::Valid, n_valid), (Split::Test, n_test)]
        .into_iter()
        .flat_map(|(split, n)| (0..n).map(move |i| (split, i)))
        .collect();

    let entries = exec::try_map(exec, &jobs, |&(split, i)| -> Result<ManifestEntry> {
        let seq = synthesize(spec, &protos, &sequence_id(split, i), split);
        let rel = format!("{}/{}", split.as_str(), seq.id);
        write_sequence(&out_dir.join(&rel), &seq)?;
        Ok(ManifestEntry {
            format_version: MANIFEST_VERSION,
            id: seq.id,
            path: rel,
            frames: seq.audio.len(),
            split,
            transcript: seq.transcript,
        })
    })?;

    let manifest = Manifest::new(out_dir.to_path_buf(), entries)?;
    manifest.save()?;
    Ok(manifest)
}
