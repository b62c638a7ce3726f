//! Synthetic noise banks mirroring the seen/unseen audio-noise taxonomy.
//!
//! Seen categories (babble, speech, music, natural) get clips in every split;
//! unseen categories exist only in the test split. Speech and babble clips
//! are built from held-out utterances that never appear in the paired corpus,
//! and no held-out utterance is shared between splits.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::synth::{synthesize, Prototypes};
use super::{Manifest, PairedSequence, Split, SynthSpec};
use crate::exec::{self, Exec};
use crate::rng::{self, Stream};
use crate::tensor_io::{read_tensor, write_tensor, HostTensor};
use crate::{Error, Result};

pub const NOISE_MANIFEST_FILE: &str = "noise.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCategory {
    Babble,
    Speech,
    Music,
    Natural,
    UnseenPark,
    UnseenCafe,
    UnseenMetro,
    UnseenRiver,
}

impl NoiseCategory {
    pub const SEEN: [NoiseCategory; 4] = [Self::Babble, Self::Speech, Self::Music, Self::Natural];
    pub const UNSEEN: [NoiseCategory; 4] = [Self::UnseenPark, Self::UnseenCafe, Self::UnseenMetro, Self::UnseenRiver];

    pub fn is_unseen(self) -> bool {
        Self::UNSEEN.contains(&self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Babble => "babble",
            Self::Speech => "speech",
            Self::Music => "music",
            Self::Natural => "natural",
            Self::UnseenPark => "unseen_park",
            Self::UnseenCafe => "unseen_cafe",
            Self::UnseenMetro => "unseen_metro",
            Self::UnseenRiver => "unseen_river",
        }
    }
}

impl std::fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseBankSpec {
    /// Clips per category for train, valid, test.
    pub clips_per_split: [usize; 3],
    /// Length in frames of procedurally generated clips.
    pub clip_len: usize,
    /// Number of utterances summed into one babble clip.
    pub babble_k: usize,
    /// Number of utterances in the unseen cafe chatter bed.
    pub cafe_k: usize,
    /// Held-out utterances synthesized per split for speech/babble sources.
    pub heldout_per_split: usize,
}

impl Default for NoiseBankSpec {
    fn default() -> Self {
        Self {
            clips_per_split: [8, 4, 8],
            clip_len: 100,
            babble_k: 3,
            cafe_k: 6,
            heldout_per_split: 16,
        }
    }
}

impl NoiseBankSpec {
    fn clips(&self, split: Split) -> usize {
        match split {
            Split::Train => self.clips_per_split[0],
            Split::Valid => self.clips_per_split[1],
            Split::Test => self.clips_per_split[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    pub id: String,
    pub category: NoiseCategory,
    pub split: Split,
    /// `L × d_a` feature-rate track.
    pub track: HostTensor,
    /// Held-out utterance ids the clip was built from (speech, babble, cafe).
    pub sources: Vec<String>,
}

/// JSON line describing one persisted clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRecord {
    pub clip_id: String,
    pub category: NoiseCategory,
    pub split: Split,
    pub path: String,
    pub frames: usize,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct NoiseBanks {
    clips: Vec<NoiseClip>,
    by_id: HashMap<String, usize>,
}

impl NoiseBanks {
    /// Build a bank set, enforcing the split invariants.
    pub fn from_clips(clips: Vec<NoiseClip>) -> Result<Self> {
        let mut by_id = HashMap::new();
        let mut source_split: HashMap<&str, Split> = HashMap::new();
        for (i, c) in clips.iter().enumerate() {
            if by_id.insert(c.id.clone(), i).is_some() {
                return Err(Error::Generation(format!("clip id {} appears twice", c.id)));
            }
            if c.category.is_unseen() && c.split != Split::Test {
                return Err(Error::Generation(format!(
                    "unseen category {} may only appear in the test split, found clip {} in {}",
                    c.category, c.id, c.split
                )));
            }
            if c.track.is_empty() {
                return Err(Error::Generation(format!("clip {} is empty", c.id)));
            }
            for s in &c.sources {
                if let Some(prev) = source_split.insert(s, c.split) {
                    if prev != c.split {
                        return Err(Error::Generation(format!(
                            "held-out utterance {s} used in both {prev} and {}",
                            c.split
                        )));
                    }
                }
            }
        }
        Ok(Self { clips, by_id })
    }

    pub fn clips(&self) -> &[NoiseClip] {
        &self.clips
    }

    pub fn clip(&self, id: &str) -> Result<&NoiseClip> {
        self.by_id
            .get(id)
            .map(|&i| &self.clips[i])
            .ok_or_else(|| Error::Lookup(format!("no noise clip {id:?}")))
    }

    pub fn category(&self, category: NoiseCategory, split: Split) -> Vec<&NoiseClip> {
        self.clips
            .iter()
            .filter(|c| c.category == category && c.split == split)
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(NOISE_MANIFEST_FILE);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for c in &self.clips {
            let rel = format!("{}/{}/{}", c.category, c.split, c.id);
            write_tensor(&dir.join(&rel), &c.track)?;
            let rec = NoiseRecord {
                clip_id: c.id.clone(),
                category: c.category,
                split: c.split,
                path: rel,
                frames: c.track.len(),
                sources: c.sources.clone(),
            };
            writeln!(f, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(NOISE_MANIFEST_FILE);
        let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut clips = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: NoiseRecord =
                serde_json::from_str(&line).map_err(|e| Error::format(&path, format!("line {}: {e}", n + 1)))?;
            let track = read_tensor(&dir.join(&rec.path))?;
            if track.len() != rec.frames {
                return Err(Error::format(&path, format!("clip {} length mismatch", rec.clip_id)));
            }
            clips.push(NoiseClip {
                id: rec.clip_id,
                category: rec.category,
                split: rec.split,
                track,
                sources: rec.sources,
            });
        }
        Self::from_clips(clips)
    }
}

fn heldout_id(split: Split, i: usize) -> String {
    format!("heldout-{}-{i:04}", split.as_str())
}

fn smoothed_noise(rng: &mut Stream, len: usize, d: usize, window: usize) -> Vec<f32> {
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let raw: Vec<f64> = (0..(len + window) * d).map(|_| normal.sample(rng)).collect();
    let mut out = vec![0.0f32; len * d];
    let norm = (window as f64).sqrt();
    for t in 0..len {
        for j in 0..d {
            let s: f64 = (0..window).map(|k| raw[(t + k) * d + j]).sum();
            out[t * d + j] = (s / norm) as f32;
        }
    }
    out
}

fn tones(rng: &mut Stream, len: usize, d: usize, n_tones: usize, freq_hz: (f64, f64)) -> Vec<f32> {
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let mut out = vec![0.0f32; len * d];
    for _ in 0..n_tones {
        let f = rng.random_range(freq_hz.0..freq_hz.1);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let gains: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        for t in 0..len {
            let s = (std::f64::consts::TAU * f * t as f64 / super::FRAME_RATE + phase).sin();
            for j in 0..d {
                out[t * d + j] += (gains[j] * s) as f32;
            }
        }
    }
    out
}

fn sum_tracks(tracks: &[&HostTensor]) -> HostTensor {
    let len = tracks.iter().map(|t| t.len()).min().unwrap_or(0);
    let d = tracks[0].row_len();
    let mut data = vec![0.0f32; len * d];
    for tr in tracks {
        for (o, v) in data.iter_mut().zip(&tr.data[..len * d]) {
            *o += *v;
        }
    }
    HostTensor {
        shape: vec![len, d],
        data,
    }
}

fn pick_sources<'a>(rng: &mut Stream, pool: &'a [PairedSequence], k: usize) -> Vec<&'a PairedSequence> {
    sample(rng, pool.len(), k).into_iter().map(|i| &pool[i]).collect()
}

fn make_clip(
    category: NoiseCategory,
    split: Split,
    index: usize,
    pool: &[PairedSequence],
    bank: &NoiseBankSpec,
    d: usize,
    seed: u64,
) -> NoiseClip {
    let id = format!("{}-{}-{index:03}", category, split);
    let mut rng = rng::stream_parts(seed, &["noise", &id]);
    let len = bank.clip_len;
    let procedural = |data: Vec<f32>| HostTensor {
        shape: vec![len, d],
        data,
    };
    let (track, sources) = match category {
        NoiseCategory::Speech => {
            let src = &pool[index];
            (src.audio.clone(), vec![src.id.clone()])
        }
        NoiseCategory::Babble => {
            let srcs = pick_sources(&mut rng, pool, bank.babble_k);
            let tracks: Vec<&HostTensor> = srcs.iter().map(|s| &s.audio).collect();
            (sum_tracks(&tracks), srcs.iter().map(|s| s.id.clone()).collect())
        }
        NoiseCategory::Music => (procedural(tones(&mut rng, len, d, 3, (0.5, 4.0))), vec![]),
        NoiseCategory::Natural => {
            let mut x = smoothed_noise(&mut rng, len, d, 5);
            let gains: Vec<f32> = (0..d).map(|_| rng.random_range(0.5f32..1.5)).collect();
            for (i, v) in x.iter_mut().enumerate() {
                *v *= gains[i % d];
            }
            (procedural(x), vec![])
        }
        NoiseCategory::UnseenPark => {
            let mut x = smoothed_noise(&mut rng, len, d, 11);
            let hum = tones(&mut rng, len, d, 1, (0.1, 0.3));
            for (v, h) in x.iter_mut().zip(&hum) {
                *v += 0.5 * h;
            }
            (procedural(x), vec![])
        }
        NoiseCategory::UnseenCafe => {
            let srcs = pick_sources(&mut rng, pool, bank.cafe_k);
            let tracks: Vec<&HostTensor> = srcs.iter().map(|s| &s.audio).collect();
            let mut bed = sum_tracks(&tracks);
            let scale = 1.0 / (bank.cafe_k as f32).sqrt();
            let rows = bed.len();
            for t in 0..rows {
                let clatter = rng.random_bool(0.05);
                for v in bed.row_mut(t) {
                    *v *= scale;
                    if clatter {
                        *v += 3.0;
                    }
                }
            }
            (bed, srcs.iter().map(|s| s.id.clone()).collect())
        }
        NoiseCategory::UnseenMetro => {
            let mut x = smoothed_noise(&mut rng, len, d, 7);
            let hum = tones(&mut rng, len, d, 1, (1.0, 2.0));
            for (i, v) in x.iter_mut().enumerate() {
                let low = (i % d) < d.div_ceil(3);
                *v = if low { *v * 2.0 } else { *v * 0.1 } + hum[i];
            }
            (procedural(x), vec![])
        }
        NoiseCategory::UnseenRiver => {
            let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
            let x = (0..len * d)
                .map(|i| {
                    let tilt = 0.5 + (i % d) as f64 / d.max(1) as f64;
                    (tilt * normal.sample(&mut rng)) as f32
                })
                .collect();
            (procedural(x), vec![])
        }
    };
    NoiseClip {
        id,
        category,
        split,
        track,
        sources,
    }
}

/// Generate noise banks for a corpus and persist them under `out_dir`.
pub fn generate_noise_banks(
    spec: &SynthSpec,
    bank: &NoiseBankSpec,
    corpus: &Manifest,
    out_dir: &Path,
    exec: Exec,
) -> Result<NoiseBanks> {
    spec.validate()?;
    if bank.babble_k < 3 {
        return Err(Error::Config(format!("babble needs k ≥ 3 sources, got {}", bank.babble_k)));
    }
    if bank.clip_len == 0 {
        return Err(Error::Config("clip_len must be ≥ 1".into()));
    }
    let protos = Prototypes::new(spec)?;
    let corpus_ids: HashSet<&str> = corpus.entries.iter().map(|e| e.id.as_str()).collect();

    let mut pools: HashMap<Split, Vec<PairedSequence>> = HashMap::new();
    for split in Split::ALL {
        let needed = bank
            .clips(split)
            .max(bank.babble_k)
            .max(if split == Split::Test { bank.cafe_k } else { 0 });
        if bank.heldout_per_split < needed {
            return Err(Error::Generation(format!(
                "{split} split needs {needed} held-out utterances, only {} available",
                bank.heldout_per_split
            )));
        }
        let pool: Vec<PairedSequence> = (0..bank.heldout_per_split)
            .map(|i| synthesize(spec, &protos, &heldout_id(split, i), split))
            .collect();
        if let Some(clash) = pool.iter().find(|s| corpus_ids.contains(s.id.as_str())) {
            return Err(Error::Generation(format!("held-out id {} collides with the corpus", clash.id)));
        }
        pools.insert(split, pool);
    }

    let mut jobs = Vec::new();
    for split in Split::ALL {
        let mut cats = NoiseCategory::SEEN.to_vec();
        if split == Split::Test {
            cats.extend(NoiseCategory::UNSEEN);
        }
        for cat in cats {
            for i in 0..bank.clips(split) {
                jobs.push((cat, split, i));
            }
        }
    }
    let clips = exec::map(exec, &jobs, |&(cat, split, i)| {
        make_clip(cat, split, i, &pools[&split], bank, spec.d_a, spec.seed)
    });
    let banks = NoiseBanks::from_clips(clips)?;
    banks.save(out_dir)?;
    Ok(banks)
}
