use std::collections::BTreeMap;
use std::fmt::Write as _;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::Resources;
use crate::corruption::{
    corrupt_sequence, sample_plan, AudioAugment, CorruptionConfig, Frequency, SecondaryEvents, SnrDraw, VisualKind,
    EVAL_SNRS,
};
use crate::data::{NoiseCategory, PairedSequence, Split};
use crate::exec::{self, Exec};
use crate::model::{AvModel, Batch, ModalityMode};
use crate::rng;
use crate::tensor_io::HostTensor;
use crate::{Error, Result};

/// Minimum edit distance (substitutions, deletions, insertions).
pub fn edit_distance(hyp: &[u32], reference: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=hyp.len()).collect();
    let mut cur = vec![0; hyp.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hyp.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hyp.len()]
}

pub fn wer(hyp: &[u32], reference: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Argument("WER needs a non-empty reference".into()));
    }
    Ok(edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// Total edits over total reference length.
pub fn corpus_wer(pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<f64> {
    let words: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    if words == 0 {
        return Err(Error::Argument("WER needs a non-empty reference".into()));
    }
    let edits: usize = pairs.iter().map(|(h, r)| edit_distance(h, r)).sum();
    Ok(edits as f64 / words as f64)
}

/// Visual side of an evaluation condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualCondition {
    Clean,
    /// Object occlusion followed by exactly one of Gaussian noise or blur.
    ObjectNoise,
    Hands,
    Pixelate,
}

impl VisualCondition {
    pub fn is_unseen(self) -> bool {
        matches!(self, VisualCondition::Hands | VisualCondition::Pixelate)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VisualCondition::Clean => "clean",
            VisualCondition::ObjectNoise => "object_noise",
            VisualCondition::Hands => "hands",
            VisualCondition::Pixelate => "pixelate",
        }
    }
}

/// Audio side of an evaluation condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AudioCondition {
    Clean,
    Noise { category: NoiseCategory, snr_db: f64 },
    /// SNR drawn uniformly per utterance.
    RandomSnr { category: NoiseCategory, low: f64, high: f64 },
}

impl AudioCondition {
    pub fn label(&self) -> String {
        match self {
            AudioCondition::Clean => "clean".into(),
            AudioCondition::Noise { category, snr_db } => format!("{category}@{snr_db}"),
            AudioCondition::RandomSnr { category, low, high } => format!("{category}@U[{low},{high}]"),
        }
    }

    fn fixed_snr(&self) -> Option<f64> {
        match self {
            AudioCondition::Noise { snr_db, .. } => Some(*snr_db),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub visual: VisualCondition,
    pub audio: AudioCondition,
}

impl EvalCell {
    pub fn key(&self) -> String {
        format!("{}|{}", self.visual.as_str(), self.audio.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalGrid {
    pub visual: Vec<VisualCondition>,
    pub audio_categories: Vec<NoiseCategory>,
    pub snrs: Vec<f64>,
    /// SNR range for unseen noise categories.
    pub unseen_snr_range: [f64; 2],
    /// Add a clean-audio cell for every visual condition.
    pub include_clean_audio: bool,
    pub visual_ratio_range: [f64; 2],
    pub unseen_frequencies: Vec<u32>,
    pub batch_size: usize,
    /// Cap on test utterances (0 keeps all).
    pub max_utterances: usize,
    pub seed: u64,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self {
            visual: vec![VisualCondition::ObjectNoise],
            audio_categories: NoiseCategory::SEEN.to_vec(),
            snrs: EVAL_SNRS.to_vec(),
            unseen_snr_range: [-10.0, 10.0],
            include_clean_audio: true,
            visual_ratio_range: [0.1, 0.5],
            unseen_frequencies: vec![1, 2, 3],
            batch_size: 32,
            max_utterances: 0,
            seed: 0,
        }
    }
}

impl EvalGrid {
    pub fn cells(&self) -> Vec<EvalCell> {
        let mut out = Vec::new();
        for &visual in &self.visual {
            if self.include_clean_audio {
                out.push(EvalCell { visual, audio: AudioCondition::Clean });
            }
            for &category in &self.audio_categories {
                if category.is_unseen() {
                    out.push(EvalCell {
                        visual,
                        audio: AudioCondition::RandomSnr {
                            category,
                            low: self.unseen_snr_range[0],
                            high: self.unseen_snr_range[1],
                        },
                    });
                } else {
                    for &snr_db in &self.snrs {
                        out.push(EvalCell { visual, audio: AudioCondition::Noise { category, snr_db } });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.visual.is_empty() || self.batch_size == 0 {
            return Err(Error::Config("eval grid needs visual conditions and a positive batch size".into()));
        }
        if self.unseen_frequencies.is_empty() || self.unseen_frequencies.contains(&0) {
            return Err(Error::Config("eval.unseen_frequencies must be non-empty and ≥ 1".into()));
        }
        if self.cells().is_empty() {
            return Err(Error::Config("eval grid has no cells".into()));
        }
        Ok(())
    }

    /// Corruption config realizing a cell on the test split.
    pub fn corruption(&self, cell: &EvalCell) -> CorruptionConfig {
        let mut c = CorruptionConfig {
            split: Split::Test,
            visual_ratio_range: self.visual_ratio_range,
            audio_ratio_range: [0.0, 0.0],
            secondary: SecondaryEvents::Off,
            ..CorruptionConfig::default()
        };
        match cell.visual {
            VisualCondition::Clean => c.visual_ratio_range = [0.0, 0.0],
            VisualCondition::ObjectNoise => {
                c.visual_kinds = vec![VisualKind::Occlude];
                c.visual_frequency = Frequency::Fixed(1);
                c.secondary = SecondaryEvents::ExactlyOne;
            }
            VisualCondition::Hands => {
                c.visual_kinds = vec![VisualKind::HandsOcclude];
                c.visual_frequency = Frequency::Choice(self.unseen_frequencies.clone());
            }
            VisualCondition::Pixelate => {
                c.visual_kinds = vec![VisualKind::Pixelate];
                c.visual_frequency = Frequency::Choice(self.unseen_frequencies.clone());
            }
        }
        match cell.audio {
            AudioCondition::Clean => c.audio_augment = None,
            AudioCondition::Noise { category, snr_db } => {
                c.audio_categories = vec![category];
                c.audio_augment = Some(AudioAugment { prob: 1.0, snr: SnrDraw::Fixed { db: snr_db } });
            }
            AudioCondition::RandomSnr { category, low, high } => {
                c.audio_categories = vec![category];
                c.audio_augment = Some(AudioAugment { prob: 1.0, snr: SnrDraw::Uniform { low, high } });
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub visual: VisualCondition,
    pub audio: AudioCondition,
    pub wer: f64,
    pub errors: usize,
    pub words: usize,
    pub utterances: usize,
}

impl CellResult {
    fn is_noisy(&self) -> bool {
        self.audio != AudioCondition::Clean
    }

    fn noise_dominant(&self) -> bool {
        self.audio.fixed_snr().is_some_and(|s| s <= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean WER over noisy-audio cells.
    pub avg: f64,
    /// Mean WER over cells with SNR ≤ 0 dB.
    pub n_ge_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ModalityMode,
    pub seed: u64,
    pub cells: Vec<CellResult>,
    /// Clean video and clean audio, when evaluated.
    pub clean_wer: Option<f64>,
    pub overall: Option<Aggregate>,
    pub per_visual: BTreeMap<String, Aggregate>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn aggregate<'a>(cells: impl Iterator<Item = &'a CellResult> + Clone) -> Option<Aggregate> {
    let noisy: Vec<f64> = cells.clone().filter(|c| c.is_noisy()).map(|c| c.wer).collect();
    let dominant: Vec<f64> = cells.filter(|c| c.noise_dominant()).map(|c| c.wer).collect();
    Some(Aggregate {
        avg: mean(&noisy)?,
        n_ge_s: mean(&dominant),
    })
}

impl EvalReport {
    pub fn from_cells(mode: ModalityMode, seed: u64, cells: Vec<CellResult>) -> Self {
        let clean_wer = cells
            .iter()
            .find(|c| c.visual == VisualCondition::Clean && c.audio == AudioCondition::Clean)
            .map(|c| c.wer);
        let overall = aggregate(cells.iter());
        let mut per_visual = BTreeMap::new();
        let mut visuals: Vec<VisualCondition> = cells.iter().map(|c| c.visual).collect();
        visuals.sort();
        visuals.dedup();
        for v in visuals {
            if let Some(a) = aggregate(cells.iter().filter(|c| c.visual == v)) {
                per_visual.insert(v.as_str().to_string(), a);
            }
        }
        Self {
            mode,
            seed,
            cells,
            clean_wer,
            overall,
            per_visual,
        }
    }

    /// Mean WER over the cells whose visual condition satisfies `pred`.
    pub fn mean_wer_where(&self, pred: impl Fn(&CellResult) -> bool) -> Option<f64> {
        mean(&self.cells.iter().filter(|c| pred(c)).map(|c| c.wer).collect::<Vec<_>>())
    }

    /// Text table: one row per visual condition, SNR columns averaged over
    /// noise categories, then unseen-noise cells, AVG and N≥S.
    pub fn render_table(&self) -> String {
        let mut snrs: Vec<f64> = self.cells.iter().filter_map(|c| c.audio.fixed_snr()).collect();
        snrs.sort_by(|a, b| a.total_cmp(b));
        snrs.dedup();
        let has_clean = self.cells.iter().any(|c| c.audio == AudioCondition::Clean);
        let has_random = self.cells.iter().any(|c| matches!(c.audio, AudioCondition::RandomSnr { .. }));
        let mut header = vec!["visual".to_string()];
        if has_clean {
            header.push("clean".into());
        }
        header.extend(snrs.iter().map(|s| format!("{s}dB")));
        if has_random {
            header.push("unseen".into());
        }
        header.push("AVG".into());
        header.push("N≥S".into());
        let mut rows = vec![header];
        let mut visuals: Vec<VisualCondition> = self.cells.iter().map(|c| c.visual).collect();
        visuals.sort();
        visuals.dedup();
        let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        for v in visuals {
            let of = |f: &dyn Fn(&CellResult) -> bool| self.mean_wer_where(|c| c.visual == v && f(c));
            let mut row = vec![v.as_str().to_string()];
            if has_clean {
                row.push(pct(of(&|c| c.audio == AudioCondition::Clean)));
            }
            for &s in &snrs {
                row.push(pct(of(&|c| c.audio.fixed_snr() == Some(s))));
            }
            if has_random {
                row.push(pct(of(&|c| matches!(c.audio, AudioCondition::RandomSnr { .. }))));
            }
            let agg = self.per_visual.get(v.as_str());
            row.push(pct(agg.map(|a| a.avg)));
            row.push(pct(agg.and_then(|a| a.n_ge_s)));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("WER (%), mode = {}\n", self.mode);
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join(" | "));
            if i == 0 {
                let _ = writeln!(out, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-"));
            }
        }
        out
    }
}

/// Greedy transcripts for already-corrupted inputs.
pub fn decode_batch(model: &AvModel, audio: &[&HostTensor], video: &[&HostTensor], mode: ModalityMode) -> Result<Vec<Vec<u32>>> {
    let batch = Batch::new(audio, video, None, DType::F32)?;
    let out = model.encoder.forward(&batch, &vec![mode; batch.size()], false)?;
    model.decoder()?.greedy(&out.last, &batch.valid)
}

fn check_banks(res: &Resources, grid: &EvalGrid) -> Result<()> {
    for &cat in &grid.audio_categories {
        if res.banks.category(cat, Split::Test).is_empty() {
            return Err(Error::Config(format!(
                "noise category {cat} has no test-split clips in the loaded banks"
            )));
        }
    }
    Ok(())
}

/// WER of `model` on every grid cell. Corruption per utterance is keyed by
/// (grid seed, cell, id), so repeated runs give identical reports.
pub fn evaluate(
    model: &AvModel,
    test: &[PairedSequence],
    res: &Resources,
    grid: &EvalGrid,
    mode: ModalityMode,
    exec: Exec,
) -> Result<EvalReport> {
    grid.validate()?;
    model.decoder()?;
    if test.is_empty() {
        return Err(Error::Argument("evaluation needs a non-empty test split".into()));
    }
    check_banks(res, grid)?;
    let test = if grid.max_utterances > 0 && test.len() > grid.max_utterances {
        &test[..grid.max_utterances]
    } else {
        test
    };
    let ctx = res.ctx();
    let mut results = Vec::new();
    for cell in grid.cells() {
        let cfg = grid.corruption(&cell);
        cfg.validate()?;
        let key = cell.key();
        let corrupted = exec::try_map(exec, test, |s| {
            let mut r = rng::stream_parts(grid.seed, &["eval", &key, &s.id]);
            let plan = sample_plan(s.len(), &cfg, ctx, &mut r)?;
            corrupt_sequence(s, &plan, ctx)
        })?;
        let mut pairs = Vec::with_capacity(test.len());
        for (chunk, seqs) in corrupted.chunks(grid.batch_size).zip(test.chunks(grid.batch_size)) {
            let a: Vec<&HostTensor> = chunk.iter().map(|(a, _)| a).collect();
            let v: Vec<&HostTensor> = chunk.iter().map(|(_, v)| v).collect();
            let hyps = decode_batch(model, &a, &v, mode)?;
            pairs.extend(hyps.into_iter().zip(seqs.iter().map(|s| s.transcript.clone())));
        }
        let errors: usize = pairs.iter().map(|(h, r)| edit_distance(h, r)).sum();
        let words: usize = pairs.iter().map(|(_, r)| r.len()).sum();
        results.push(CellResult {
            visual: cell.visual,
            audio: cell.audio,
            wer: corpus_wer(&pairs)?,
            errors,
            words,
            utterances: pairs.len(),
        });
    }
    Ok(EvalReport::from_cells(mode, grid.seed, results))
}
