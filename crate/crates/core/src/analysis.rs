//! Representation diagnostics: clean-vs-corrupted similarity of sequence
//! embeddings and distances between modality-mode means.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt_sequence, sample_plan, CorruptionConfig};
use crate::data::{PairedSequence, Split};
use crate::exec::{self, Exec};
use crate::model::{AvModel, Batch, ModalityMode};
use crate::rng;
use crate::tensor_io::HostTensor;
use crate::training::Resources;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Held-out sequences embedded (0 keeps all).
    pub max_sequences: usize,
    /// Corruption applied to the "corrupted" side of the similarity report.
    pub corruption: CorruptionConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            max_sequences: 200,
            corruption: CorruptionConfig { split: Split::Test, ..CorruptionConfig::default() },
            batch_size: 32,
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("analysis.batch_size must be positive".into()));
        }
        self.corruption.validate()
    }
}

/// Row-per-sequence embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embeddings {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f32>>,
}

impl Embeddings {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Rows scaled to unit L2 norm (zero rows stay zero).
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let n = r.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                r.iter().map(|&x| if n > 0.0 { x as f64 / n } else { 0.0 }).collect()
            })
            .collect()
    }
}

/// Mean over valid frames of the final encoder states, one row per sequence.
/// With `corruption`, each sequence is corrupted from its own stream keyed by
/// (seed, id) first.
pub fn embed_set(
    model: &AvModel,
    seqs: &[PairedSequence],
    mode: ModalityMode,
    corruption: Option<(&CorruptionConfig, &Resources, u64)>,
    batch_size: usize,
    exec: Exec,
) -> Result<Embeddings> {
    if seqs.is_empty() {
        return Err(Error::Argument("embed_set needs at least one sequence".into()));
    }
    if batch_size == 0 {
        return Err(Error::Argument("batch_size must be positive".into()));
    }
    let inputs: Vec<(HostTensor, HostTensor)> = match corruption {
        None => seqs.iter().map(|s| (s.audio.clone(), s.video.clone())).collect(),
        Some((cfg, res, seed)) => {
            cfg.validate()?;
            let ctx = res.ctx();
            exec::try_map(exec, seqs, |s| {
                let mut r = rng::stream_parts(seed, &["analysis", &s.id]);
                let plan = sample_plan(s.len(), cfg, ctx, &mut r)?;
                corrupt_sequence(s, &plan, ctx)
            })?
        }
    };
    let mut rows = Vec::with_capacity(seqs.len());
    for chunk in inputs.chunks(batch_size) {
        let a: Vec<&HostTensor> = chunk.iter().map(|(a, _)| a).collect();
        let v: Vec<&HostTensor> = chunk.iter().map(|(_, v)| v).collect();
        let batch = Batch::new(&a, &v, None, DType::F32)?;
        let out = model.encoder.forward(&batch, &vec![mode; batch.size()], false)?;
        let pooled = mean_pool(&out.last, &batch.valid)?;
        rows.extend(pooled.to_dtype(DType::F32)?.to_vec2::<f32>()?);
    }
    Ok(Embeddings { ids: seqs.iter().map(|s| s.id.clone()).collect(), rows })
}

/// `[B,T,d]` states averaged over frames where `valid` `[B,T]` is 1.
pub fn mean_pool(states: &Tensor, valid: &Tensor) -> Result<Tensor> {
    let w = valid.to_dtype(states.dtype())?;
    let sum = states.broadcast_mul(&w.unsqueeze(2)?)?.sum(1)?;
    let n = w.sum_keepdim(1)?.clamp(1.0, f64::INFINITY)?;
    Ok(sum.broadcast_div(&n)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// `matrix[i][j]` = cosine(clean_i, corrupted_j).
    pub matrix: Vec<Vec<f64>>,
    /// Mean over i of ‖clean_i − corrupted_i‖ after row normalization.
    pub d_bar: f64,
    pub labels: Vec<String>,
    pub pooling: String,
}

pub fn similarity(clean: &Embeddings, corrupted: &Embeddings) -> Result<SimilarityReport> {
    if clean.ids != corrupted.ids {
        return Err(Error::Argument("similarity needs the same ids in the same order".into()));
    }
    if clean.dim() != corrupted.dim() {
        return Err(Error::Argument("embedding widths differ".into()));
    }
    let x = clean.normalized();
    let y = corrupted.normalized();
    let matrix: Vec<Vec<f64>> = x.iter().map(|xi| y.iter().map(|yj| dot(xi, yj)).collect()).collect();
    let d_bar = if x.is_empty() {
        0.0
    } else {
        x.iter().zip(&y).map(|(a, b)| l2(a, b)).sum::<f64>() / x.len() as f64
    };
    Ok(SimilarityReport {
        matrix,
        d_bar,
        labels: clean.ids.clone(),
        pooling: "mean over valid frames of final encoder states; rows L2-normalized".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub pair: (ModalityMode, ModalityMode),
    /// ‖mean(emb_X) − mean(emb_Y)‖ over row-normalized embeddings.
    pub d_avg: f64,
}

/// Distance between the mean embeddings of two sets.
pub fn modality_gap(x: &Embeddings, y: &Embeddings, pair: (ModalityMode, ModalityMode)) -> Result<GapReport> {
    if x.rows.len() < 2 || y.rows.len() < 2 {
        return Err(Error::Argument("modality gap needs at least two sequences per set".into()));
    }
    if x.dim() != y.dim() {
        return Err(Error::Argument("embedding widths differ".into()));
    }
    Ok(GapReport { pair, d_avg: l2(&mean_row(&x.normalized()), &mean_row(&y.normalized())) })
}

/// Gaps for the pairs (AV, AV), (A, AV), (V, AV) and (A, V) on clean inputs.
pub fn gap_reports(model: &AvModel, seqs: &[PairedSequence], batch_size: usize, exec: Exec) -> Result<Vec<GapReport>> {
    use ModalityMode::*;
    let av = embed_set(model, seqs, Av, None, batch_size, exec)?;
    let a = embed_set(model, seqs, AudioOnly, None, batch_size, exec)?;
    let v = embed_set(model, seqs, VideoOnly, None, batch_size, exec)?;
    Ok(vec![
        modality_gap(&av, &av, (Av, Av))?,
        modality_gap(&a, &av, (AudioOnly, Av))?,
        modality_gap(&v, &av, (VideoOnly, Av))?,
        modality_gap(&a, &v, (AudioOnly, VideoOnly))?,
    ])
}

/// Full diagnostics for one model: clean-vs-corrupted similarity and gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub similarity: SimilarityReport,
    pub gaps: Vec<GapReport>,
}

pub fn analyze(model: &AvModel, seqs: &[PairedSequence], res: &Resources, cfg: &AnalysisConfig, exec: Exec) -> Result<AnalysisReport> {
    cfg.validate()?;
    let seqs = if cfg.max_sequences > 0 && seqs.len() > cfg.max_sequences {
        &seqs[..cfg.max_sequences]
    } else {
        seqs
    };
    let clean = embed_set(model, seqs, ModalityMode::Av, None, cfg.batch_size, exec)?;
    let corrupted = embed_set(
        model,
        seqs,
        ModalityMode::Av,
        Some((&cfg.corruption, res, cfg.seed)),
        cfg.batch_size,
        exec,
    )?;
    Ok(AnalysisReport {
        similarity: similarity(&clean, &corrupted)?,
        gaps: gap_reports(model, seqs, cfg.batch_size, exec)?,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn mean_row(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows.first().map_or(0, Vec::len);
    let mut m = vec![0.0; d];
    for r in rows {
        for (acc, x) in m.iter_mut().zip(r) {
            *acc += x;
        }
    }
    m.iter_mut().for_each(|x| *x /= rows.len() as f64);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: Vec<Vec<f32>>) -> Embeddings {
        Embeddings { ids: (0..rows.len()).map(|i| format!("s{i}")).collect(), rows }
    }

    #[test]
    fn identical_sets() {
        let e = emb(vec![vec![1.0, 2.0, 0.5], vec![-1.0, 0.0, 3.0]]);
        let r = similarity(&e, &e).unwrap();
        assert!(r.d_bar.abs() < 1e-12);
        for i in 0..2 {
            assert!((r.matrix[i][i] - 1.0).abs() < 1e-12);
        }
        assert_eq!(modality_gap(&e, &e, (ModalityMode::Av, ModalityMode::Av)).unwrap().d_avg, 0.0);
    }

    #[test]
    fn orthogonal_rows() {
        let e = emb(vec![vec![2.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, 0.5]]);
        let r = similarity(&e, &e).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r.matrix[i][j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_computed_3x3() {
        let x = emb(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let y = emb(vec![vec![0.0, 1.0], vec![0.0, 2.0], vec![1.0, 0.0]]);
        let r = similarity(&x, &y).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let want = [[0.0, 0.0, 1.0], [1.0, 1.0, 0.0], [h, h, h]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.matrix[i][j] - want[i][j]).abs() < 1e-7, "{i}{j}");
            }
        }
        let d0 = 2f64.sqrt();
        let d2 = ((h - 1.0).powi(2) + h * h).sqrt();
        assert!((r.d_bar - (d0 + 0.0 + d2) / 3.0).abs() < 1e-7);
    }

    #[test]
    fn id_mismatch_rejected() {
        let x = emb(vec![vec![1.0], vec![2.0]]);
        let mut y = x.clone();
        y.ids.swap(0, 1);
        assert!(matches!(similarity(&x, &y), Err(Error::Argument(_))));
    }

    #[test]
    fn gap_matches_brute_force() {
        let x = emb(vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]]);
        let y = emb(vec![vec![-1.0, 0.0], vec![2.0, 2.0], vec![0.0, 1.0]]);
        let g = modality_gap(&x, &y, (ModalityMode::AudioOnly, ModalityMode::VideoOnly)).unwrap();
        let norm = |r: &Vec<f32>| {
            let n = r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            r.iter().map(|v| *v as f64 / n).collect::<Vec<_>>()
        };
        let mut diff = [0.0f64; 2];
        for (a, b) in x.rows.iter().zip(&y.rows) {
            let (a, b) = (norm(a), norm(b));
            for k in 0..2 {
                diff[k] += (a[k] - b[k]) / 3.0;
            }
        }
        let want = (diff[0].powi(2) + diff[1].powi(2)).sqrt();
        assert!((g.d_avg - want).abs() < 1e-12);
        let g2 = modality_gap(&y, &x, (ModalityMode::VideoOnly, ModalityMode::AudioOnly)).unwrap();
        assert!((g.d_avg - g2.d_avg).abs() < 1e-15);
    }

    #[test]
    fn mean_pool_ignores_padding() {
        let dev = candle_core::Device::Cpu;
        let s = Tensor::new(&[[[1f32, 2.0], [3.0, 4.0], [100.0, 100.0]]], &dev).unwrap();
        let v = Tensor::new(&[[1f32, 1.0, 0.0]], &dev).unwrap();
        let p = mean_pool(&s, &v).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(p, vec![vec![2.0, 3.0]]);
    }
}
