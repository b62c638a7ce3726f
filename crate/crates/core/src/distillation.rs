//! EMA teacher, momentum schedule, clean targets and the cluster codebook.

use candle_core::{DType, Device, Tensor, D};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::model::nn::standardize;
use crate::model::batch::keep_factors;
use crate::model::{Batch, Encoder, EncoderOutput, ModalityMode, ModelConfig, ParamStore};
use crate::rng;
use crate::{Error, Result};

const TARGET_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmaConfig {
    pub eta_start: f64,
    pub eta_end: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            eta_start: 0.99,
            eta_end: 0.999,
        }
    }
}

impl EmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta_start) || !(0.0..=1.0).contains(&self.eta_end) || self.eta_start > self.eta_end {
            return Err(Error::Config(format!(
                "ema: need 0 ≤ eta_start ≤ eta_end ≤ 1, got {} and {}",
                self.eta_start, self.eta_end
            )));
        }
        Ok(())
    }
}

/// Encoder copy updated only by exponential moving average.
#[derive(Debug)]
pub struct TeacherState {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub ema: EmaConfig,
    pub total_steps: usize,
}

impl TeacherState {
    /// Bit-exact copy of the student's encoder parameters.
    pub fn from_student(student: &ParamStore, cfg: &ModelConfig, ema: EmaConfig, total_steps: usize) -> Result<Self> {
        ema.validate()?;
        let mut snap = student.snapshot()?;
        snap.retain(|k, _| k.starts_with("encoder."));
        let mut store = ParamStore::from_tensors(snap, student.dtype())?;
        let encoder = Encoder::new(&mut store.root().pp("encoder"), cfg)?;
        Ok(Self {
            store,
            encoder,
            ema,
            total_steps,
        })
    }

    /// Linear ramp from `eta_start` at step 0 to `eta_end` at `total_steps`.
    pub fn eta(&self, step: usize) -> f64 {
        eta_schedule(step, self.total_steps, &self.ema)
    }

    /// `p ← η·p + (1−η)·p_student` for every teacher parameter.
    pub fn ema_update(&self, student: &ParamStore, eta: f64) -> Result<()> {
        ema_update(&self.store, student, eta)
    }

    /// Clean targets for the requested modality modes.
    pub fn targets(&self, clean: &Batch, k: usize, needs: TargetNeeds, codebook: Option<&Codebook>) -> Result<TargetBundle> {
        make_targets(&self.encoder, clean, k, needs, codebook)
    }
}

pub fn eta_schedule(step: usize, total_steps: usize, ema: &EmaConfig) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return ema.eta_end;
    }
    let frac = step as f64 / total_steps as f64;
    ema.eta_start + (ema.eta_end - ema.eta_start) * frac
}

/// In-place EMA of every parameter of `teacher` toward the same-named
/// parameter of `student`.
pub fn ema_update(teacher: &ParamStore, student: &ParamStore, eta: f64) -> Result<()> {
    for (name, t) in teacher.iter() {
        let s = student
            .get(name)
            .ok_or_else(|| Error::State(format!("student has no parameter {name}")))?;
        if s.dims() != t.dims() {
            return Err(Error::State(format!(
                "parameter {name}: teacher {:?} vs student {:?}",
                t.dims(),
                s.dims()
            )));
        }
        let next = ((t.as_tensor() * eta)? + (s.as_tensor().detach() * (1.0 - eta))?)?;
        t.set(&next)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TargetNeeds {
    pub av: bool,
    pub a_only: bool,
    pub v_only: bool,
}

impl TargetNeeds {
    pub fn all() -> Self {
        Self {
            av: true,
            a_only: true,
            v_only: true,
        }
    }
}

/// Detached, per-frame normalized teacher targets `[B,T,d]`.
#[derive(Debug, Clone)]
pub struct TargetBundle {
    pub av: Option<Tensor>,
    pub a_only: Option<Tensor>,
    pub v_only: Option<Tensor>,
    /// `[B,T]` nearest-codeword index of the audio-visual target.
    pub cluster_ids: Option<Tensor>,
}

impl TargetBundle {
    pub fn get(&self, mode: ModalityMode) -> Result<&Tensor> {
        let t = match mode {
            ModalityMode::Av => &self.av,
            ModalityMode::AudioOnly => &self.a_only,
            ModalityMode::VideoOnly => &self.v_only,
        };
        t.as_ref()
            .ok_or_else(|| Error::State(format!("target bundle has no {mode} target")))
    }

    pub fn cluster_ids(&self) -> Result<&Tensor> {
        self.cluster_ids
            .as_ref()
            .ok_or_else(|| Error::State("target bundle has no cluster ids (no codebook)".into()))
    }
}

/// Mean of the top `k` block outputs followed by per-frame standardization.
pub fn normalized_top_k(out: &EncoderOutput, k: usize) -> Result<Tensor> {
    standardize(&out.top_k_mean(k)?, TARGET_EPS)
}

pub fn make_targets(
    teacher: &Encoder,
    clean: &Batch,
    k: usize,
    needs: TargetNeeds,
    codebook: Option<&Codebook>,
) -> Result<TargetBundle> {
    if k == 0 || k > teacher.n_blocks() {
        return Err(Error::Config(format!("top_k {k} outside 1..={}", teacher.n_blocks())));
    }
    let b = clean.size();
    let dtype = clean.dtype();
    let (fa, fv) = teacher.extract(&clean.audio, &clean.video)?;
    let run = |mode: ModalityMode| -> Result<Tensor> {
        let keep_a = keep_factors(&vec![mode.keeps_audio(); b], dtype)?;
        let keep_v = keep_factors(&vec![mode.keeps_video(); b], dtype)?;
        let out = teacher.forward_features(&fa, &fv, &clean.valid, None, None, &keep_a, &keep_v)?;
        Ok(normalized_top_k(&out, k)?.detach())
    };
    let need_av = needs.av || codebook.is_some();
    let av = if need_av { Some(run(ModalityMode::Av)?) } else { None };
    let a_only = if needs.a_only { Some(run(ModalityMode::AudioOnly)?) } else { None };
    let v_only = if needs.v_only { Some(run(ModalityMode::VideoOnly)?) } else { None };
    let cluster_ids = match (codebook, &av) {
        (Some(cb), Some(av)) => Some(cb.assign(av)?),
        _ => None,
    };
    Ok(TargetBundle {
        av,
        a_only,
        v_only,
        cluster_ids,
    })
}

/// Frozen k-means codewords `[K, d]`.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub centroids: Tensor,
}

impl Codebook {
    pub fn new(centroids: Tensor) -> Result<Self> {
        centroids.dims2()?;
        Ok(Self { centroids })
    }

    pub fn size(&self) -> usize {
        self.centroids.dims()[0]
    }

    /// Nearest codeword (Euclidean) for every row of `x: [..., d]`; output drops the last axis.
    pub fn assign(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d = *dims.last().ok_or_else(|| Error::Argument("cannot assign a scalar".into()))?;
        let c = self.centroids.to_dtype(x.dtype())?;
        if c.dims()[1] != d {
            return Err(Error::Argument(format!("codebook dim {} vs feature dim {d}", c.dims()[1])));
        }
        let flat = x.reshape(((), d))?;
        // ‖c‖² − 2 x·c ranks codewords the same as the full distance
        let cn = c.sqr()?.sum_keepdim(1)?.t()?;
        let dist = cn.broadcast_sub(&(flat.matmul(&c.t()?)? * 2.0)?)?;
        let ids = dist.argmin(D::Minus1)?;
        Ok(ids.reshape(&dims[..dims.len() - 1])?)
    }
}

pub const KMEANS_ITERS: usize = 20;

/// K-means over `frames` (`n × d` row-major), initialized from distinct
/// frames drawn with the seeded stream.
pub fn build_codebook(frames: &[f32], d: usize, size: usize, seed: u64) -> Result<Codebook> {
    if d == 0 || frames.len() % d != 0 {
        return Err(Error::Argument("frame buffer is not a multiple of the feature dim".into()));
    }
    let n = frames.len() / d;
    if size == 0 || n < 10 * size {
        return Err(Error::Config(format!(
            "codebook of size {size} needs at least {} frames, got {n}",
            10 * size.max(1)
        )));
    }
    let mut r = rng::stream(seed, "codebook");
    let mut cent: Vec<f64> = sample(&mut r, n, size)
        .into_iter()
        .flat_map(|i| frames[i * d..(i + 1) * d].iter().map(|&x| x as f64))
        .collect();
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = nearest(&frames[i * d..(i + 1) * d], &cent, d);
        }
        let mut sums = vec![0f64; size * d];
        let mut counts = vec![0usize; size];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for j in 0..d {
                sums[a * d + j] += frames[i * d + j] as f64;
            }
        }
        for c in 0..size {
            if counts[c] > 0 {
                for j in 0..d {
                    cent[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }
    let data: Vec<f32> = cent.into_iter().map(|x| x as f32).collect();
    Codebook::new(Tensor::from_vec(data, (size, d), &Device::Cpu)?)
}

fn nearest(x: &[f32], cent: &[f64], d: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, row) in cent.chunks_exact(d).enumerate() {
        let dist: f64 = row.iter().zip(x).map(|(a, &b)| (a - b as f64).powi(2)).sum();
        if dist < best.0 {
            best = (dist, c);
        }
    }
    best.1
}

/// Flatten valid frames of `[B,T,d]` into host rows.
pub fn valid_rows(x: &Tensor, lengths: &[usize]) -> Result<Vec<f32>> {
    let (_, _, d) = x.dims3()?;
    let host = x.to_dtype(DType::F32)?;
    let mut out = Vec::new();
    for (i, &n) in lengths.iter().enumerate() {
        let rows = host.get(i)?.narrow(0, 0, n)?.flatten_all()?.to_vec1::<f32>()?;
        debug_assert_eq!(rows.len(), n * d);
        out.extend(rows);
    }
    Ok(out)
}
