//! Autoregressive transcript decoder with cross-attention to the encoder.

use candle_core::{DType, Device, Tensor, D};

use super::nn::{causal_bias, key_padding_bias, sinusoidal, Attention, FeedForward, LayerNorm, Linear};
use super::params::{Init, ParamPath};
use super::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ff: FeedForward,
}

impl DecoderLayer {
    fn new(p: &mut ParamPath<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            ln1: LayerNorm::new(&mut p.pp("ln1"), d)?,
            self_attn: Attention::new(&mut p.pp("self_attn"), d, cfg.n_heads)?,
            ln2: LayerNorm::new(&mut p.pp("ln2"), d)?,
            cross_attn: Attention::new(&mut p.pp("cross_attn"), d, cfg.n_heads)?,
            ln3: LayerNorm::new(&mut p.pp("ln3"), d)?,
            ff: FeedForward::new(&mut p.pp("ff"), d, d * cfg.ff_mult)?,
        })
    }

    fn forward(&self, x: &Tensor, memory: &Tensor, self_bias: &Tensor, mem_bias: &Tensor) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.self_attn.forward(&h, &h, Some(self_bias))?)?;
        let h = self.ln2.forward(&x)?;
        let x = (&x + self.cross_attn.forward(&h, memory, Some(mem_bias))?)?;
        let h = self.ln3.forward(&x)?;
        Ok((&x + self.ff.forward(&h)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    embed: Tensor,
    layers: Vec<DecoderLayer>,
    ln_out: LayerNorm,
    out: Linear,
    d_model: usize,
    vocab_size: usize,
    max_len: usize,
}

impl Decoder {
    pub fn new(p: &mut ParamPath<'_>, cfg: &ModelConfig) -> Result<Self> {
        let classes = cfg.vocab_size + 1;
        let layers = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer::new(&mut p.pp(format!("layer{i}")), cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            embed: p.get("embed", &[classes, cfg.d_model], Init::Normal(1.0))?,
            layers,
            ln_out: LayerNorm::new(&mut p.pp("ln_out"), cfg.d_model)?,
            out: Linear::new(&mut p.pp("out"), cfg.d_model, classes)?,
            d_model: cfg.d_model,
            vocab_size: cfg.vocab_size,
            max_len: cfg.max_decode_len,
        })
    }

    /// Number of output classes: symbols plus end-of-sequence.
    pub fn classes(&self) -> usize {
        self.vocab_size + 1
    }

    fn bos(&self) -> u32 {
        self.vocab_size as u32
    }

    fn eos(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Next-token logits `[B, L, V+1]` for input prefixes `[B, L]`.
    pub fn logits(&self, memory: &Tensor, valid: &Tensor, prefix: &Tensor) -> Result<Tensor> {
        let (b, l) = prefix.dims2()?;
        let dtype = memory.dtype();
        let x = self.embed.embedding(&prefix.flatten_all()?)?.reshape((b, l, self.d_model))?;
        let pos = sinusoidal(l, self.d_model, dtype, memory.device())?;
        let mut x = x.broadcast_add(&pos.unsqueeze(0)?)?;
        let self_bias = causal_bias(l, dtype, memory.device())?;
        let mem_bias = key_padding_bias(valid)?;
        for layer in &self.layers {
            x = layer.forward(&x, memory, &self_bias, &mem_bias)?;
        }
        self.out.forward(&self.ln_out.forward(&x)?)
    }

    /// Mean teacher-forced negative log-likelihood per target token
    /// (transcript symbols plus the end token).
    pub fn nll(&self, memory: &Tensor, valid: &Tensor, transcripts: &[Vec<u32>]) -> Result<Tensor> {
        let b = memory.dims()[0];
        if transcripts.len() != b {
            return Err(Error::Argument(format!("{} transcripts for a batch of {b}", transcripts.len())));
        }
        let l = transcripts.iter().map(|t| t.len() + 1).max().unwrap_or(1);
        let mut inputs = vec![self.eos(); b * l];
        let mut targets = vec![self.eos(); b * l];
        let mut weights = vec![0f32; b * l];
        for (i, tr) in transcripts.iter().enumerate() {
            if let Some(&bad) = tr.iter().find(|&&s| s as usize >= self.vocab_size) {
                return Err(Error::Argument(format!("token {bad} outside vocabulary")));
            }
            inputs[i * l] = self.bos();
            for (j, &s) in tr.iter().enumerate() {
                inputs[i * l + j + 1] = s;
                targets[i * l + j] = s;
            }
            targets[i * l + tr.len()] = self.eos();
            weights[i * l..i * l + tr.len() + 1].fill(1.0);
        }
        let dev = memory.device();
        let inputs = Tensor::from_vec(inputs, (b, l), dev)?;
        let targets = Tensor::from_vec(targets, (b, l, 1), dev)?;
        let count: f32 = weights.iter().sum();
        let weights = Tensor::from_vec(weights, (b, l), dev)?.to_dtype(memory.dtype())?;
        let logits = self.logits(memory, valid, &inputs)?;
        let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        let picked = logp.gather(&targets, D::Minus1)?.squeeze(D::Minus1)?;
        Ok(((picked * weights)?.sum_all()?.neg()? / count as f64)?)
    }

    /// Greedy decoding; stops at the end token or the length limit.
    pub fn greedy(&self, memory: &Tensor, valid: &Tensor) -> Result<Vec<Vec<u32>>> {
        let b = memory.dims()[0];
        let mut seqs: Vec<Vec<u32>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        let mut prefix = vec![vec![self.bos()]; b];
        for _ in 0..self.max_len {
            let l = prefix[0].len();
            let flat: Vec<u32> = prefix.iter().flatten().copied().collect();
            let input = Tensor::from_vec(flat, (b, l), &Device::Cpu)?;
            let logits = self.logits(memory, valid, &input)?;
            let next = logits
                .narrow(1, l - 1, 1)?
                .squeeze(1)?
                .to_dtype(DType::F32)?
                .argmax(D::Minus1)?
                .to_vec1::<u32>()?;
            for i in 0..b {
                if !done[i] {
                    if next[i] == self.eos() {
                        done[i] = true;
                    } else {
                        seqs[i].push(next[i]);
                    }
                }
                prefix[i].push(next[i]);
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(seqs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParamStore;

    fn cfg() -> ModelConfig {
        ModelConfig { d_model: 8, n_heads: 2, vocab_size: 4, decoder_layers: 1, max_decode_len: 6, ..Default::default() }
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let cfg = cfg();
        let mut store = ParamStore::seeded(0, DType::F64);
        let dec = Decoder::new(&mut store.root().pp("decoder"), &cfg).unwrap();
        // zero the output projection so every class is equally likely
        for n in ["decoder.out.weight", "decoder.out.bias"] {
            let v = store.get(n).unwrap();
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let mem = Tensor::randn(0f64, 1.0, (1, 3, 8), &Device::Cpu).unwrap();
        let valid = Tensor::ones((1, 3), DType::F64, &Device::Cpu).unwrap();
        // one-token transcript: the symbol and the end token both cost ln(V+1)
        let nll = dec.nll(&mem, &valid, &[vec![2]]).unwrap().to_scalar::<f64>().unwrap();
        assert!((nll - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let cfg = cfg();
        let mut store = ParamStore::seeded(3, DType::F32);
        let dec = Decoder::new(&mut store.root().pp("decoder"), &cfg).unwrap();
        let mem = Tensor::randn(0f32, 1.0, (2, 4, 8), &Device::Cpu).unwrap();
        let valid = Tensor::ones((2, 4), DType::F32, &Device::Cpu).unwrap();
        let a = dec.greedy(&mem, &valid).unwrap();
        let b = dec.greedy(&mem, &valid).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.len() <= 6 && s.iter().all(|&t| t < 4)));
    }
}
