//! Small transformer building blocks on top of candle tensors.
//!
//! Layer norm and attention are written from primitive ops so that every
//! operation has a backward pass in any float dtype.

use candle_core::{DType, Device, Module, Tensor, D};

use super::params::{Init, ParamPath};
use crate::Result;

/// Additive bias that removes a key from attention.
pub(crate) const NEG_INF: f64 = -1e9;

#[derive(Debug, Clone)]
pub struct Linear {
    inner: candle_nn::Linear,
}

impl Linear {
    pub fn new(p: &mut ParamPath<'_>, d_in: usize, d_out: usize) -> Result<Self> {
        let w = p.get("weight", &[d_out, d_in], Init::FanIn(d_in))?;
        let b = p.get("bias", &[d_out], Init::FanIn(d_in))?;
        Ok(Self {
            inner: candle_nn::Linear::new(w, Some(b)),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.inner.forward(x)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(p: &mut ParamPath<'_>, d: usize) -> Result<Self> {
        Ok(Self {
            weight: p.get("weight", &[d], Init::Const(1.0))?,
            bias: p.get("bias", &[d], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let normed = standardize(x, self.eps)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Zero mean, unit variance over the last dimension.
pub fn standardize(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    n_heads: usize,
}

impl Attention {
    pub fn new(p: &mut ParamPath<'_>, d: usize, n_heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&mut p.pp("q"), d, d)?,
            k: Linear::new(&mut p.pp("k"), d, d)?,
            v: Linear::new(&mut p.pp("v"), d, d)?,
            out: Linear::new(&mut p.pp("out"), d, d)?,
            n_heads,
        })
    }

    fn heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        Ok(x.reshape((b, t, self.n_heads, d / self.n_heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `query: [B,Tq,d]`, `memory: [B,Tk,d]`, `bias` broadcastable to `[B,H,Tq,Tk]`.
    pub fn forward(&self, query: &Tensor, memory: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, tq, d) = query.dims3()?;
        let dh = d / self.n_heads;
        let q = self.heads(&self.q.forward(query)?)?;
        let k = self.heads(&self.k.forward(memory)?)?;
        let v = self.heads(&self.v.forward(memory)?)?;
        let mut scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = probs.matmul(&v)?.transpose(1, 2)?.reshape((b, tq, d))?;
        self.out.forward(&ctx)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(p: &mut ParamPath<'_>, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(&mut p.pp("up"), d, hidden)?,
            down: Linear::new(&mut p.pp("down"), hidden, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu_erf()?)
    }
}

/// Fixed sinusoidal position table `[T, d]`.
pub fn sinusoidal(t: usize, d: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = vec![0f64; t * d];
    for pos in 0..t {
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = (pos as f64 * freq).sin();
            data[pos * d + 2 * i + 1] = (pos as f64 * freq).cos();
        }
    }
    Ok(Tensor::from_vec(data, (t, d), device)?.to_dtype(dtype)?)
}

/// `[B,T]` validity (1 valid / 0 pad) to an additive key bias `[B,1,1,T]`.
pub fn key_padding_bias(valid: &Tensor) -> Result<Tensor> {
    let (b, t) = valid.dims2()?;
    let bias = ((valid.ones_like()? - valid)? * NEG_INF.abs())?.neg()?;
    Ok(bias.reshape((b, 1, 1, t))?)
}

/// Causal additive bias `[1,1,L,L]`.
pub fn causal_bias(len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let data: Vec<f64> = (0..len * len)
        .map(|i| if i % len > i / len { NEG_INF } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(data, (1, 1, len, len), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParamStore;

    #[test]
    fn standardize_rows() {
        let x = Tensor::new(&[[1f64, 2.0, 3.0], [4.0, 4.0, 10.0]], &Device::Cpu).unwrap();
        let y = standardize(&x, 0.0).unwrap().to_vec2::<f64>().unwrap();
        for row in y {
            let m: f64 = row.iter().sum::<f64>() / 3.0;
            let v: f64 = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_keys_get_no_attention() {
        let mut store = ParamStore::seeded(0, DType::F64);
        let attn = Attention::new(&mut store.root().pp("a"), 4, 2).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 3, 4), &Device::Cpu).unwrap();
        let valid = Tensor::new(&[[1f64, 1.0, 0.0]], &Device::Cpu).unwrap();
        let bias = key_padding_bias(&valid).unwrap();
        let y1 = attn.forward(&x, &x, Some(&bias)).unwrap();
        // change the padded frame only
        let x2 = Tensor::cat(&[x.narrow(1, 0, 2).unwrap(), (x.narrow(1, 2, 1).unwrap() * 7.0).unwrap()], 1).unwrap();
        let y2 = attn.forward(&x2, &x2, Some(&bias)).unwrap();
        let d = (y1.narrow(1, 0, 2).unwrap() - y2.narrow(1, 0, 2).unwrap())
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn causal_bias_masks_future() {
        let b = causal_bias(3, DType::F64, &Device::Cpu).unwrap().reshape((3, 3)).unwrap();
        let v = b.to_vec2::<f64>().unwrap();
        assert_eq!(v[0][1], NEG_INF);
        assert_eq!(v[1][0], 0.0);
        assert_eq!(v[2][2], 0.0);
    }
}
