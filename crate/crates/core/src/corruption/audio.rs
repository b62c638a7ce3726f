use super::{AudioEvent, CorruptionPlan};
use crate::data::NoiseBanks;
use crate::tensor_io::HostTensor;
use crate::{Error, Result};

/// Result of mixing noise into a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Mix {
    pub output: Vec<f64>,
    /// Scale applied to the noise.
    pub alpha: f64,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `signal + α·noise` with `α = sqrt(P_s / (P_n · 10^(snr/10)))`, powers
/// being mean squares over the span.
pub fn mix_noise_at_snr(signal: &[f64], noise: &[f64], snr_db: f64) -> Result<Mix> {
    if signal.len() != noise.len() {
        return Err(Error::Argument(format!(
            "signal has {} values, noise has {}",
            signal.len(),
            noise.len()
        )));
    }
    if signal.is_empty() {
        return Err(Error::Argument("cannot mix an empty span".into()));
    }
    let ps = power(signal);
    let pn = power(noise);
    if pn == 0.0 {
        return Err(Error::Math("noise has zero power on the span".into()));
    }
    if ps == 0.0 {
        return Err(Error::Math("signal has zero power on the span; SNR is undefined".into()));
    }
    let alpha = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let output = signal.iter().zip(noise).map(|(s, n)| s + alpha * n).collect();
    Ok(Mix { output, alpha })
}

/// `10·log10(P_signal / P_noise)` for an already scaled noise.
pub fn snr_db_achieved(signal: &[f64], scaled_noise: &[f64]) -> f64 {
    10.0 * (power(signal) / power(scaled_noise)).log10()
}

fn mix_event(out: &mut HostTensor, ev: &AudioEvent, banks: &NoiseBanks) -> Result<f64> {
    let clip = banks.clip(&ev.clip_id)?;
    let d = out.row_len();
    if clip.track.row_len() != d {
        return Err(Error::Argument(format!(
            "clip {} has {} features, audio has {d}",
            clip.id,
            clip.track.row_len()
        )));
    }
    if ev.start + ev.len > out.len() {
        return Err(Error::Argument(format!(
            "audio event [{}, {}) exceeds T={}",
            ev.start,
            ev.start + ev.len,
            out.len()
        )));
    }
    let clip_len = clip.track.len();
    let signal: Vec<f64> = (ev.start..ev.start + ev.len)
        .flat_map(|t| out.row(t).iter().map(|&v| v as f64))
        .collect();
    let noise: Vec<f64> = (0..ev.len)
        .flat_map(|k| clip.track.row((ev.clip_offset + k) % clip_len).iter().map(|&v| v as f64))
        .collect();
    let mix = mix_noise_at_snr(&signal, &noise, ev.snr_db)?;
    for (k, t) in (ev.start..ev.start + ev.len).enumerate() {
        for (o, v) in out.row_mut(t).iter_mut().zip(&mix.output[k * d..(k + 1) * d]) {
            *o = *v as f32;
        }
    }
    Ok(mix.alpha)
}

/// Apply the plan's audio augmentation and events. Frames outside the
/// events (and outside any augmentation) are returned untouched.
pub fn apply_audio(audio: &HostTensor, plan: &CorruptionPlan, banks: &NoiseBanks) -> Result<HostTensor> {
    let mut out = audio.clone();
    if let Some(aug) = &plan.audio_augment {
        mix_event(&mut out, aug, banks)?;
    }
    for ev in &plan.audio_events {
        mix_event(&mut out, ev, banks)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_alpha() {
        // P_s = 1, P_n = 4, 0 dB → α = 0.5
        let mix = mix_noise_at_snr(&[1.0, -1.0], &[2.0, 2.0], 0.0).unwrap();
        assert!((mix.alpha - 0.5).abs() < 1e-15);
        assert_eq!(mix.output, vec![2.0, 0.0]);
    }

    #[test]
    fn zero_power_is_math_error() {
        assert!(matches!(mix_noise_at_snr(&[1.0], &[0.0], 0.0), Err(Error::Math(_))));
        assert!(matches!(mix_noise_at_snr(&[0.0], &[1.0], 0.0), Err(Error::Math(_))));
        assert!(matches!(mix_noise_at_snr(&[1.0], &[1.0, 2.0], 0.0), Err(Error::Argument(_))));
    }

    #[test]
    fn high_snr_returns_signal() {
        let s = [0.3, -2.0, 1.5];
        let mix = mix_noise_at_snr(&s, &[1.0, 1.0, -1.0], 300.0).unwrap();
        let inf_norm = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (o, v) in mix.output.iter().zip(&s) {
            assert!((o - v).abs() < 1e-6 * inf_norm);
        }
    }
}
