use super::{AugLabel, DspError, Utterance};

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / x.len() as f64).sqrt()
}

/// `20 log10(rms(signal) / rms(noise))`.
pub fn measured_snr_db(signal: &[f32], noise: &[f32]) -> f64 {
    20.0 * (rms(signal) / rms(noise)).log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixInfo {
    pub snr_db: f64,
    /// Gain applied to the length-fitted noise.
    pub gain: f64,
    /// Set when the mixture exceeded full scale and was peak-normalized by
    /// this factor.
    pub peak_scale: Option<f64>,
    /// The clean input had zero energy and was returned unchanged.
    pub silent_clean: bool,
}

/// Adds `noise` to `clean` at `snr_db`, measured over full-segment RMS.
///
/// The noise is looped or truncated to the clean length before its RMS is
/// taken, so the requested SNR holds for the noise actually added.
pub fn mix_at_snr(
    clean: &Utterance,
    noise: &[f32],
    snr_db: f64,
) -> Result<(Utterance, MixInfo), DspError> {
    if !snr_db.is_finite() {
        return Err(DspError::InvalidSnr(snr_db));
    }
    if noise.is_empty() {
        return Err(DspError::SilentNoise);
    }
    let n = clean.samples.len();
    let fitted: Vec<f32> = noise.iter().copied().cycle().take(n).collect();
    let noise_rms = rms(&fitted);
    if noise_rms == 0.0 {
        return Err(DspError::SilentNoise);
    }
    let clean_rms = rms(&clean.samples);
    if clean_rms == 0.0 {
        log::warn!("mix_at_snr: clean utterance `{}` is silent, left unchanged", clean.utt_id);
        let mut out = clean.clone();
        out.aug_label = AugLabel::Augmented;
        return Ok((
            out,
            MixInfo {
                snr_db,
                gain: 0.0,
                peak_scale: None,
                silent_clean: true,
            },
        ));
    }
    let gain = clean_rms / (noise_rms * 10f64.powf(snr_db / 20.0));
    let mut mixed: Vec<f64> = clean
        .samples
        .iter()
        .zip(&fitted)
        .map(|(&c, &z)| c as f64 + gain * z as f64)
        .collect();
    let peak = mixed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak_scale = (peak > 1.0).then(|| {
        let s = 1.0 / peak;
        for v in mixed.iter_mut() {
            *v *= s;
        }
        s
    });
    let mut out = clean.with_samples(mixed.into_iter().map(|v| v as f32).collect());
    out.aug_label = AugLabel::Augmented;
    Ok((
        out,
        MixInfo {
            snr_db,
            gain,
            peak_scale,
            silent_clean: false,
        },
    ))
}
