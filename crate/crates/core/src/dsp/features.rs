//! Log-mel features, cepstral mean subtraction, SpecAugment and cropping.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use super::{DspError, Utterance, SAMPLE_RATE};

pub const N_MELS: usize = 80;
/// 25 ms at 16 kHz.
pub const FRAME_LENGTH: usize = 400;
/// 10 ms at 16 kHz.
pub const FRAME_SHIFT: usize = 160;
pub const N_FFT: usize = 512;
const F_MIN: f64 = 20.0;
const F_MAX: f64 = 7600.0;
const LOG_FLOOR: f32 = 1e-6;

/// `N_MELS x frames` matrix, row-major (one row per mel band).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), N_MELS * frames, "feature matrix size");
        FeatureMatrix { frames, data }
    }

    pub fn row(&self, mel: usize) -> &[f32] {
        &self.data[mel * self.frames..(mel + 1) * self.frames]
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.data[mel * self.frames + frame]
    }

    pub fn row_means(&self) -> Vec<f64> {
        (0..N_MELS)
            .map(|m| self.row(m).iter().map(|&v| v as f64).sum::<f64>() / self.frames as f64)
            .collect()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequency (Hz) of each triangular filter.
pub fn mel_center_frequencies() -> Vec<f64> {
    mel_edges()[1..=N_MELS].to_vec()
}

fn mel_edges() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

struct Filter {
    first_bin: usize,
    weights: Vec<f32>,
}

struct FrontEnd {
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
    filters: Vec<Filter>,
}

impl FrontEnd {
    fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let window = (0..FRAME_LENGTH)
            .map(|n| {
                (0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FRAME_LENGTH as f64).cos())
                    as f32
            })
            .collect();
        let edges = mel_edges();
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        let filters = (0..N_MELS)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let mut first_bin = None;
                let mut weights = Vec::new();
                for k in 0..=N_FFT / 2 {
                    let f = k as f64 * bin_hz;
                    let w = if f > l && f < c {
                        (f - l) / (c - l)
                    } else if f >= c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first_bin.get_or_insert(k);
                        weights.push(w as f32);
                    } else if first_bin.is_some() {
                        break;
                    }
                }
                Filter {
                    first_bin: first_bin.unwrap_or(0),
                    weights,
                }
            })
            .collect();
        FrontEnd {
            fft,
            window,
            filters,
        }
    }

    fn get() -> &'static FrontEnd {
        static FRONT_END: OnceLock<FrontEnd> = OnceLock::new();
        FRONT_END.get_or_init(FrontEnd::new)
    }
}

pub fn frame_count(samples: usize) -> usize {
    if samples < FRAME_LENGTH {
        0
    } else {
        1 + (samples - FRAME_LENGTH) / FRAME_SHIFT
    }
}

/// 80-band log-mel spectrogram: Hann window of 400 samples, hop 160,
/// 512-point power spectrum, triangular filters over 20-7600 Hz, natural log
/// of `energy + 1e-6`.
pub fn log_mel(u: &Utterance) -> Result<FeatureMatrix, DspError> {
    let t = frame_count(u.samples.len());
    if t == 0 {
        return Err(DspError::TooShort(u.samples.len()));
    }
    let fe = FrontEnd::get();
    let mut data = vec![0.0f32; N_MELS * t];
    let mut buf = vec![Complex32::new(0.0, 0.0); N_FFT];
    let mut scratch = vec![Complex32::new(0.0, 0.0); fe.fft.get_inplace_scratch_len()];
    let mut power = vec![0.0f32; N_FFT / 2 + 1];
    for frame in 0..t {
        let start = frame * FRAME_SHIFT;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < FRAME_LENGTH {
                Complex32::new(u.samples[start + i] * fe.window[i], 0.0)
            } else {
                Complex32::new(0.0, 0.0)
            };
        }
        fe.fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (m, f) in fe.filters.iter().enumerate() {
            let e: f32 = f
                .weights
                .iter()
                .zip(&power[f.first_bin..])
                .map(|(w, p)| w * p)
                .sum();
            data[m * t + frame] = (e + LOG_FLOOR).ln();
        }
    }
    Ok(FeatureMatrix::new(t, data))
}

/// Cepstral mean subtraction: every mel row gets zero mean.
pub fn cms(mut f: FeatureMatrix) -> FeatureMatrix {
    let t = f.frames;
    for row in f.data.chunks_mut(t) {
        let mean = (row.iter().map(|&v| v as f64).sum::<f64>() / t as f64) as f32;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    f
}

/// Zeroes `width` mel rows starting at `offset`, and the same for frames.
pub fn apply_masks(
    mut f: FeatureMatrix,
    freq: (usize, usize),
    time: (usize, usize),
) -> FeatureMatrix {
    let t = f.frames;
    let (foff, fw) = freq;
    for m in foff..(foff + fw).min(N_MELS) {
        f.data[m * t..(m + 1) * t].fill(0.0);
    }
    let (toff, tw) = time;
    for m in 0..N_MELS {
        for j in toff..(toff + tw).min(t) {
            f.data[m * t + j] = 0.0;
        }
    }
    f
}

/// One frequency mask of width uniform in `0..=10` rows and one time mask of
/// width uniform in `0..=5` frames, each at a uniform valid offset.
pub fn spec_augment<R: Rng>(f: FeatureMatrix, rng: &mut R) -> FeatureMatrix {
    let fw = rng.gen_range(0..=10usize);
    let foff = rng.gen_range(0..=N_MELS - fw);
    let tw = rng.gen_range(0..=5usize).min(f.frames);
    let toff = rng.gen_range(0..=f.frames - tw);
    apply_masks(f, (foff, fw), (toff, tw))
}

/// Random `seconds`-long window; shorter inputs are wrap-padded from the
/// start.
pub fn crop_segment<R: Rng>(u: &Utterance, seconds: f64, rng: &mut R) -> Utterance {
    assert!(seconds > 0.0, "crop length must be positive");
    let len = (seconds * u.sample_rate as f64).round() as usize;
    let n = u.samples.len();
    if n >= len {
        let start = rng.gen_range(0..=n - len);
        u.with_samples(u.samples[start..start + len].to_vec())
    } else {
        u.with_samples(u.samples.iter().copied().cycle().take(len).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn utt(samples: Vec<f32>) -> Utterance {
        Utterance::new("u", samples, 0)
    }

    #[test]
    fn frame_count_formula() {
        let f = log_mel(&utt(vec![0.0; 48000])).unwrap();
        assert_eq!(f.frames, 1 + (48000 - 400) / 160);
        assert_eq!(f.frames, 298);
        assert_eq!(log_mel(&utt(vec![0.0; 400])).unwrap().frames, 1);
        assert!(matches!(log_mel(&utt(vec![0.0; 399])), Err(DspError::TooShort(399))));
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let f = log_mel(&utt(vec![0.0; 4000])).unwrap();
        let floor = (1e-6f32).ln();
        assert!(f.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn tone_peaks_in_nearest_filter() {
        let s: Vec<f32> = (0..16000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin() as f32 * 0.5)
            .collect();
        let f = log_mel(&utt(s)).unwrap();
        let centers = mel_center_frequencies();
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let means = f.row_means();
        let argmax = means
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn filter_centers_span_the_band() {
        let c = mel_center_frequencies();
        assert_eq!(c.len(), 80);
        assert!(c[0] > 20.0 && c[79] < 7600.0);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cms_cases() {
        let constant = FeatureMatrix::new(5, vec![3.0; 400]);
        assert!(cms(constant).data.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let random = FeatureMatrix::new(100, (0..8000).map(|_| rng.gen_range(-5.0..5.0)).collect());
        let once = cms(random);
        assert!(once.row_means().iter().all(|m| m.abs() < 1e-5));
        let twice = cms(once.clone());
        for (a, b) in once.data.iter().zip(&twice.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn masks_zero_expected_cells() {
        let f = FeatureMatrix::new(30, vec![1.0; N_MELS * 30]);
        let same = apply_masks(f.clone(), (5, 0), (3, 0));
        assert_eq!(same, f);
        let masked = apply_masks(f.clone(), (7, 10), (0, 0));
        assert_eq!(masked.data.iter().filter(|&&v| v == 0.0).count(), 10 * 30);
        let both = apply_masks(f, (0, 2), (10, 5));
        assert_eq!(both.data.iter().filter(|&&v| v == 0.0).count(), 2 * 30 + 5 * 78);
    }

    #[test]
    fn spec_augment_is_seeded() {
        let f = FeatureMatrix::new(50, (0..N_MELS * 50).map(|i| i as f32 + 1.0).collect());
        let a = spec_augment(f.clone(), &mut ChaCha8Rng::seed_from_u64(11));
        let b = spec_augment(f.clone(), &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        let zeros = a.data.iter().filter(|&&v| v == 0.0).count();
        assert!(zeros <= 10 * 50 + 5 * N_MELS);
    }

    #[test]
    fn crop_bounds_and_wrap() {
        let long = utt((0..160000).map(|i| i as f32).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let c = crop_segment(&long, 3.0, &mut rng);
            assert_eq!(c.samples.len(), 48000);
            let start = c.samples[0] as usize;
            assert!(start <= 112000);
            assert_eq!(c.samples[47999] as usize, start + 47999);
        }
        let short = utt((0..32000).map(|i| i as f32).collect());
        let c = crop_segment(&short, 3.0, &mut rng);
        assert_eq!(c.samples.len(), 48000);
        assert_eq!(&c.samples[32000..], &short.samples[..16000]);
        let a = crop_segment(&long, 3.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = crop_segment(&long, 3.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
