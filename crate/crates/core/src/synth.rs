//! Deterministic synthetic speaker corpus.
//!
//! Each speaker is a caricature voice: a sawtooth glottal source at a
//! speaker-specific pitch, a speaker-specific spectral tilt and breathiness,
//! and a cascade of formant resonators centred on the speaker's formant
//! set. Utterances are chains of syllables whose vowel, pitch glide and
//! loudness vary, so a model has to ignore content to identify the voice.
//! All transcendental functions come from `libm` and every random draw from
//! a ChaCha stream derived from the seed, so output bytes do not depend on
//! the platform.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dsp::{
    load_wav, log_mel, read_dataset_manifest, write_wav, DspError, NoiseSplit, N_MELS,
    SAMPLE_RATE,
};
use crate::evaluator::{compute_eer, cosine_score, read_trials, write_trials, EvalError, Trial};
use crate::seeds;

const SR: f64 = SAMPLE_RATE as f64;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
/// Lowest speaker pitch and the pitch grid spacing (Hz).
const F0_BASE: f64 = 85.0;
const F0_STEP: f64 = 9.0;

/// Formant multipliers shared by every speaker, one row per vowel.
const VOWELS: [[f64; 3]; 6] = [
    [1.0, 1.0, 1.0],
    [1.25, 0.8, 0.95],
    [0.75, 1.25, 1.05],
    [0.85, 0.7, 0.95],
    [1.15, 1.15, 1.0],
    [0.7, 0.9, 1.02],
];

pub const SEEN_CATEGORIES: [&str; 3] = ["babble", "music", "pink"];
pub const UNSEEN_CATEGORIES: [&str; 2] = ["hum", "white"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("synth spec line {line}: {message}")]
    Spec { line: usize, message: String },
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    /// The last this many utterances of each speaker form the test set.
    pub test_utts_per_speaker: usize,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub noise_seconds: f64,
    /// Files per seen category in the train split.
    pub train_noise_files: usize,
    /// Files per category in each test split.
    pub test_noise_files: usize,
    /// Approximate size of the trial list.
    pub trials: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_speakers: 20,
            utts_per_speaker: 30,
            test_utts_per_speaker: 10,
            min_seconds: 3.0,
            max_seconds: 6.0,
            noise_seconds: 10.0,
            train_noise_files: 3,
            test_noise_files: 2,
            trials: 5000,
        }
    }
}

impl SynthSpec {
    /// Same `key = value` format as the run config.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut s = SynthSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| SynthError::Spec { line: i + 1, message };
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let int = || v.parse::<usize>().map_err(|e| err(format!("`{k}`: {e}")));
            let real = || v.parse::<f64>().map_err(|e| err(format!("`{k}`: {e}")));
            match k {
                "num_speakers" => s.num_speakers = int()?,
                "utts_per_speaker" => s.utts_per_speaker = int()?,
                "test_utts_per_speaker" => s.test_utts_per_speaker = int()?,
                "min_seconds" => s.min_seconds = real()?,
                "max_seconds" => s.max_seconds = real()?,
                "noise_seconds" => s.noise_seconds = real()?,
                "train_noise_files" => s.train_noise_files = int()?,
                "test_noise_files" => s.test_noise_files = int()?,
                "trials" => s.trials = int()?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.num_speakers < 2 {
            return bad("need at least 2 speakers");
        }
        if self.test_utts_per_speaker < 2 || self.test_utts_per_speaker >= self.utts_per_speaker {
            return bad("need 2 <= test_utts_per_speaker < utts_per_speaker");
        }
        if !(self.min_seconds >= 0.1 && self.min_seconds <= self.max_seconds) {
            return bad("need 0.1 <= min_seconds <= max_seconds");
        }
        if !(self.noise_seconds >= 0.1) {
            return bad("noise_seconds must be at least 0.1");
        }
        if self.train_noise_files == 0 || self.test_noise_files == 0 {
            return bad("need at least one noise file per category and split");
        }
        if self.trials < 2 {
            return bad("need at least 2 trials");
        }
        Ok(())
    }
}

/// Voice parameters of one synthetic speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub f0: f64,
    pub formants: [f64; 3],
    pub bandwidths: [f64; 3],
    /// One-pole low-pass coefficient on the source.
    pub tilt: f64,
    pub breath: f64,
    pub vibrato_rate: f64,
    pub vibrato_depth: f64,
}

impl Voice {
    fn random<R: Rng>(rng: &mut R, f0: f64) -> Self {
        let bw = rng.gen_range(0.8..1.5);
        Voice {
            f0,
            formants: [
                rng.gen_range(350.0..800.0),
                rng.gen_range(1000.0..2200.0),
                rng.gen_range(2300.0..3300.0),
            ],
            bandwidths: [80.0 * bw, 100.0 * bw, 140.0 * bw],
            tilt: rng.gen_range(0.3..0.8),
            breath: rng.gen_range(0.01..0.08),
            vibrato_rate: rng.gen_range(4.0..7.0),
            vibrato_depth: rng.gen_range(0.005..0.02),
        }
    }
}

/// Speaker voices for a seed. Pitches sit on a shuffled 9 Hz grid with at
/// most 0.5 Hz of jitter, so any two differ by at least 8 Hz.
pub fn speaker_voices(seed: u64, num_speakers: usize) -> Vec<Voice> {
    let mut rng = seeds::rng(seed, "voices", 0);
    let mut slots: Vec<usize> = (0..num_speakers).collect();
    slots.shuffle(&mut rng);
    slots
        .into_iter()
        .map(|slot| {
            let f0 = F0_BASE + F0_STEP * slot as f64 + rng.gen_range(-0.5..0.5);
            Voice::random(&mut rng, f0)
        })
        .collect()
}

/// Two-pole resonator with unit gain at DC.
#[derive(Debug, Clone, Copy, Default)]
struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, freq: f64, bw: f64) {
        let r = libm::exp(-std::f64::consts::PI * bw / SR);
        let c = libm::cos(TWO_PI * freq / SR);
        self.a1 = 2.0 * r * c;
        self.a2 = -r * r;
        self.b0 = 1.0 - self.a1 - self.a2;
    }

    fn run(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Uniform in [-1, 1).
fn white<R: Rng>(rng: &mut R) -> f64 {
    rng.gen_range(-1.0..1.0)
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        for v in x.iter_mut() {
            *v *= peak / m;
        }
    }
}

/// Syllable chain spoken by `voice` for `seconds`.
pub fn synthesize_voice<R: Rng>(voice: &Voice, seconds: f64, rng: &mut R) -> Vec<f64> {
    let n = (seconds * SR).round() as usize;
    let mut out = vec![0.0; n];
    let mut res = [Resonator::default(); 3];
    let (mut phase, mut lp) = (0.0f64, 0.0f64);
    let mut pos = rng.gen_range(0..(0.1 * SR) as usize + 1);
    while pos < n {
        let len = (rng.gen_range(0.12..0.30) * SR) as usize;
        let gap = (rng.gen_range(0.02..0.12) * SR) as usize;
        let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
        for (k, r) in res.iter_mut().enumerate() {
            let f = voice.formants[k] * vowel[k] * rng.gen_range(0.97..1.03);
            r.tune(f, voice.bandwidths[k]);
        }
        let g0 = rng.gen_range(0.9..1.1);
        let g1 = rng.gen_range(0.9..1.1);
        let amp = rng.gen_range(0.5..1.0);
        let ramp = (0.02 * SR) as usize;
        let end = (pos + len).min(n);
        for i in pos..end {
            let k = i - pos;
            let frac = k as f64 / len as f64;
            let t = i as f64 / SR;
            let vib = 1.0 + voice.vibrato_depth * libm::sin(TWO_PI * voice.vibrato_rate * t);
            let f0 = voice.f0 * (g0 + (g1 - g0) * frac) * vib;
            phase += f0 / SR;
            phase -= libm::floor(phase);
            let src = 2.0 * phase - 1.0;
            lp = voice.tilt * lp + (1.0 - voice.tilt) * src;
            let mut y = lp + voice.breath * white(rng);
            for r in res.iter_mut() {
                y = r.run(y);
            }
            let env = if k < ramp {
                0.5 - 0.5 * libm::cos(std::f64::consts::PI * k as f64 / ramp as f64)
            } else if len - k < ramp {
                0.5 - 0.5 * libm::cos(std::f64::consts::PI * (len - k) as f64 / ramp as f64)
            } else {
                1.0
            };
            out[i] = amp * env * y;
        }
        pos = end + gap;
    }
    // faint room tone so no frame is digital silence
    for v in out.iter_mut() {
        *v += 1e-4 * white(rng);
    }
    out
}

fn pink<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    // Paul Kellet's refined pinking filter
    let mut b = [0.0f64; 7];
    (0..n)
        .map(|_| {
            let w = white(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let y = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            y
        })
        .collect()
}

fn babble<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let talkers = rng.gen_range(4..=6);
    let mut out = vec![0.0; n];
    for _ in 0..talkers {
        let f0 = rng.gen_range(95.0..260.0);
        let voice = Voice::random(rng, f0);
        let v = synthesize_voice(&voice, n as f64 / SR, rng);
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out
}

fn music<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    const SCALE: [f64; 5] = [0.0, 2.0, 4.0, 7.0, 9.0];
    let mut out = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        let len = (rng.gen_range(0.2..0.5) * SR) as usize;
        let notes = rng.gen_range(2..=3);
        for _ in 0..notes {
            let octave = rng.gen_range(0..3) as f64;
            let semis = SCALE[rng.gen_range(0..SCALE.len())] + 12.0 * octave;
            let f = 110.0 * libm::pow(2.0, semis / 12.0);
            let decay = rng.gen_range(3.0..8.0);
            for i in pos..(pos + len).min(n) {
                let t = (i - pos) as f64 / SR;
                let env = libm::exp(-decay * t);
                let s: f64 = (1..=4)
                    .map(|h| libm::sin(TWO_PI * f * h as f64 * t) / h as f64)
                    .sum();
                out[i] += env * s;
            }
        }
        pos += len;
    }
    out
}

fn hum<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let f = rng.gen_range(30.0..60.0);
    let am = rng.gen_range(0.2..1.0);
    let mut brown = 0.0f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / SR;
            let tone: f64 = (1..=20)
                .map(|h| libm::sin(TWO_PI * f * h as f64 * t) / libm::sqrt(h as f64))
                .sum();
            brown = 0.995 * brown + 0.05 * white(rng);
            (1.0 + 0.3 * libm::sin(TWO_PI * am * t)) * tone * 0.1 + brown
        })
        .collect()
}

/// One noise signal of `category` (`babble`, `music`, `pink`, `hum` or
/// `white`), peak-normalized to 0.5.
pub fn synthesize_noise<R: Rng>(category: &str, seconds: f64, rng: &mut R) -> Vec<f64> {
    let n = (seconds * SR).round() as usize;
    let mut x = match category {
        "babble" => babble(n, rng),
        "music" => music(n, rng),
        "pink" => pink(n, rng),
        "hum" => hum(n, rng),
        "white" => (0..n).map(|_| white(rng)).collect(),
        other => panic!("unknown noise category `{other}`"),
    };
    normalize_peak(&mut x, 0.5);
    x
}

fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}

/// Paths of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPaths {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub noise_manifest: PathBuf,
    pub trials: PathBuf,
    pub config: PathBuf,
}

impl CorpusPaths {
    pub fn in_dir(dir: &Path) -> Self {
        CorpusPaths {
            train_manifest: dir.join("train.lst"),
            test_manifest: dir.join("test.lst"),
            noise_manifest: dir.join("noise.lst"),
            trials: dir.join("trials.txt"),
            config: dir.join("train.conf"),
        }
    }
}

/// All ordered same-speaker pairs, capped at half of `total`, plus
/// non-target pairs filling the rest. Targets and non-targets stay within a
/// factor of two of each other whenever the corpus has enough pairs.
pub fn make_trials<R: Rng>(test_ids: &[Vec<String>], total: usize, rng: &mut R) -> Vec<Trial> {
    let c = test_ids.len();
    let mut targets = Vec::new();
    for ids in test_ids {
        for (i, a) in ids.iter().enumerate() {
            for (j, b) in ids.iter().enumerate() {
                if i != j {
                    targets.push((a.clone(), b.clone()));
                }
            }
        }
    }
    let want_tar = targets.len().min(total / 2);
    let picked: Vec<usize> = {
        let mut v = sample(rng, targets.len(), want_tar).into_vec();
        v.sort_unstable();
        v
    };
    let mut trials: Vec<Trial> = picked
        .into_iter()
        .map(|i| Trial {
            target: true,
            enroll: targets[i].0.clone(),
            test: targets[i].1.clone(),
        })
        .collect();

    // ordered pairs (speaker a, utt i, other speaker b, utt j)
    let flat: Vec<(usize, &String)> = test_ids
        .iter()
        .enumerate()
        .flat_map(|(s, ids)| ids.iter().map(move |u| (s, u)))
        .collect();
    let mut non = Vec::new();
    for &(sa, a) in &flat {
        for &(sb, b) in &flat {
            if sa != sb {
                non.push((a, b));
            }
        }
    }
    let want_non = (total - want_tar).min(non.len());
    let mut picked = sample(rng, non.len(), want_non).into_vec();
    picked.sort_unstable();
    trials.extend(picked.into_iter().map(|i| Trial {
        target: false,
        enroll: non[i].0.clone(),
        test: non[i].1.clone(),
    }));
    trials.shuffle(rng);
    debug_assert!(c >= 2);
    trials
}

fn default_train_config() -> String {
    format!(
        "# Training configuration for this synthetic corpus. Paths are relative\n\
         # to this file.\n{}",
        RunConfig::default().to_text()
    )
}

/// Writes the corpus into `out_dir`: `wav/`, `noise/`, `train.lst`,
/// `test.lst`, `noise.lst`, `trials.txt` and a default `train.conf`.
pub fn generate_corpus(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<CorpusPaths, SynthError> {
    spec.validate()?;
    let paths = CorpusPaths::in_dir(out_dir);
    let voices = speaker_voices(seed, spec.num_speakers);
    let mut train = String::new();
    let mut test = String::new();
    let mut test_ids = Vec::with_capacity(spec.num_speakers);
    for (s, voice) in voices.iter().enumerate() {
        let spk = format!("spk{s:02}");
        let dir = out_dir.join("wav").join(&spk);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut ids = Vec::new();
        for u in 0..spec.utts_per_speaker {
            let utt = format!("{spk}_u{u:03}");
            let mut rng = seeds::rng_str(seed, "utterance", &utt);
            let seconds = rng.gen_range(spec.min_seconds..=spec.max_seconds);
            let mut x = synthesize_voice(voice, seconds, &mut rng);
            normalize_peak(&mut x, rng.gen_range(0.3..0.6));
            let rel = format!("wav/{spk}/{utt}.wav");
            write_wav(out_dir.join(&rel), &to_f32(&x))?;
            let line = format!("{utt}\t{spk}\t{rel}\n");
            if u >= spec.utts_per_speaker - spec.test_utts_per_speaker {
                test.push_str(&line);
                ids.push(utt);
            } else {
                train.push_str(&line);
            }
        }
        test_ids.push(ids);
    }

    let noise_dir = out_dir.join("noise");
    std::fs::create_dir_all(&noise_dir).map_err(io_err(&noise_dir))?;
    let mut noise = String::new();
    let mut plan: Vec<(&str, NoiseSplit, usize)> = Vec::new();
    for cat in SEEN_CATEGORIES {
        plan.push((cat, NoiseSplit::Train, spec.train_noise_files));
        plan.push((cat, NoiseSplit::TestSeen, spec.test_noise_files));
    }
    for cat in UNSEEN_CATEGORIES {
        plan.push((cat, NoiseSplit::TestUnseen, spec.test_noise_files));
    }
    for (cat, split, count) in plan {
        for i in 0..count {
            let id = format!("{cat}_{split}_{i}");
            let mut rng = seeds::rng_str(seed, "noise", &id);
            let x = synthesize_noise(cat, spec.noise_seconds, &mut rng);
            let rel = format!("noise/{id}.wav");
            write_wav(out_dir.join(&rel), &to_f32(&x))?;
            noise.push_str(&format!("{id}\t{cat}\t{split}\t{rel}\n"));
        }
    }

    let mut rng = seeds::rng(seed, "trials", 0);
    let trials = make_trials(&test_ids, spec.trials, &mut rng);
    let write = |p: &Path, text: &str| std::fs::write(p, text).map_err(io_err(p));
    write(&paths.train_manifest, &train)?;
    write(&paths.test_manifest, &test)?;
    write(&paths.noise_manifest, &noise)?;
    write_trials(&paths.trials, &trials).map_err(io_err(&paths.trials))?;
    write(&paths.config, &default_train_config())?;
    Ok(paths)
}

/// SHA-256 over every file under `dir`, in sorted relative-path order.
pub fn corpus_digest(dir: &Path) -> Result<String, SynthError> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, PathBuf>) -> Result<(), SynthError> {
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("under base").to_string_lossy().replace('\\', "/");
                out.insert(rel, path);
            }
        }
        Ok(())
    }
    let mut files = BTreeMap::new();
    walk(dir, dir, &mut files)?;
    let mut h = Sha256::new();
    for (rel, path) in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(std::fs::read(&path).map_err(io_err(&path))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Corpus self-test: EER of cosine scoring on raw (un-normalized) mean
/// log-mel vectors over the generated trials.
pub fn baseline_eer(paths: &CorpusPaths) -> Result<f64, SynthError> {
    let mut means = BTreeMap::new();
    for r in read_dataset_manifest(&paths.test_manifest)? {
        let f = log_mel(&load_wav(&r.wav_path)?)?;
        let m: Vec<f32> = f.row_means().into_iter().map(|v| v as f32).collect();
        debug_assert_eq!(m.len(), N_MELS);
        means.insert(r.utt_id, m);
    }
    let trials = read_trials(&paths.trials)?;
    let mut scores = Vec::with_capacity(trials.len());
    for t in &trials {
        let get = |id: &str| means.get(id).ok_or_else(|| EvalError::UnknownUtterance(id.to_string()));
        scores.push(cosine_score(get(&t.enroll)?, get(&t.test)?)?);
    }
    let targets: Vec<bool> = trials.iter().map(|t| t.target).collect();
    Ok(compute_eer(&scores, &targets)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn voices_are_spaced_and_seeded() {
        let v = speaker_voices(3, 40);
        let mut f0: Vec<f64> = v.iter().map(|x| x.f0).collect();
        f0.sort_by(f64::total_cmp);
        assert!(f0.windows(2).all(|w| w[1] - w[0] >= 8.0));
        assert_eq!(v, speaker_voices(3, 40));
        assert_ne!(v, speaker_voices(4, 40));
    }

    #[test]
    fn voice_and_noise_signals_are_bounded_and_nonsilent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = synthesize_voice(&speaker_voices(1, 2)[0], 1.0, &mut rng);
        assert_eq!(v.len(), 16000);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(v.iter().any(|x| x.abs() > 1e-2));
        for cat in SEEN_CATEGORIES.iter().chain(&UNSEEN_CATEGORIES) {
            let x = synthesize_noise(cat, 0.5, &mut rng);
            assert_eq!(x.len(), 8000);
            let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - 0.5).abs() < 1e-12, "{cat}");
        }
    }

    #[test]
    fn trial_balance() {
        let ids: Vec<Vec<String>> = (0..20)
            .map(|s| (0..10).map(|u| format!("s{s}u{u}")).collect())
            .collect();
        let trials = make_trials(&ids, 5000, &mut ChaCha8Rng::seed_from_u64(0));
        let tar = trials.iter().filter(|t| t.target).count();
        let non = trials.len() - tar;
        assert_eq!(trials.len(), 5000);
        assert!(tar * 2 >= non && non * 2 >= tar, "{tar} vs {non}");
        assert!(trials.iter().all(|t| t.enroll != t.test));
        assert!(trials
            .iter()
            .all(|t| t.target == (t.enroll.split('u').next() == t.test.split('u').next())));
    }

    #[test]
    fn spec_parsing() {
        let s = SynthSpec::parse("num_speakers = 4\nutts_per_speaker = 6 # small\ntest_utts_per_speaker = 2\n").unwrap();
        assert_eq!((s.num_speakers, s.utts_per_speaker), (4, 6));
        assert!(SynthSpec::parse("speakers = 4\n").is_err());
        assert!(SynthSpec::parse("test_utts_per_speaker = 30\n").is_err());
        assert_eq!(SynthSpec::default().num_speakers * SynthSpec::default().utts_per_speaker, 600);
    }
}
