use ndal::dsp::{
    cms, load_wav, log_mel, measured_snr_db, mix_at_snr, read_dataset_manifest, write_wav,
    DspError, NoiseBank, NoiseSplit, Utterance, N_MELS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

fn random_signal(rng: &mut ChaCha8Rng, n: usize, amp: f32) -> Vec<f32> {
    (0..n).map(|_| amp * rng.gen_range(-1.0f32..1.0)).collect()
}

/// The noise actually present in a mixture: `mix - scale * clean`.
fn recovered_snr(clean: &Utterance, mixed: &Utterance, peak_scale: Option<f64>) -> f64 {
    let s = peak_scale.unwrap_or(1.0);
    let signal: Vec<f32> = clean.samples.iter().map(|&c| (c as f64 * s) as f32).collect();
    let noise: Vec<f32> = mixed.samples.iter().zip(&signal).map(|(&m, &c)| m - c).collect();
    measured_snr_db(&signal, &noise)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixing_hits_the_requested_snr(
        seed in any::<u64>(),
        snr in 0.0f64..20.0,
        clean_len in 1600usize..8000,
        noise_len in 400usize..12000,
        clean_amp in 0.01f32..0.9,
        noise_amp in 0.01f32..0.9,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = Utterance::new("u", random_signal(&mut rng, clean_len, clean_amp), 0);
        let noise = random_signal(&mut rng, noise_len, noise_amp);
        let (mixed, info) = mix_at_snr(&clean, &noise, snr).unwrap();
        prop_assert_eq!(mixed.samples.len(), clean.samples.len());
        prop_assert!(mixed.samples.iter().all(|v| v.abs() <= 1.0));
        let got = recovered_snr(&clean, &mixed, info.peak_scale);
        prop_assert!((got - snr).abs() < 0.1, "requested {} measured {}", snr, got);
    }

    #[test]
    fn cms_leaves_every_band_zero_mean(seed in any::<u64>(), n in 800usize..4000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Utterance::new("u", random_signal(&mut rng, n, 0.5), 0);
        let f = cms(log_mel(&u).unwrap());
        for m in f.row_means() {
            prop_assert!(m.abs() < 1e-4);
        }
    }
}

#[test]
fn bad_snr_and_silent_noise_are_rejected() {
    let clean = Utterance::new("u", vec![0.1; 100], 0);
    assert!(matches!(mix_at_snr(&clean, &[0.0; 10], 5.0), Err(DspError::SilentNoise)));
    assert!(matches!(mix_at_snr(&clean, &[0.1; 10], f64::NAN), Err(DspError::InvalidSnr(_))));
}

#[test]
fn generated_corpus_round_trips_through_the_loaders() {
    let dir = tempfile::tempdir().unwrap();
    let paths = common::tiny_corpus(dir.path(), 3);
    let train = read_dataset_manifest(&paths.train_manifest).unwrap();
    let test = read_dataset_manifest(&paths.test_manifest).unwrap();
    assert_eq!(train.len(), 4 * 3);
    assert_eq!(test.len(), 4 * 2);
    let u = load_wav(&train[0].wav_path).unwrap();
    assert!(u.duration_seconds() >= 1.0 && u.duration_seconds() <= 1.5 + 1e-3);
    let f = log_mel(&u).unwrap();
    assert_eq!(f.data.len(), N_MELS * f.frames);

    let bank = NoiseBank::load(&paths.noise_manifest).unwrap();
    assert_eq!(bank.categories(NoiseSplit::Train), ["babble", "music", "pink"]);
    assert_eq!(bank.categories(NoiseSplit::TestUnseen), ["hum", "white"]);
    assert!(matches!(bank.test_files("nonexistent"), Err(DspError::SplitViolation(_))));
}

#[test]
fn noise_manifest_reusing_a_train_file_for_test_is_a_split_violation() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("n.wav");
    write_wav(&wav, &[0.1, -0.2, 0.3, -0.1]).unwrap();
    let manifest = dir.path().join("noise.lst");
    std::fs::write(&manifest, "a\tpink\ttrain\tn.wav\nb\tpink\ttest-seen\tn.wav\n").unwrap();
    assert!(matches!(NoiseBank::load(&manifest), Err(DspError::SplitViolation(_))));
}
