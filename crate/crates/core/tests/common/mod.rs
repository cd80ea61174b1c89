//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use ndal::config::RunConfig;
use ndal::model::Mode;
use ndal::synth::{generate_corpus, CorpusPaths, SynthSpec};
use ndal::trainer::TrainData;

/// A corpus small enough to generate in well under a second.
pub fn tiny_spec() -> SynthSpec {
    SynthSpec {
        num_speakers: 4,
        utts_per_speaker: 5,
        test_utts_per_speaker: 2,
        min_seconds: 1.0,
        max_seconds: 1.5,
        noise_seconds: 2.0,
        train_noise_files: 1,
        test_noise_files: 1,
        trials: 40,
    }
}

pub fn tiny_corpus(dir: &Path, seed: u64) -> CorpusPaths {
    generate_corpus(&tiny_spec(), seed, dir).expect("corpus")
}

/// A model a few thousand parameters in size, trained on 0.5 s crops.
pub fn tiny_config(paths: &CorpusPaths, mode: Mode, seed: u64) -> RunConfig {
    let base = paths.config.parent().expect("config dir");
    let text = std::fs::read_to_string(&paths.config).expect("config");
    let mut cfg = RunConfig::parse(&text, base).expect("config parses");
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.speakers_per_batch = 3;
    cfg.segment_seconds = 0.5;
    cfg.epochs = 1;
    cfg.steps_per_epoch = 6;
    cfg.channels = vec![8, 8, 8];
    cfg.embedding_dim = 8;
    cfg.attention_hidden = 4;
    cfg.encoder_hidden = 12;
    cfg.domain_hidden = 6;
    cfg.validate().expect("valid");
    cfg
}

pub fn load_data(cfg: &RunConfig) -> Arc<TrainData> {
    Arc::new(TrainData::load(&cfg.train_manifest, &cfg.noise_manifest).expect("train data"))
}

/// Straight threshold sweep with every FAR/FRR pair counted from scratch.
pub fn brute_force_eer(scores: &[f64], targets: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let n_tar = targets.iter().filter(|&&t| t).count() as f64;
    let n_non = targets.len() as f64 - n_tar;
    let rates = |t: f64| {
        let far = scores.iter().zip(targets).filter(|&(&s, &y)| !y && s >= t).count() as f64 / n_non;
        let frr = scores.iter().zip(targets).filter(|&(&s, &y)| y && s < t).count() as f64 / n_tar;
        (far, frr)
    };
    let mut prev = rates(thresholds[0]);
    if prev.1 >= prev.0 {
        return prev.1;
    }
    for &t in &thresholds[1..] {
        let (far, frr) = rates(t);
        if frr >= far {
            // intersect the two segments FAR(a) and FRR(a), a in [0, 1]
            let a = (prev.0 - prev.1) / ((prev.0 - prev.1) - (far - frr));
            return prev.1 + a * (frr - prev.1);
        }
        prev = (far, frr);
    }
    unreachable!("FRR reaches 1 at +inf")
}
