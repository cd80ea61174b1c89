//! Embedding extraction, cosine scoring, EER and the noise-condition trial
//! harness.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use ndal_autodiff::{Checkpoint, Tape, Tensor};
use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::{cms, log_mel, mix_at_snr, DspError, NoiseBank, NoiseSplit, Utterance, N_MELS};
use crate::model::{Model, ModelError};
use crate::seeds;

pub const REPORT_HEADER: &str = "condition,snr_db,eer_percent,threshold,num_trials";
pub const DEFAULT_SNRS: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("score set needs at least one target and one non-target trial")]
    DegenerateSet,
    #[error("cannot score a zero vector")]
    ZeroVector,
    #[error("trial list {path} line {line}: {reason}")]
    Trials {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("utterance `{0}` is not in the test manifest")]
    UnknownUtterance(String),
    #[error("bad condition spec: {0}")]
    Condition(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
}

/// `label enroll_id test_id` per line, label 0 or 1.
pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        let err = |reason: &str| EvalError::Trials {
            path: path.display().to_string(),
            line: i + 1,
            reason: reason.to_string(),
        };
        if cols.len() != 3 {
            return Err(err("expected `label enroll test`"));
        }
        let target = match cols[0] {
            "1" => true,
            "0" => false,
            _ => return Err(err("label must be 0 or 1")),
        };
        out.push(Trial {
            target,
            enroll: cols[1].to_string(),
            test: cols[2].to_string(),
        });
    }
    Ok(out)
}

pub fn write_trials(path: impl AsRef<Path>, trials: &[Trial]) -> std::io::Result<()> {
    let text: String = trials
        .iter()
        .map(|t| format!("{} {} {}\n", u8::from(t.target), t.enroll, t.test))
        .collect();
    std::fs::write(path, text)
}

/// `<a, b> / (|a| |b|)`, accumulated in `f64`.
pub fn cosine_score(a: &[f32], b: &[f32]) -> Result<f64, EvalError> {
    assert_eq!(a.len(), b.len(), "embedding sizes differ");
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Equal error rate and its threshold.
///
/// Candidate thresholds are the sorted unique scores followed by `+inf`.
/// At threshold `t`, FAR is the share of non-targets scoring `>= t` and FRR
/// the share of targets scoring `< t`. FAR falls and FRR rises along the
/// sweep; at the first threshold where `FRR >= FAR` the EER is read off the
/// straight line joining it to the previous operating point. A set with one
/// distinct score therefore gives 0.5.
pub fn compute_eer(scores: &[f64], targets: &[bool]) -> Result<(f64, f64), EvalError> {
    assert_eq!(scores.len(), targets.len(), "scores and labels differ in length");
    let n_tar = targets.iter().filter(|&&t| t).count();
    let n_non = targets.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(EvalError::DegenerateSet);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // (threshold, far, frr) at each unique score, then at +inf
    let mut points = Vec::new();
    let (mut tar_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        points.push((
            t,
            (n_non - non_below) as f64 / n_non as f64,
            tar_below as f64 / n_tar as f64,
        ));
        while i < order.len() && scores[order[i]] == t {
            if targets[order[i]] {
                tar_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push((f64::INFINITY, 0.0, 1.0));

    let k = points
        .iter()
        .position(|&(_, far, frr)| frr >= far)
        .expect("the +inf point always crosses");
    if k == 0 {
        // unreachable with n_non > 0: the lowest threshold accepts every
        // non-target
        return Ok((points[0].2, points[0].0));
    }
    let (t0, far0, frr0) = points[k - 1];
    let (t1, far1, frr1) = points[k];
    let d0 = far0 - frr0;
    let d1 = far1 - frr1;
    let alpha = d0 / (d0 - d1);
    let eer = frr0 + alpha * (frr1 - frr0);
    let threshold = if t1.is_finite() { t0 + alpha * (t1 - t0) } else { t0 };
    Ok((eer, threshold))
}

/// Eval-mode embedding of a whole utterance.
pub fn extract_embedding(model: &Model<f32>, u: &Utterance) -> Result<Vec<f32>, EvalError> {
    let f = cms(log_mel(u)?);
    let x = Tensor::new(vec![1, N_MELS, f.frames], f.data).expect("feature shape");
    let mut tape = Tape::new();
    let p = model.bind_frozen(&mut tape);
    let xv = tape.constant(x);
    let e = model.embed(&mut tape, &p, xv)?;
    Ok(tape.value(e).data().to_vec())
}

/// Hex SHA-256 of a checkpoint's serialized bytes.
pub fn checkpoint_hash(ckpt: &Checkpoint) -> String {
    hex::encode(Sha256::digest(ckpt.to_bytes()))
}

/// Test-time corruption applied to an utterance.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Clean,
    Noise { category: String, snr_db: f64 },
}

impl Condition {
    pub fn name(&self) -> &str {
        match self {
            Condition::Clean => "clean",
            Condition::Noise { category, .. } => category,
        }
    }

    pub fn snr_db(&self) -> Option<f64> {
        match self {
            Condition::Clean => None,
            Condition::Noise { snr_db, .. } => Some(*snr_db),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clean => f.write_str("clean"),
            Condition::Noise { category, snr_db } => write!(f, "{category}@{snr_db}dB"),
        }
    }
}

/// Parses a `;`-separated condition list. Items are `clean`, a category
/// name, `seen` (every test-seen category), `unseen` (every test-unseen
/// category) or `all` (clean plus every test category), each optionally
/// followed by `:snr,snr,...`. Without an SNR list the default
/// `0,5,10,15,20` is used.
pub fn parse_conditions(spec: &str, bank: &NoiseBank) -> Result<Vec<Condition>, EvalError> {
    let mut out = Vec::new();
    for item in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, snrs) = match item.split_once(':') {
            Some((n, list)) => {
                let snrs = list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| EvalError::Condition(format!("bad SNR `{s}` in `{item}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                (n.trim(), snrs)
            }
            None => (item, DEFAULT_SNRS.to_vec()),
        };
        let categories: Vec<String> = match name {
            "clean" => {
                out.push(Condition::Clean);
                continue;
            }
            "all" => {
                out.push(Condition::Clean);
                let mut c: Vec<String> = bank
                    .categories(NoiseSplit::TestSeen)
                    .into_iter()
                    .chain(bank.categories(NoiseSplit::TestUnseen))
                    .map(String::from)
                    .collect();
                c.sort();
                c.dedup();
                c
            }
            "seen" => bank.categories(NoiseSplit::TestSeen).into_iter().map(String::from).collect(),
            "unseen" => bank.categories(NoiseSplit::TestUnseen).into_iter().map(String::from).collect(),
            other => vec![other.to_string()],
        };
        if categories.is_empty() {
            return Err(EvalError::Condition(format!("`{name}` names no test noise")));
        }
        for category in categories {
            bank.test_files(&category)?;
            for &snr_db in &snrs {
                out.push(Condition::Noise {
                    category: category.clone(),
                    snr_db,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(EvalError::Condition("empty condition list".into()));
    }
    Ok(out)
}

/// Applies `cond` to `u`. The test-split noise file, its offset and
/// nothing else are drawn from a generator keyed by (seed, utterance,
/// condition), so results do not depend on evaluation order.
pub fn corrupt(u: &Utterance, cond: &Condition, bank: &NoiseBank, seed: u64) -> Result<Utterance, EvalError> {
    match cond {
        Condition::Clean => Ok(u.clone()),
        Condition::Noise { category, snr_db } => {
            let files = bank.test_files(category)?;
            let mut rng = seeds::rng_str(seed, "eval-noise", &format!("{}|{cond}", u.utt_id));
            let noise = files[rng.gen_range(0..files.len())];
            let offset = rng.gen_range(0..noise.samples.len());
            let rotated: Vec<f32> = noise.samples[offset..]
                .iter()
                .chain(&noise.samples[..offset])
                .copied()
                .collect();
            Ok(mix_at_snr(u, &rotated, *snr_db)?.0)
        }
    }
}

/// Embeddings keyed by (utterance, condition, checkpoint hash).
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: HashMap<(String, String, String), Vec<f32>>,
    pub hits: usize,
    pub misses: usize,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get_or_insert_with(
        &mut self,
        key: (String, String, String),
        make: impl FnOnce() -> Result<Vec<f32>, EvalError>,
    ) -> Result<&Vec<f32>, EvalError> {
        use std::collections::hash_map::Entry;
        match self.map.entry(key) {
            Entry::Occupied(e) => {
                self.hits += 1;
                Ok(e.into_mut())
            }
            Entry::Vacant(e) => {
                self.misses += 1;
                Ok(e.insert(make()?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EerRow {
    pub condition: String,
    pub snr_db: Option<f64>,
    pub eer_percent: f64,
    pub threshold: f64,
    pub num_trials: usize,
}

pub struct TrialHarness<'a> {
    pub model: &'a Model<f32>,
    /// Identifies the model in cache keys.
    pub model_hash: String,
    pub utterances: &'a HashMap<String, Utterance>,
    pub bank: &'a NoiseBank,
    pub seed: u64,
    pub corrupt_both_sides: bool,
}

impl TrialHarness<'_> {
    fn embedding<'c>(
        &self,
        cache: &'c mut EmbeddingCache,
        utt_id: &str,
        cond: &Condition,
    ) -> Result<&'c Vec<f32>, EvalError> {
        let u = self
            .utterances
            .get(utt_id)
            .ok_or_else(|| EvalError::UnknownUtterance(utt_id.to_string()))?;
        let key = (utt_id.to_string(), cond.to_string(), self.model_hash.clone());
        cache.get_or_insert_with(key, || {
            let noisy = corrupt(u, cond, self.bank, self.seed)?;
            extract_embedding(self.model, &noisy)
        })
    }

    /// Cosine scores of every trial under `cond`: the test side is
    /// corrupted, and the enroll side too when `corrupt_both_sides`.
    pub fn scores(&self, trials: &[Trial], cond: &Condition, cache: &mut EmbeddingCache) -> Result<Vec<f64>, EvalError> {
        let enroll_cond = if self.corrupt_both_sides { cond.clone() } else { Condition::Clean };
        trials
            .iter()
            .map(|t| {
                let e = self.embedding(cache, &t.enroll, &enroll_cond)?.clone();
                let x = self.embedding(cache, &t.test, cond)?;
                cosine_score(&e, x)
            })
            .collect()
    }

    /// One EER row per condition. A model whose scores are all identical
    /// is reported as [`EvalError::DegenerateSet`].
    pub fn run(&self, trials: &[Trial], conditions: &[Condition]) -> Result<Vec<EerRow>, EvalError> {
        let targets: Vec<bool> = trials.iter().map(|t| t.target).collect();
        let mut cache = EmbeddingCache::new();
        let mut rows = Vec::with_capacity(conditions.len());
        for cond in conditions {
            let scores = self.scores(trials, cond, &mut cache)?;
            if scores.windows(2).all(|w| w[0] == w[1]) {
                return Err(EvalError::DegenerateSet);
            }
            let (eer, threshold) = compute_eer(&scores, &targets)?;
            log::info!("{cond}: EER {:.2}% over {} trials", 100.0 * eer, trials.len());
            rows.push(EerRow {
                condition: cond.name().to_string(),
                snr_db: cond.snr_db(),
                eer_percent: 100.0 * eer,
                threshold,
                num_trials: trials.len(),
            });
        }
        Ok(rows)
    }
}

pub fn report_csv(rows: &[EerRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let snr = r.snr_db.map_or(String::new(), |s| s.to_string());
        out.push_str(&format!(
            "{},{snr},{:.4},{:.6},{}\n",
            r.condition, r.eer_percent, r.threshold, r.num_trials
        ));
    }
    out
}

/// Condition-by-SNR EER table for the terminal.
pub fn report_table(rows: &[EerRow]) -> String {
    let mut snrs: Vec<f64> = rows.iter().filter_map(|r| r.snr_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.condition.as_str()) {
            names.push(&r.condition);
        }
    }
    let mut out = format!("{:<12}", "EER (%)");
    if snrs.is_empty() {
        out.push_str(&format!("{:>9}", "-"));
    }
    for s in &snrs {
        out.push_str(&format!("{:>9}", format!("{s}dB")));
    }
    out.push('\n');
    for name in names {
        out.push_str(&format!("{name:<12}"));
        let mine: Vec<&EerRow> = rows.iter().filter(|r| r.condition == name).collect();
        if mine.len() == 1 && mine[0].snr_db.is_none() {
            out.push_str(&format!("{:>9.2}", mine[0].eer_percent));
        } else {
            for s in &snrs {
                match mine.iter().find(|r| r.snr_db == Some(*s)) {
                    Some(r) => out.push_str(&format!("{:>9.2}", r.eer_percent)),
                    None => out.push_str(&format!("{:>9}", "")),
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `utt_id,speaker_id,condition,e0,...` rows, one per utterance.
pub fn export_embeddings(
    model: &Model<f32>,
    utterances: &[(&Utterance, &str)],
    cond: &Condition,
    bank: &NoiseBank,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<usize, EvalError> {
    let dim = model.config.backbone.embedding_dim;
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["utt_id".to_string(), "speaker_id".into(), "condition".into()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for (u, speaker) in utterances {
        let e = extract_embedding(model, &corrupt(u, cond, bank, seed)?)?;
        let mut rec = vec![u.utt_id.clone(), speaker.to_string(), cond.to_string()];
        rec.extend(e.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    Ok(utterances.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_score(&[0.3, -0.2], &[0.6, -0.4]).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]), Err(EvalError::ZeroVector)));
    }

    #[test]
    fn eer_reference_cases() {
        let targets = [true, true, false, false];
        assert_eq!(compute_eer(&[0.9, 0.9, 0.1, 0.1], &targets).unwrap().0, 0.0);
        assert_eq!(compute_eer(&[0.5; 4], &targets).unwrap().0, 0.5);
        assert_eq!(compute_eer(&[0.1, 0.1, 0.9, 0.9], &targets).unwrap().0, 1.0);
        assert!(matches!(compute_eer(&[0.1, 0.2], &[true, true]), Err(EvalError::DegenerateSet)));
        // one target below one non-target out of two each
        let (eer, _) = compute_eer(&[0.8, 0.3, 0.5, 0.1], &targets).unwrap();
        assert!((eer - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trials_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trials.txt");
        let trials = vec![
            Trial { target: true, enroll: "a".into(), test: "b".into() },
            Trial { target: false, enroll: "a".into(), test: "c".into() },
        ];
        write_trials(&p, &trials).unwrap();
        assert_eq!(read_trials(&p).unwrap(), trials);
        std::fs::write(&p, "2 a b\n").unwrap();
        assert!(read_trials(&p).is_err());
    }

    #[test]
    fn table_layout() {
        let rows = vec![
            EerRow { condition: "clean".into(), snr_db: None, eer_percent: 3.0, threshold: 0.5, num_trials: 10 },
            EerRow { condition: "white".into(), snr_db: Some(0.0), eer_percent: 20.0, threshold: 0.4, num_trials: 10 },
            EerRow { condition: "white".into(), snr_db: Some(5.0), eer_percent: 10.0, threshold: 0.4, num_trials: 10 },
        ];
        let csv = report_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("clean,,3.0000"));
        let table = report_table(&rows);
        assert!(table.contains("0dB") && table.contains("white"));
    }
}
