//! Paired clean/noisy batches, the training step and its schedules, and
//! checkpoint round trips.
//!
//! Every random draw of step `k` comes from a generator seeded by
//! `(seed, k)`, so the state needed to resume is the model, the optimizer
//! moments and the step counter.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndal_autodiff::{
    AutodiffError, Checkpoint, CheckpointError, OptimizerConfig, OptimizerState, Real, Tape,
    Tensor, Var,
};
use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, SpecAugmentTarget};
use crate::dsp::{
    cms, crop_segment, load_wav, log_mel, mix_at_snr, read_dataset_manifest, spec_augment,
    DspError, FeatureMatrix, NoiseBank, NoiseSplit, Utterance, N_MELS,
};
use crate::losses::{self, LossBreakdown};
use crate::model::{BnObservation, Mode, Model, ModelError};
use crate::seeds;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("batch needs {need} distinct speakers, manifest has {have}")]
    InsufficientSpeakers { need: usize, have: usize },
    #[error("no train-split noise available")]
    NoTrainNoise,
    #[error("non-finite loss at step {step} (batch: {utterances})")]
    NonFiniteLoss { step: u64, utterances: String },
    #[error("checkpoint does not match this model: {0}")]
    CheckpointMismatch(String),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Training utterances grouped by speaker, plus the noise bank.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub utterances: Vec<Utterance>,
    /// Speaker class index to utterance indices.
    pub by_speaker: Vec<Vec<usize>>,
    /// Speaker class index to manifest speaker id (sorted).
    pub speakers: Vec<String>,
    pub noise: NoiseBank,
}

impl TrainData {
    /// Groups utterances by `speaker_id`, which must already be a class
    /// index `0..speakers.len()`.
    pub fn new(utterances: Vec<Utterance>, speakers: Vec<String>, noise: NoiseBank) -> Self {
        let mut by_speaker = vec![Vec::new(); speakers.len()];
        for (i, u) in utterances.iter().enumerate() {
            by_speaker[u.speaker_id].push(i);
        }
        TrainData {
            utterances,
            by_speaker,
            speakers,
            noise,
        }
    }

    /// Reads the training manifest, every WAV it names, and the noise bank.
    pub fn load(train_manifest: &Path, noise_manifest: &Path) -> Result<Self, TrainError> {
        let records = read_dataset_manifest(train_manifest)?;
        let mut speakers: Vec<String> = records.iter().map(|r| r.speaker_id.clone()).collect();
        speakers.sort();
        speakers.dedup();
        let index: BTreeMap<&str, usize> =
            speakers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut utterances = Vec::with_capacity(records.len());
        for r in &records {
            let mut u = load_wav(&r.wav_path)?;
            u.utt_id = r.utt_id.clone();
            u.speaker_id = index[r.speaker_id.as_str()];
            utterances.push(u);
        }
        let noise = NoiseBank::load(noise_manifest)?;
        Ok(TrainData::new(utterances, speakers, noise))
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    /// One epoch samples every speaker `ceil(utterances / speakers)` times.
    pub fn steps_per_epoch(&self, speakers_per_batch: usize) -> usize {
        let c = self.num_speakers().max(1);
        let per_speaker = self.utterances.len().div_ceil(c);
        (c * per_speaker).div_ceil(speakers_per_batch).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub speakers_per_batch: usize,
    pub segment_seconds: f64,
    pub snr_min: f64,
    pub snr_max: f64,
    pub spec_augment: SpecAugmentTarget,
}

impl BatchSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        BatchSpec {
            speakers_per_batch: cfg.speakers_per_batch,
            segment_seconds: cfg.segment_seconds,
            snr_min: cfg.snr_min,
            snr_max: cfg.snr_max,
            spec_augment: cfg.spec_augment,
        }
    }
}

/// `N` clean crops and their noisy twins as `[N, 80, T]` feature tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub clean: Tensor<f32>,
    pub noisy: Tensor<f32>,
    /// Speaker class per pair.
    pub speakers: Vec<usize>,
    pub utt_ids: Vec<String>,
    pub snr_db: Vec<f64>,
    pub noise_ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    /// Raw (0) labels for the clean half followed by augmented (1) labels.
    pub fn aug_labels(&self) -> Vec<usize> {
        let n = self.len();
        (0..2 * n).map(|i| usize::from(i >= n)).collect()
    }
}

fn stack(features: &[FeatureMatrix]) -> Tensor<f32> {
    let t = features[0].frames;
    let mut data = Vec::with_capacity(features.len() * N_MELS * t);
    for f in features {
        data.extend_from_slice(&f.data);
    }
    Tensor::new(vec![features.len(), N_MELS, t], data).expect("uniform frame count")
}

/// Draws speakers without replacement, one utterance and one crop each,
/// and mixes a train-split noise into the same crop at a uniform SNR.
/// Features are log-mel, then CMS, then SpecAugment per `spec`.
pub fn build_batch<R: Rng>(data: &TrainData, spec: &BatchSpec, rng: &mut R) -> Result<Batch, TrainError> {
    let n = spec.speakers_per_batch;
    if data.num_speakers() < n {
        return Err(TrainError::InsufficientSpeakers {
            need: n,
            have: data.num_speakers(),
        });
    }
    let mut clean_f = Vec::with_capacity(n);
    let mut noisy_f = Vec::with_capacity(n);
    let mut batch = Batch {
        clean: Tensor::zeros(&[0]),
        noisy: Tensor::zeros(&[0]),
        speakers: Vec::with_capacity(n),
        utt_ids: Vec::with_capacity(n),
        snr_db: Vec::with_capacity(n),
        noise_ids: Vec::with_capacity(n),
    };
    for spk in sample(rng, data.num_speakers(), n).into_iter() {
        let pool = &data.by_speaker[spk];
        let utt = &data.utterances[pool[rng.gen_range(0..pool.len())]];
        let crop = crop_segment(utt, spec.segment_seconds, rng);
        let noise = data.noise.pick(NoiseSplit::Train, rng).ok_or(TrainError::NoTrainNoise)?;
        let offset = rng.gen_range(0..noise.samples.len());
        let rotated: Vec<f32> = noise.samples[offset..]
            .iter()
            .chain(&noise.samples[..offset])
            .copied()
            .collect();
        let snr = rng.gen_range(spec.snr_min..=spec.snr_max);
        let (noisy, _) = mix_at_snr(&crop, &rotated, snr)?;
        let mut c = cms(log_mel(&crop)?);
        if spec.spec_augment.clean() {
            c = spec_augment(c, rng);
        }
        let mut z = cms(log_mel(&noisy)?);
        if spec.spec_augment.noisy() {
            z = spec_augment(z, rng);
        }
        clean_f.push(c);
        noisy_f.push(z);
        batch.speakers.push(spk);
        batch.utt_ids.push(utt.utt_id.clone());
        batch.snr_db.push(snr);
        batch.noise_ids.push(noise.noise_id.clone());
    }
    batch.clean = stack(&clean_f);
    batch.noisy = stack(&noisy_f);
    Ok(batch)
}

/// Which loss terms enter the differentiated sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub rec: bool,
    pub fr: bool,
    pub cls: bool,
    pub adv: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        rec: true,
        fr: true,
        cls: true,
        adv: true,
    };
    pub const NONE: Terms = Terms {
        rec: false,
        fr: false,
        cls: false,
        adv: false,
    };

    /// The terms a mode trains with.
    pub fn for_mode(mode: Mode) -> Terms {
        Terms {
            rec: mode.has_disentangler(),
            fr: mode.has_disentangler(),
            cls: true,
            adv: mode.has_domain_classifier(),
        }
    }

    pub fn only_rec() -> Terms {
        Terms { rec: true, ..Terms::NONE }
    }

    pub fn only_fr() -> Terms {
        Terms { fr: true, ..Terms::NONE }
    }

    pub fn only_cls() -> Terms {
        Terms { cls: true, ..Terms::NONE }
    }

    pub fn only_adv() -> Terms {
        Terms { adv: true, ..Terms::NONE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveOptions<T> {
    pub lambda: T,
    /// Whether the reversal layer sits in front of the domain classifier.
    /// Turning it off is only meaningful for gradient comparisons.
    pub grl: bool,
    pub terms: Terms,
    /// Treat `S_c` as a constant inside the feature-robust loss.
    pub stop_grad_clean: bool,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Objective<T> {
    /// The scalar to differentiate.
    pub total: Var,
    pub rec: Option<Var>,
    pub fr: Option<Var>,
    pub cls: Option<Var>,
    pub adv: Option<Var>,
    pub s_c: Var,
    pub s_n: Var,
    pub s_s: Option<Var>,
    pub bn: Vec<BnObservation<T>>,
}

impl<T: Real> Objective<T> {
    /// Reported values; terms absent from the graph count as zero.
    pub fn breakdown(&self, tape: &Tape<T>, lambda: f64) -> LossBreakdown {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).item().expect("scalar").to_f64_lossy());
        LossBreakdown::new(v(self.rec), v(self.fr), v(self.cls), v(self.adv), lambda)
    }
}

/// Builds the full training graph on `tape`.
///
/// Clean and noisy features go through the backbone as one batch, giving
/// `S_c` and `S_n`. Then `S_s = E_s(S_n)`, `S_i = E_i(S_n)` and
/// `D([S_s; S_i])` reconstructs `S_n`. The AAM head classifies
/// `[S_c; S_s]`, and the domain classifier sees the same rows through the
/// reversal layer. In joint mode the AAM head classifies `[S_c; S_n]` and
/// nothing else is built.
pub fn objective<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    p: &ndal_autodiff::Bound,
    clean: Var,
    noisy: Var,
    speakers: &[usize],
    opts: &ObjectiveOptions<T>,
) -> Result<Objective<T>, ModelError> {
    use ndal_autodiff::OpSpec;
    let mode = model.config.mode;
    let n = speakers.len();
    let x = tape.apply(OpSpec::Concat { axis: 0 }, &[clean, noisy])?;
    let (emb, bn) = model.backbone(tape, p, x, true)?;
    let s_c = tape.apply(OpSpec::SliceRows { start: 0, end: n }, &[emb])?;
    let s_n = tape.apply(OpSpec::SliceRows { start: n, end: 2 * n }, &[emb])?;
    let labels: Vec<usize> = speakers.iter().chain(speakers).copied().collect();
    let scale = T::from_f64_lossy(model.config.aam.scale);
    let margin = T::from_f64_lossy(model.config.aam.margin);
    let (mut rec, mut fr, mut adv) = (None, None, None);
    let s_s;
    let cls_input;
    if mode.has_speaker_encoder() {
        let ss = model.speaker_encoder(tape, p, s_n)?;
        s_s = Some(ss);
        if mode.has_disentangler() {
            let s_i = model.irrelevant_encoder(tape, p, s_n)?;
            let s_hat = model.decoder(tape, p, ss, s_i)?;
            rec = Some(losses::loss_rec(tape, s_n, s_hat)?);
            let target = if opts.stop_grad_clean {
                let frozen = tape.value(s_c).clone();
                tape.constant(frozen)
            } else {
                s_c
            };
            fr = Some(losses::loss_fr(tape, target, ss)?);
        }
        let s_a = tape.apply(OpSpec::Concat { axis: 0 }, &[s_c, ss])?;
        if mode.has_domain_classifier() {
            let lambda = opts.grl.then_some(opts.lambda);
            let logits = model.domain_classifier(tape, p, s_a, lambda)?;
            let aug: Vec<usize> = (0..2 * n).map(|i| usize::from(i >= n)).collect();
            adv = Some(losses::loss_adv(tape, logits, &aug)?);
        }
        cls_input = s_a;
    } else {
        s_s = None;
        cls_input = emb;
    }
    let cos = model.aam_cosines(tape, p, cls_input)?;
    let cls = Some(losses::loss_aam(tape, cos, &labels, scale, margin)?);

    let t = opts.terms;
    let selected: Vec<Var> = [(t.rec, rec), (t.fr, fr), (t.cls, cls), (t.adv, adv)]
        .into_iter()
        .filter_map(|(on, v)| if on { v } else { None })
        .collect();
    let total = losses::backprop_sum(tape, &selected)?;
    Ok(Objective {
        total,
        rec,
        fr,
        cls,
        adv,
        s_c,
        s_n,
        s_s,
        bn,
    })
}

/// `lr0 * decay^epoch`.
pub fn lr_decay(epoch: u64, lr0: f64, decay: f64) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

/// Linear ramp to `target` over the first `ramp` fraction of `total_steps`,
/// starting at `target / ramp_steps` so lambda stays positive.
pub fn lambda_at(step: u64, total_steps: u64, target: f64, ramp: f64) -> f64 {
    let ramp_steps = (ramp * total_steps as f64).ceil() as u64;
    if ramp_steps == 0 || step + 1 >= ramp_steps {
        target
    } else {
        target * (step + 1) as f64 / ramp_steps as f64
    }
}

/// Model, optimizer and position in the run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: RunConfig,
    pub model: Model<f32>,
    pub optimizer: OptimizerState<f32>,
    /// Steps completed so far.
    pub step: u64,
    pub steps_per_epoch: u64,
    pub total_steps: u64,
    pub data: Arc<TrainData>,
}

impl Trainer {
    pub fn new(config: RunConfig, data: Arc<TrainData>) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Model::init(config.model_config(data.num_speakers()), seeds::derive(config.seed, "model", 0))?;
        let optimizer = OptimizerState::new(optimizer_config(&config), &model.params);
        let steps_per_epoch = if config.steps_per_epoch > 0 {
            config.steps_per_epoch
        } else {
            data.steps_per_epoch(config.speakers_per_batch)
        } as u64;
        let total_steps = steps_per_epoch * config.epochs as u64;
        Ok(Trainer {
            config,
            model,
            optimizer,
            step: 0,
            steps_per_epoch,
            total_steps,
            data,
        })
    }

    pub fn lr(&self) -> f64 {
        lr_decay(self.step / self.steps_per_epoch, self.config.lr, self.config.lr_decay)
    }

    pub fn lambda(&self) -> f64 {
        lambda_at(self.step, self.total_steps, self.config.grl_lambda, self.config.lambda_ramp)
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps
    }

    /// The batch for the current step.
    pub fn next_batch(&self) -> Result<Batch, TrainError> {
        let mut rng = seeds::rng(self.config.seed, "batch", self.step);
        build_batch(&self.data, &BatchSpec::from_config(&self.config), &mut rng)
    }

    /// Forward, one backward pass and one optimizer step over every
    /// parameter; then running statistics are folded in.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossBreakdown, TrainError> {
        let lambda = self.lambda();
        let lr = self.lr();
        let non_finite = |step| TrainError::NonFiniteLoss {
            step,
            utterances: batch.utt_ids.join(","),
        };
        let mut tape = Tape::new();
        let p = self.model.bind(&mut tape);
        let clean = tape.constant(batch.clean.clone());
        let noisy = tape.constant(batch.noisy.clone());
        let opts = ObjectiveOptions {
            lambda: lambda as f32,
            grl: true,
            terms: Terms::for_mode(self.config.mode),
            stop_grad_clean: self.config.stop_grad_clean,
        };
        let obj = match objective(&self.model, &mut tape, &p, clean, noisy, &batch.speakers, &opts) {
            Err(ModelError::Autodiff(AutodiffError::NonFinite { .. })) => return Err(non_finite(self.step)),
            other => other?,
        };
        let breakdown = obj.breakdown(&tape, lambda);
        if !breakdown.is_finite() {
            return Err(non_finite(self.step));
        }
        let grads = p.collect(tape.backward(obj.total)?);
        if grads.values().any(|g| !g.is_finite()) {
            return Err(non_finite(self.step));
        }
        self.optimizer.config.lr = lr;
        self.optimizer.step(&mut self.model.params, &grads)?;
        self.model.update_running(&obj.bn);
        self.step += 1;
        Ok(breakdown)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (name, t) in self.model.params.iter() {
            let mut t = t.clone();
            t.requires_grad = false;
            tensors.push((format!("param/{name}"), t));
        }
        let moments = [("adam_m", &self.optimizer.first_moment), ("adam_v", &self.optimizer.second_moment)];
        for (prefix, map) in moments {
            for (name, v) in map {
                let shape = self.model.params.get(name).expect("moment of a parameter").shape().to_vec();
                tensors.push((format!("{prefix}/{name}"), Tensor::new(shape, v.clone()).expect("shape")));
            }
        }
        for (name, (m, v)) in &self.model.running {
            tensors.push((format!("bn_mean/{name}"), Tensor::new(vec![m.len()], m.clone()).expect("shape")));
            tensors.push((format!("bn_var/{name}"), Tensor::new(vec![v.len()], v.clone()).expect("shape")));
        }
        Checkpoint {
            step: self.step,
            meta: self.config.to_text(),
            tensors,
        }
    }

    /// Rebuilds a trainer at the checkpoint's step. The checkpoint must come
    /// from the same configuration and speaker set.
    pub fn restore(config: RunConfig, data: Arc<TrainData>, ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let mut t = Trainer::new(config, data)?;
        load_model_tensors(&mut t.model, ckpt)?;
        for (prefix, map) in [("adam_m", &mut t.optimizer.first_moment), ("adam_v", &mut t.optimizer.second_moment)] {
            for (name, v) in map.iter_mut() {
                let key = format!("{prefix}/{name}");
                let src = ckpt.get(&key).ok_or_else(|| TrainError::CheckpointMismatch(format!("missing `{key}`")))?;
                if src.len() != v.len() {
                    return Err(TrainError::CheckpointMismatch(format!("`{key}` has the wrong size")));
                }
                v.copy_from_slice(src.data());
            }
        }
        t.step = ckpt.step;
        t.optimizer.step = ckpt.step;
        Ok(t)
    }
}

pub fn optimizer_config(cfg: &RunConfig) -> OptimizerConfig {
    OptimizerConfig {
        kind: cfg.optimizer,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..OptimizerConfig::default()
    }
}

/// Copies parameters and running statistics from `ckpt` into `model`; the
/// checkpoint must hold exactly the model's parameters.
pub fn load_model_tensors(model: &mut Model<f32>, ckpt: &Checkpoint) -> Result<(), TrainError> {
    let mismatch = |m: String| TrainError::CheckpointMismatch(m);
    let stored = ckpt.tensors.iter().filter(|(n, _)| n.starts_with("param/")).count();
    if stored != model.params.len() {
        return Err(mismatch(format!(
            "checkpoint has {stored} parameters, model expects {}",
            model.params.len()
        )));
    }
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for name in names {
        let key = format!("param/{name}");
        let src = ckpt.get(&key).ok_or_else(|| mismatch(format!("missing `{key}`")))?;
        if src.shape() != model.params.get(&name).expect("listed").shape() {
            return Err(mismatch(format!("`{key}` has shape {:?}", src.shape())));
        }
        model.params.set_data(&name, src.data().to_vec())?;
    }
    for (name, (m, v)) in model.running.iter_mut() {
        for (prefix, dst) in [("bn_mean", m), ("bn_var", v)] {
            let key = format!("{prefix}/{name}");
            let src = ckpt.get(&key).ok_or_else(|| mismatch(format!("missing `{key}`")))?;
            if src.len() != dst.len() {
                return Err(mismatch(format!("`{key}` has the wrong size")));
            }
            dst.copy_from_slice(src.data());
        }
    }
    Ok(())
}

/// Rebuilds the model stored in a checkpoint, using the configuration
/// recorded in its metadata.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(RunConfig, Model<f32>), TrainError> {
    let cfg = RunConfig::parse(&ckpt.meta, Path::new(""))?;
    let speakers = ckpt
        .get("param/aam.weight")
        .map(|w| w.shape()[0])
        .ok_or_else(|| TrainError::CheckpointMismatch("missing `param/aam.weight`".into()))?;
    let mut model = Model::init(cfg.model_config(speakers), 0)?;
    load_model_tensors(&mut model, ckpt)?;
    Ok((cfg, model))
}

/// What a finished [`run_training`] call produced.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_checkpoint: PathBuf,
    pub first: Option<LossBreakdown>,
    pub last: Option<LossBreakdown>,
}

/// Trains until the configured number of steps, writing `config.resolved`,
/// `loss.csv`, periodic `ckpt_<step>.ckpt` files and `final.ckpt` into
/// `out_dir`. With `resume`, training continues from that checkpoint and
/// loss rows are appended.
pub fn run_training(
    config: RunConfig,
    data: Arc<TrainData>,
    out_dir: &Path,
    resume: Option<&Checkpoint>,
) -> Result<TrainSummary, TrainError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let resolved = out_dir.join("config.resolved");
    fs::write(&resolved, config.to_text()).map_err(io_err(&resolved))?;
    let mut trainer = match resume {
        Some(ckpt) => Trainer::restore(config, data, ckpt)?,
        None => Trainer::new(config, data)?,
    };
    let csv_path = out_dir.join("loss.csv");
    let mut csv = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&csv_path)
        .map_err(io_err(&csv_path))?;
    if resume.is_none() {
        writeln!(csv, "{}", losses::CSV_HEADER).map_err(io_err(&csv_path))?;
    }
    log::info!(
        "training {} for {} steps ({} per epoch), {} parameters",
        trainer.config.mode,
        trainer.total_steps,
        trainer.steps_per_epoch,
        trainer.model.params.num_values()
    );
    let (mut first, mut last) = (None, None);
    while !trainer.is_done() {
        let lr = trainer.lr();
        let batch = trainer.next_batch()?;
        let b = trainer.train_step(&batch)?;
        writeln!(csv, "{}", b.csv_row(trainer.step, lr)).map_err(io_err(&csv_path))?;
        if trainer.step % trainer.steps_per_epoch == 0 || trainer.step == 1 {
            log::info!(
                "step {}/{}: total {:.4} rec {:.4} fr {:.4} cls {:.4} adv {:.4} lambda {:.3} lr {:.2e}",
                trainer.step,
                trainer.total_steps,
                b.l_total,
                b.l_rec,
                b.l_fr,
                b.l_cls,
                b.l_adv,
                b.lambda,
                lr
            );
        }
        first.get_or_insert(b);
        last = Some(b);
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.step % every == 0 {
            let path = out_dir.join(format!("ckpt_{:08}.ckpt", trainer.step));
            trainer.checkpoint().save(&path)?;
        }
    }
    let final_checkpoint = out_dir.join("final.ckpt");
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainSummary {
        steps: trainer.step,
        final_checkpoint,
        first,
        last,
    })
}
