//! `ndal` command-line entry point.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ndal::config::{ConfigError, RunConfig};
use ndal::dsp::{load_wav, read_dataset_manifest, DspError, NoiseBank};
use ndal::evaluator::{
    checkpoint_hash, export_embeddings, parse_conditions, read_trials, report_csv, report_table,
    EvalError, TrialHarness,
};
use ndal::model::{Mode, ModelError};
use ndal::synth::{baseline_eer, generate_corpus, SynthError, SynthSpec};
use ndal::trainer::{model_from_checkpoint, run_training, TrainData, TrainError};
use ndal_autodiff::{Checkpoint, CheckpointError};

#[derive(Parser)]
#[command(name = "ndal", version, about = "Noise-robust speaker verification training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic speaker corpus with noise banks and trials.
    Synth {
        /// Corpus spec (`key = value`); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also report the raw log-mel cosine baseline EER.
        #[arg(long)]
        baseline: bool,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `mode`.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a trial list under clean and noisy conditions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// `;`-separated items such as `clean`, `unseen:0,5` or `white:0,5,10`.
        #[arg(long, default_value = "clean")]
        conditions: String,
        #[arg(long)]
        out: PathBuf,
        /// Test manifest; defaults to the one in the checkpoint's config.
        #[arg(long)]
        test_manifest: Option<PathBuf>,
        /// Noise manifest; defaults to the one in the checkpoint's config.
        #[arg(long)]
        noise_manifest: Option<PathBuf>,
        /// Corrupt enrollment utterances as well as test utterances.
        #[arg(long)]
        corrupt_both_sides: bool,
    },
    /// Write per-utterance embeddings to CSV.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest of the utterances to embed.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "clean")]
        condition: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        noise_manifest: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NON_FINITE: u8 = 4;
const EXIT_SPLIT: u8 = 5;

fn dsp_code(e: &DspError) -> u8 {
    match e {
        DspError::SplitViolation(_) => EXIT_SPLIT,
        DspError::Io { .. } => EXIT_IO,
        DspError::Manifest { .. } => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

fn config_code(e: &ConfigError) -> u8 {
    match e {
        ConfigError::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn checkpoint_code(e: &CheckpointError) -> u8 {
    match e {
        CheckpointError::Io(_) => EXIT_IO,
        _ => EXIT_OTHER,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Config(_) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(e) => config_code(e),
            CliError::Synth(e) => match e {
                SynthError::Spec { .. } | SynthError::Invalid(_) => EXIT_CONFIG,
                SynthError::Io { .. } => EXIT_IO,
                SynthError::Dsp(d) => dsp_code(d),
                SynthError::Eval(_) => EXIT_OTHER,
            },
            CliError::Train(e) => match e {
                TrainError::Config(c) => config_code(c),
                TrainError::Dsp(d) => dsp_code(d),
                TrainError::Model(m) => model_code(m),
                TrainError::Checkpoint(c) => checkpoint_code(c),
                TrainError::Io { .. } => EXIT_IO,
                TrainError::InsufficientSpeakers { .. } | TrainError::NoTrainNoise => EXIT_CONFIG,
                TrainError::NonFiniteLoss { .. } => EXIT_NON_FINITE,
                TrainError::CheckpointMismatch(_) => EXIT_OTHER,
            },
            CliError::Eval(e) => match e {
                EvalError::Dsp(d) => dsp_code(d),
                EvalError::Model(m) => model_code(m),
                EvalError::Condition(_) | EvalError::Trials { .. } => EXIT_CONFIG,
                EvalError::Io { .. } | EvalError::Csv(_) => EXIT_IO,
                _ => EXIT_OTHER,
            },
            CliError::Dsp(e) => dsp_code(e),
            CliError::Checkpoint(e) => checkpoint_code(e),
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn synth(spec: Option<PathBuf>, out: PathBuf, seed: u64, baseline: bool) -> Result<(), CliError> {
    let spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|source| CliError::Io {
                path: p.display().to_string(),
                source,
            })?;
            SynthSpec::parse(&text)?
        }
        None => SynthSpec::default(),
    };
    let paths = generate_corpus(&spec, seed, &out)?;
    println!("wrote corpus to {}", out.display());
    if baseline {
        println!("log-mel cosine baseline EER: {:.2}%", 100.0 * baseline_eer(&paths)?);
    }
    Ok(())
}

fn train(config: PathBuf, mode: Option<Mode>, out: PathBuf, resume: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(absolute(&config)?)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let data = Arc::new(TrainData::load(&cfg.train_manifest, &cfg.noise_manifest)?);
    let ckpt = resume.map(Checkpoint::load).transpose()?;
    let summary = run_training(cfg, data, &out, ckpt.as_ref())?;
    if let (Some(a), Some(b)) = (summary.first, summary.last) {
        println!("steps {}: total loss {:.4} -> {:.4}", summary.steps, a.l_total, b.l_total);
    }
    println!("final checkpoint {}", summary.final_checkpoint.display());
    Ok(())
}

fn load_utterances(manifest: &Path) -> Result<Vec<(ndal::dsp::Utterance, String)>, CliError> {
    read_dataset_manifest(manifest)?
        .into_iter()
        .map(|r| {
            let mut u = load_wav(&r.wav_path)?;
            u.utt_id = r.utt_id;
            Ok((u, r.speaker_id))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn eval(
    checkpoint: PathBuf,
    trials: PathBuf,
    conditions: String,
    out: PathBuf,
    test_manifest: Option<PathBuf>,
    noise_manifest: Option<PathBuf>,
    corrupt_both_sides: bool,
) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let (cfg, model) = model_from_checkpoint(&ckpt)?;
    let bank = NoiseBank::load(noise_manifest.as_deref().unwrap_or(&cfg.noise_manifest))?;
    let conditions = parse_conditions(&conditions, &bank)?;
    let utterances: HashMap<String, _> = load_utterances(test_manifest.as_deref().unwrap_or(&cfg.test_manifest))?
        .into_iter()
        .map(|(u, _)| (u.utt_id.clone(), u))
        .collect();
    let trials = read_trials(&trials)?;
    let harness = TrialHarness {
        model: &model,
        model_hash: checkpoint_hash(&ckpt),
        utterances: &utterances,
        bank: &bank,
        seed: cfg.seed,
        corrupt_both_sides: corrupt_both_sides || cfg.corrupt_both_sides,
    };
    let rows = harness.run(&trials, &conditions)?;
    print!("{}", report_table(&rows));
    write_file(&out, &report_csv(&rows))
}

fn export(
    checkpoint: PathBuf,
    manifest: PathBuf,
    condition: String,
    out: PathBuf,
    noise_manifest: Option<PathBuf>,
) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let (cfg, model) = model_from_checkpoint(&ckpt)?;
    let bank = NoiseBank::load(noise_manifest.as_deref().unwrap_or(&cfg.noise_manifest))?;
    let conds = parse_conditions(&condition, &bank)?;
    let [cond] = conds.as_slice() else {
        return Err(EvalError::Condition(format!("export takes exactly one condition, got {}", conds.len())).into());
    };
    let utts = load_utterances(&manifest)?;
    let refs: Vec<_> = utts.iter().map(|(u, s)| (u, s.as_str())).collect();
    let n = export_embeddings(&model, &refs, cond, &bank, cfg.seed, &out)?;
    println!("wrote {n} embeddings to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { spec, out, seed, baseline } => synth(spec, out, seed, baseline),
        Command::Train { config, mode, out, resume } => train(config, mode, out, resume),
        Command::Eval {
            checkpoint,
            trials,
            conditions,
            out,
            test_manifest,
            noise_manifest,
            corrupt_both_sides,
        } => eval(
            checkpoint,
            trials,
            conditions,
            out,
            test_manifest,
            noise_manifest,
            corrupt_both_sides,
        ),
        Command::Export {
            checkpoint,
            manifest,
            condition,
            out,
            noise_manifest,
        } => export(checkpoint, manifest, condition, out, noise_manifest),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
