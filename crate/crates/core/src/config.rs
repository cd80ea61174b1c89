//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Every key has a default, unknown or repeated keys are errors, and
//! relative paths resolve against the config file's directory. The
//! resolved form written by [`RunConfig::to_text`] names every key, so it
//! alone reproduces a run.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndal_autodiff::OptimizerKind;
use thiserror::Error;

use crate::model::{AamConfig, BackboneConfig, DisentangleConfig, DomainConfig, Mode, ModelConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which copies of a training pair get SpecAugment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecAugmentTarget {
    Both,
    Clean,
    Noisy,
    None,
}

impl SpecAugmentTarget {
    pub fn clean(self) -> bool {
        matches!(self, SpecAugmentTarget::Both | SpecAugmentTarget::Clean)
    }

    pub fn noisy(self) -> bool {
        matches!(self, SpecAugmentTarget::Both | SpecAugmentTarget::Noisy)
    }
}

impl FromStr for SpecAugmentTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "both" => Ok(SpecAugmentTarget::Both),
            "clean" => Ok(SpecAugmentTarget::Clean),
            "noisy" => Ok(SpecAugmentTarget::Noisy),
            "none" => Ok(SpecAugmentTarget::None),
            other => Err(format!("expected both|clean|noisy|none, got `{other}`")),
        }
    }
}

impl std::fmt::Display for SpecAugmentTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpecAugmentTarget::Both => "both",
            SpecAugmentTarget::Clean => "clean",
            SpecAugmentTarget::Noisy => "noisy",
            SpecAugmentTarget::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub noise_manifest: PathBuf,
    pub trials: PathBuf,

    pub speakers_per_batch: usize,
    pub segment_seconds: f64,
    pub snr_min: f64,
    pub snr_max: f64,
    pub spec_augment: SpecAugmentTarget,

    pub epochs: usize,
    /// 0 derives the epoch length from the manifest.
    pub steps_per_epoch: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub grl_lambda: f64,
    /// Fraction of all steps over which lambda ramps linearly up to
    /// `grl_lambda`; 0 disables the ramp.
    pub lambda_ramp: f64,
    pub stop_grad_clean: bool,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_every: u64,

    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub embedding_dim: usize,
    pub attention_hidden: usize,
    pub encoder_hidden: usize,
    pub domain_hidden: usize,
    pub aam_scale: f64,
    pub aam_margin: f64,

    pub corrupt_both_sides: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BackboneConfig::default();
        RunConfig {
            seed: 1,
            mode: Mode::Ndal,
            train_manifest: PathBuf::from("train.lst"),
            test_manifest: PathBuf::from("test.lst"),
            noise_manifest: PathBuf::from("noise.lst"),
            trials: PathBuf::from("trials.txt"),
            speakers_per_batch: 16,
            segment_seconds: 3.0,
            snr_min: 0.0,
            snr_max: 20.0,
            spec_augment: SpecAugmentTarget::Both,
            epochs: 50,
            steps_per_epoch: 0,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            lr_decay: 0.97,
            weight_decay: 2e-5,
            grl_lambda: 1.0,
            lambda_ramp: 0.1,
            stop_grad_clean: false,
            checkpoint_every: 0,
            channels: b.channels,
            kernels: b.kernels,
            dilations: b.dilations,
            embedding_dim: b.embedding_dim,
            attention_hidden: b.attention_hidden,
            encoder_hidden: DisentangleConfig::default().hidden,
            domain_hidden: DomainConfig::default().hidden,
            aam_scale: AamConfig::default().scale,
            aam_margin: AamConfig::default().margin,
            corrupt_both_sides: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("bad value `{value}` for `{key}`: {e}"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, String> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "mode",
        "train_manifest",
        "test_manifest",
        "noise_manifest",
        "trials",
        "speakers_per_batch",
        "segment_seconds",
        "snr_min",
        "snr_max",
        "spec_augment",
        "epochs",
        "steps_per_epoch",
        "optimizer",
        "lr",
        "lr_decay",
        "weight_decay",
        "grl_lambda",
        "lambda_ramp",
        "stop_grad_clean",
        "checkpoint_every",
        "channels",
        "kernels",
        "dilations",
        "embedding_dim",
        "attention_hidden",
        "encoder_hidden",
        "domain_hidden",
        "aam_scale",
        "aam_margin",
        "corrupt_both_sides",
    ];

    /// Parses config text. Relative paths are joined onto `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(syntax(format!("key `{key}` given twice")));
            }
            cfg.set(key, value, base_dir).map_err(syntax)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        match key {
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "train_manifest" => self.train_manifest = path(value),
            "test_manifest" => self.test_manifest = path(value),
            "noise_manifest" => self.noise_manifest = path(value),
            "trials" => self.trials = path(value),
            "speakers_per_batch" => self.speakers_per_batch = parse(key, value)?,
            "segment_seconds" => self.segment_seconds = parse(key, value)?,
            "snr_min" => self.snr_min = parse(key, value)?,
            "snr_max" => self.snr_max = parse(key, value)?,
            "spec_augment" => self.spec_augment = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, value)?,
            "optimizer" => self.optimizer = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "grl_lambda" => self.grl_lambda = parse(key, value)?,
            "lambda_ramp" => self.lambda_ramp = parse(key, value)?,
            "stop_grad_clean" => self.stop_grad_clean = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "channels" => self.channels = parse_list(key, value)?,
            "kernels" => self.kernels = parse_list(key, value)?,
            "dilations" => self.dilations = parse_list(key, value)?,
            "embedding_dim" => self.embedding_dim = parse(key, value)?,
            "attention_hidden" => self.attention_hidden = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, value)?,
            "domain_hidden" => self.domain_hidden = parse(key, value)?,
            "aam_scale" => self.aam_scale = parse(key, value)?,
            "aam_margin" => self.aam_margin = parse(key, value)?,
            "corrupt_both_sides" => self.corrupt_both_sides = parse(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.speakers_per_batch < 2 {
            return bad("speakers_per_batch must be at least 2");
        }
        if !(self.segment_seconds > 0.0) || !self.segment_seconds.is_finite() {
            return bad("segment_seconds must be positive");
        }
        if !(self.snr_min.is_finite() && self.snr_max.is_finite() && self.snr_min <= self.snr_max) {
            return bad("need finite snr_min <= snr_max");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.grl_lambda > 0.0) || !self.grl_lambda.is_finite() {
            return bad("grl_lambda must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda_ramp) {
            return bad("lambda_ramp must lie in [0, 1]");
        }
        self.model_config(2)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn model_config(&self, num_speakers: usize) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            backbone: BackboneConfig {
                channels: self.channels.clone(),
                kernels: self.kernels.clone(),
                dilations: self.dilations.clone(),
                embedding_dim: self.embedding_dim,
                attention_hidden: self.attention_hidden,
            },
            disentangle: DisentangleConfig {
                hidden: self.encoder_hidden,
                latent_dim: self.embedding_dim,
            },
            aam: AamConfig {
                num_speakers,
                scale: self.aam_scale,
                margin: self.aam_margin,
            },
            domain: DomainConfig {
                hidden: self.domain_hidden,
            },
        }
    }

    /// Every key with its resolved value, in [`RunConfig::KEYS`] order.
    pub fn to_text(&self) -> String {
        let p = |p: &Path| p.display().to_string();
        let values: Vec<String> = vec![
            self.seed.to_string(),
            self.mode.to_string(),
            p(&self.train_manifest),
            p(&self.test_manifest),
            p(&self.noise_manifest),
            p(&self.trials),
            self.speakers_per_batch.to_string(),
            self.segment_seconds.to_string(),
            self.snr_min.to_string(),
            self.snr_max.to_string(),
            self.spec_augment.to_string(),
            self.epochs.to_string(),
            self.steps_per_epoch.to_string(),
            self.optimizer.to_string(),
            self.lr.to_string(),
            self.lr_decay.to_string(),
            self.weight_decay.to_string(),
            self.grl_lambda.to_string(),
            self.lambda_ramp.to_string(),
            self.stop_grad_clean.to_string(),
            self.checkpoint_every.to_string(),
            join(&self.channels),
            join(&self.kernels),
            join(&self.dilations),
            self.embedding_dim.to_string(),
            self.attention_hidden.to_string(),
            self.encoder_hidden.to_string(),
            self.domain_hidden.to_string(),
            self.aam_scale.to_string(),
            self.aam_margin.to_string(),
            self.corrupt_both_sides.to_string(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_recipe() {
        let c = RunConfig::default();
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.lr_decay, 0.97);
        assert_eq!(c.weight_decay, 2e-5);
        assert_eq!((c.aam_scale, c.aam_margin), (30.0, 0.2));
        assert_eq!(c.embedding_dim, 192);
        assert_eq!(c.speakers_per_batch, 16);
        assert_eq!(c.optimizer, OptimizerKind::Adam);
    }

    #[test]
    fn parses_comments_paths_and_lists() {
        let text = "# run\nseed = 9  # trailing\nmode = wo-dis\n\nchannels = 32, 32,16\ntrain_manifest = data/train.lst\nnoise_manifest = /abs/noise.lst\n";
        let c = RunConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.mode, Mode::WoDis);
        assert_eq!(c.channels, vec![32, 32, 16]);
        assert_eq!(c.train_manifest, PathBuf::from("/base/data/train.lst"));
        assert_eq!(c.noise_manifest, PathBuf::from("/abs/noise.lst"));
    }

    #[test]
    fn errors() {
        let base = Path::new(".");
        assert!(matches!(
            RunConfig::parse("sed = 1\n", base),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(RunConfig::parse("seed = 1\nseed = 2\n", base).is_err());
        assert!(RunConfig::parse("seed 1\n", base).is_err());
        assert!(RunConfig::parse("lr = fast\n", base).is_err());
        assert!(RunConfig::parse("lr_decay = 0\n", base).is_err());
        assert!(RunConfig::parse("kernels = 4,3,3\n", base).is_err());
        assert!(RunConfig::parse("grl_lambda = 0\n", base).is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.train_manifest = PathBuf::from("/x/train.lst");
        c.lr = 3.5e-4;
        c.channels = vec![8, 8, 8];
        let text = c.to_text();
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
        assert_eq!(RunConfig::parse(&text, Path::new("/elsewhere")).unwrap().train_manifest, c.train_manifest);
        let mut back = RunConfig::parse(&text, Path::new("/")).unwrap();
        back.test_manifest = c.test_manifest.clone();
        back.noise_manifest = c.noise_manifest.clone();
        back.trials = c.trials.clone();
        assert_eq!(back, c);
    }
}
