//! The network: a dilated TDNN backbone with attentive statistics pooling,
//! speaker and speaker-irrelevant encoders, a decoder, the AAM-Softmax head
//! and the binary domain classifier.
//!
//! Every component reads its weights from a [`Bound`] so the same code runs
//! for training (gradient leaves) and inference (frozen constants), in `f32`
//! or `f64`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndal_autodiff::{AutodiffError, Bound, OpSpec, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use thiserror::Error;

use crate::dsp::N_MELS;
use crate::seeds;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
/// Variance floor applied before the square root in statistics pooling.
pub const VAR_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("statistics pooling needs at least 2 frames, got {0}")]
    DegenerateTime(usize),
    #[error("invalid model config: {0}")]
    Config(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Which of the four training systems a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Backbone, both encoders, decoder, AAM head and domain classifier.
    Ndal,
    /// Backbone and AAM head trained on clean and noisy embeddings.
    Joint,
    /// No domain classifier, gradient reversal or adversarial loss.
    WoAl,
    /// No speaker-irrelevant encoder, decoder, reconstruction or
    /// feature-robust loss.
    WoDis,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Ndal, Mode::Joint, Mode::WoAl, Mode::WoDis];

    pub fn has_speaker_encoder(self) -> bool {
        self != Mode::Joint
    }

    /// Speaker-irrelevant encoder and decoder.
    pub fn has_disentangler(self) -> bool {
        matches!(self, Mode::Ndal | Mode::WoAl)
    }

    pub fn has_domain_classifier(self) -> bool {
        matches!(self, Mode::Ndal | Mode::WoDis)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ndal" => Ok(Mode::Ndal),
            "joint" => Ok(Mode::Joint),
            "wo-al" => Ok(Mode::WoAl),
            "wo-dis" => Ok(Mode::WoDis),
            other => Err(format!("unknown mode `{other}` (expected ndal|joint|wo-al|wo-dis)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ndal => "ndal",
            Mode::Joint => "joint",
            Mode::WoAl => "wo-al",
            Mode::WoDis => "wo-dis",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub embedding_dim: usize,
    pub attention_hidden: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            channels: vec![256, 256, 256],
            kernels: vec![5, 3, 3],
            dilations: vec![1, 2, 3],
            embedding_dim: 192,
            attention_hidden: 64,
        }
    }
}

impl BackboneConfig {
    /// Width of the layer feeding the pooling.
    pub fn last_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }
}

/// Encoders and decoder are two-layer perceptrons.
#[derive(Debug, Clone, PartialEq)]
pub struct DisentangleConfig {
    pub hidden: usize,
    pub latent_dim: usize,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        DisentangleConfig {
            hidden: 1024,
            latent_dim: 192,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AamConfig {
    pub num_speakers: usize,
    pub scale: f64,
    pub margin: f64,
}

impl Default for AamConfig {
    fn default() -> Self {
        AamConfig {
            num_speakers: 2,
            scale: 30.0,
            margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub hidden: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig { hidden: 128 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub backbone: BackboneConfig,
    pub disentangle: DisentangleConfig,
    pub aam: AamConfig,
    pub domain: DomainConfig,
}

impl ModelConfig {
    pub fn new(mode: Mode, num_speakers: usize) -> Self {
        ModelConfig {
            mode,
            backbone: BackboneConfig::default(),
            disentangle: DisentangleConfig::default(),
            aam: AamConfig {
                num_speakers,
                ..AamConfig::default()
            },
            domain: DomainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        let bad = |m: String| Err(ModelError::Config(m));
        if b.channels.is_empty()
            || b.channels.len() != b.kernels.len()
            || b.channels.len() != b.dilations.len()
        {
            return bad("channels, kernels and dilations must be non-empty lists of equal length".into());
        }
        if b.channels.iter().chain(&b.dilations).any(|&v| v == 0) {
            return bad("channel counts and dilations must be positive".into());
        }
        if b.kernels.iter().any(|&k| k == 0 || k % 2 == 0) {
            return bad("kernel sizes must be odd".into());
        }
        if b.embedding_dim == 0 || b.attention_hidden == 0 {
            return bad("embedding_dim and attention_hidden must be positive".into());
        }
        if self.disentangle.hidden == 0 || self.disentangle.latent_dim == 0 || self.domain.hidden == 0 {
            return bad("hidden sizes must be positive".into());
        }
        if self.mode.has_speaker_encoder() && self.disentangle.latent_dim != b.embedding_dim {
            // S_s is compared against S_c by the feature-robust loss and
            // shares the AAM head with it.
            return bad("latent_dim must equal embedding_dim".into());
        }
        let a = &self.aam;
        if a.num_speakers < 2 {
            return bad(format!("need at least 2 speakers, got {}", a.num_speakers));
        }
        if !(a.scale > 0.0) || !(0.0..std::f64::consts::FRAC_PI_2).contains(&a.margin) {
            return bad(format!("AAM needs s > 0 and 0 <= m < pi/2, got s={} m={}", a.scale, a.margin));
        }
        Ok(())
    }
}

/// Batch statistics seen by one train-mode batchnorm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BnObservation<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel that produced the statistics.
    pub count: usize,
}

/// Parameters plus batchnorm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    /// `(mean, var)` per batchnorm layer, keyed like `backbone.bn0`.
    pub running: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

fn uniform_tensor<T: Real>(seed: u64, name: &str, shape: &[usize], bound: f64) -> Tensor<T> {
    let mut rng = seeds::rng_str(seed, "init", name);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_f64(shape, &v).expect("shape")
}

impl<T: Real> Model<T> {
    /// Kaiming-style uniform fan-in initialization for weights, zero biases,
    /// unit batchnorm scales. Each tensor draws from its own seed stream
    /// derived from its name.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut running = BTreeMap::new();
        let weight = |params: &mut ParamStore<T>, name: &str, shape: &[usize], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            params.insert(name, uniform_tensor(seed, name, shape, bound));
        };
        let b = &config.backbone;
        let mut c_in = N_MELS;
        for (i, (&c, &k)) in b.channels.iter().zip(&b.kernels).enumerate() {
            weight(&mut params, &format!("backbone.conv{i}.w"), &[c, c_in, k], c_in * k);
            params.insert(format!("backbone.conv{i}.b"), Tensor::zeros(&[c]));
            params.insert(format!("backbone.bn{i}.gamma"), Tensor::full(&[c], T::one()));
            params.insert(format!("backbone.bn{i}.beta"), Tensor::zeros(&[c]));
            running.insert(format!("backbone.bn{i}"), (vec![T::zero(); c], vec![T::one(); c]));
            c_in = c;
        }
        let c = b.last_channels();
        let h = b.attention_hidden;
        weight(&mut params, "backbone.att.w1", &[h, 3 * c, 1], 3 * c);
        params.insert("backbone.att.b1", Tensor::zeros(&[h]));
        weight(&mut params, "backbone.att.w2", &[c, h, 1], h);
        params.insert("backbone.att.b2", Tensor::zeros(&[c]));
        weight(&mut params, "backbone.proj.w", &[2 * c, b.embedding_dim], 2 * c);
        params.insert("backbone.proj.b", Tensor::zeros(&[b.embedding_dim]));

        let e = b.embedding_dim;
        let d = &config.disentangle;
        let mlp = |params: &mut ParamStore<T>, prefix: &str, dims: [usize; 3]| {
            weight(params, &format!("{prefix}.fc1.w"), &[dims[0], dims[1]], dims[0]);
            params.insert(format!("{prefix}.fc1.b"), Tensor::zeros(&[dims[1]]));
            weight(params, &format!("{prefix}.fc2.w"), &[dims[1], dims[2]], dims[1]);
            params.insert(format!("{prefix}.fc2.b"), Tensor::zeros(&[dims[2]]));
        };
        if config.mode.has_speaker_encoder() {
            mlp(&mut params, "spk_enc", [e, d.hidden, d.latent_dim]);
        }
        if config.mode.has_disentangler() {
            mlp(&mut params, "irr_enc", [e, d.hidden, d.latent_dim]);
            mlp(&mut params, "decoder", [2 * d.latent_dim, d.hidden, e]);
        }
        if config.mode.has_domain_classifier() {
            mlp(&mut params, "domain", [d.latent_dim, config.domain.hidden, 2]);
        }
        weight(&mut params, "aam.weight", &[config.aam.num_speakers, e], e);
        Ok(Model {
            config,
            params,
            running,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            running: self
                .running
                .iter()
                .map(|(k, (m, v))| (k.clone(), (conv(m), conv(v))))
                .collect(),
        }
    }

    /// Folds train-mode batch statistics into the running estimates:
    /// `running = momentum * running + (1 - momentum) * batch`, with the
    /// unbiased batch variance.
    pub fn update_running(&mut self, observations: &[BnObservation<T>]) {
        let mom = T::from_f64_lossy(BN_MOMENTUM);
        let rest = T::one() - mom;
        for o in observations {
            let Some((rm, rv)) = self.running.get_mut(&o.name) else {
                continue;
            };
            let unbias = if o.count > 1 {
                T::from_count(o.count) / T::from_count(o.count - 1)
            } else {
                T::one()
            };
            for i in 0..rm.len() {
                rm[i] = mom * rm[i] + rest * o.mean[i];
                rv[i] = mom * rv[i] + rest * o.var[i] * unbias;
            }
        }
    }

    /// Binds every parameter as a gradient leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        self.params.bind(tape, &[])
    }

    /// Binds every parameter as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        self.params.bind_frozen(tape, &[])
    }

    /// `x [n, 80, t]` to embeddings `[n, embedding_dim]`. In train mode the
    /// batchnorm layers normalize with batch statistics, which are returned
    /// for [`Model::update_running`].
    pub fn backbone(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        train: bool,
    ) -> Result<(Var, Vec<BnObservation<T>>)> {
        let b = &self.config.backbone;
        let mut h = x;
        let mut observations = Vec::new();
        for (i, (&k, &d)) in b.kernels.iter().zip(&b.dilations).enumerate() {
            let conv = OpSpec::Conv1d {
                padding: d * (k - 1) / 2,
                dilation: d,
            };
            h = tape.apply(conv, &[h, p.var(&format!("backbone.conv{i}.w")), p.var(&format!("backbone.conv{i}.b"))])?;
            h = tape.apply(OpSpec::Relu, &[h])?;
            let name = format!("backbone.bn{i}");
            let running = (!train).then(|| self.running[&name].clone());
            let bn = OpSpec::BatchNorm1d {
                eps: T::from_f64_lossy(BN_EPS),
                running,
            };
            h = tape.apply(bn, &[h, p.var(&format!("{name}.gamma")), p.var(&format!("{name}.beta"))])?;
            if train {
                let shape = tape.shape(h);
                let count = shape[0] * shape[2];
                if let Some((mean, var)) = tape.batch_stats(h) {
                    observations.push(BnObservation {
                        name,
                        mean: mean.to_vec(),
                        var: var.to_vec(),
                        count,
                    });
                }
            }
        }
        let (pooled, _) = self.attentive_pool(tape, p, h)?;
        let emb = linear(tape, p, "backbone.proj", pooled)?;
        Ok((emb, observations))
    }

    /// Attentive statistics pooling of `h [n, c, t]` into `[n, 2c]`
    /// (weighted mean then weighted standard deviation). Also returns the
    /// attention weights `[n, c, t]`, which sum to one over time.
    ///
    /// The attention network sees each frame alongside the utterance-level
    /// mean and standard deviation (global context) and scores every
    /// channel separately.
    pub fn attentive_pool(&self, tape: &mut Tape<T>, p: &Bound, h: Var) -> Result<(Var, Var)> {
        let t = tape.shape(h)[2];
        if t < 2 {
            return Err(ModelError::DegenerateTime(t));
        }
        let floor = T::from_f64_lossy(VAR_FLOOR);
        let mean = tape.apply(OpSpec::MeanLast, &[h])?;
        let sq = tape.apply(OpSpec::Square, &[h])?;
        let mean_sq = tape.apply(OpSpec::MeanLast, &[sq])?;
        let std = std_from_moments(tape, mean, mean_sq, floor)?;
        let mean_t = tape.apply(OpSpec::ExpandLast(t), &[mean])?;
        let std_t = tape.apply(OpSpec::ExpandLast(t), &[std])?;
        let ctx = tape.apply(OpSpec::Concat { axis: 1 }, &[h, mean_t, std_t])?;
        let pointwise = OpSpec::Conv1d {
            padding: 0,
            dilation: 1,
        };
        let a = tape.apply(pointwise.clone(), &[ctx, p.var("backbone.att.w1"), p.var("backbone.att.b1")])?;
        let a = tape.apply(OpSpec::Tanh, &[a])?;
        let a = tape.apply(pointwise, &[a, p.var("backbone.att.w2"), p.var("backbone.att.b2")])?;
        let alpha = tape.apply(OpSpec::Softmax, &[a])?;
        let weighted = tape.apply(OpSpec::Mul, &[alpha, h])?;
        let mu = tape.apply(OpSpec::SumLast, &[weighted])?;
        let weighted_sq = tape.apply(OpSpec::Mul, &[alpha, sq])?;
        let ex2 = tape.apply(OpSpec::SumLast, &[weighted_sq])?;
        let sd = std_from_moments(tape, mu, ex2, floor)?;
        let out = tape.apply(OpSpec::Concat { axis: 1 }, &[mu, sd])?;
        Ok((out, alpha))
    }

    /// `E_s`: two-layer perceptron on backbone embeddings.
    pub fn speaker_encoder(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        mlp(tape, p, "spk_enc", x)
    }

    /// `E_i`: same shape as `E_s`, independent weights.
    pub fn irrelevant_encoder(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        mlp(tape, p, "irr_enc", x)
    }

    /// `D`: reconstructs the noisy embedding from `[s_s; s_i]`.
    pub fn decoder(&self, tape: &mut Tape<T>, p: &Bound, s_s: Var, s_i: Var) -> Result<Var> {
        let z = tape.apply(OpSpec::Concat { axis: 1 }, &[s_s, s_i])?;
        mlp(tape, p, "decoder", z)
    }

    /// `F` behind a gradient reversal layer. `lambda: None` leaves the
    /// reversal out (used to compare gradients with and without it).
    pub fn domain_classifier(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        s_a: Var,
        lambda: Option<T>,
    ) -> Result<Var> {
        let x = match lambda {
            Some(lambda) => {
                if !(lambda > T::zero()) {
                    return Err(AutodiffError::NonPositiveLambda(lambda.to_f64_lossy()).into());
                }
                tape.apply(OpSpec::GradReverse { lambda }, &[s_a])?
            }
            None => s_a,
        };
        mlp(tape, p, "domain", x)
    }

    /// Cosine between every (normalized) embedding row and every
    /// (normalized) class weight row: `[rows, num_speakers]`.
    pub fn aam_cosines(&self, tape: &mut Tape<T>, p: &Bound, emb: Var) -> Result<Var> {
        let e = tape.apply(OpSpec::L2Normalize, &[emb])?;
        let w = tape.apply(OpSpec::L2Normalize, &[p.var("aam.weight")])?;
        let wt = tape.apply(OpSpec::Transpose, &[w])?;
        Ok(tape.apply(OpSpec::MatMul, &[e, wt])?)
    }

    /// Eval-mode embedding used for scoring: `E_s(B(x))`, or `B(x)` for a
    /// joint model.
    pub fn embed(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let (emb, _) = self.backbone(tape, p, x, false)?;
        if self.config.mode.has_speaker_encoder() {
            self.speaker_encoder(tape, p, emb)
        } else {
            Ok(emb)
        }
    }
}

fn std_from_moments<T: Real>(tape: &mut Tape<T>, mean: Var, mean_sq: Var, floor: T) -> Result<Var> {
    let m2 = tape.apply(OpSpec::Square, &[mean])?;
    let var = tape.apply(OpSpec::Sub, &[mean_sq, m2])?;
    let var = tape.apply(OpSpec::ClampMin(floor), &[var])?;
    Ok(tape.apply(OpSpec::Sqrt, &[var])?)
}

fn linear<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let y = tape.apply(OpSpec::MatMul, &[x, p.var(&format!("{prefix}.w"))])?;
    Ok(tape.apply(OpSpec::AddBias, &[y, p.var(&format!("{prefix}.b"))])?)
}

fn mlp<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(tape, p, &format!("{prefix}.fc1"), x)?;
    let h = tape.apply(OpSpec::Relu, &[h])?;
    linear(tape, p, &format!("{prefix}.fc2"), h)
}
