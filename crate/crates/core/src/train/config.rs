//! Flat key-value experiment configuration.
//!
//! Files are TOML (sections only group keys; `[optim] eta = 0.1` sets `eta`)
//! or JSON objects, detected by extension. Every key has a default; the
//! `profile` key, if present, is applied before all other keys.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::channel::{ChannelConfig, ChannelKind, DEFAULT_RICIAN_K};
use crate::data::{ClassReward, TaskKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Small-machine schedule.
    Desk,
    /// Full schedule with the published hyperparameters.
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// IDX files in `data_dir`.
    Mnist,
    /// Generated prototype clusters.
    Synthetic,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mnist" => Ok(DatasetKind::Mnist),
            "synthetic" | "synth" => Ok(DatasetKind::Synthetic),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

/// One receiver: task, channel kind and SNR in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverConfig {
    pub task: TaskKind,
    pub kind: ChannelKind,
    pub snr_db: f64,
}

impl ReceiverConfig {
    pub fn channel(&self, rician_k: f64) -> Result<ChannelConfig> {
        let mut c = ChannelConfig::new(self.kind, self.snr_db)?;
        c.rician_k = rician_k;
        c.validate()?;
        Ok(c)
    }
}

/// Parses `task:channel:snr[,task:channel:snr...]`.
pub fn parse_receivers(s: &str) -> Result<Vec<ReceiverConfig>> {
    let out: Vec<ReceiverConfig> = s
        .split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!("receiver `{item}` is not task:channel:snr")));
            }
            Ok(ReceiverConfig {
                task: parts[0].parse()?,
                kind: parts[1].parse()?,
                snr_db: parse_snr(parts[2])?,
            })
        })
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config("at least one receiver is required".into()));
    }
    Ok(out)
}

/// A dB value; `inf` means noiseless.
pub fn parse_snr(s: &str) -> Result<f64> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("+inf") {
        return Ok(f64::INFINITY);
    }
    let v: f64 = s.parse().map_err(|_| Error::Config(format!("bad SNR `{s}`")))?;
    if v.is_nan() {
        return Err(Error::Config("SNR is NaN".into()));
    }
    Ok(v)
}

fn fmt_snr(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

fn fmt_receivers(r: &[ReceiverConfig]) -> String {
    r.iter()
        .map(|r| format!("{}:{}:{}", r.task, r.kind, fmt_snr(r.snr_db)))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    /// Use only the first `n` training / test samples (0: all).
    pub train_limit: usize,
    pub test_limit: usize,
    pub synth_train: usize,
    pub synth_test: usize,
    pub synth_dim: usize,
    pub synth_classes: usize,
    pub bits: usize,
    pub latent: usize,
    pub encoder_hidden: usize,
    pub critic_hidden: usize,
    pub rec_hidden: usize,
    pub cls_hidden: usize,
    pub receivers: Vec<ReceiverConfig>,
    pub rician_k: f64,
    pub batch_size: usize,
    pub kappa: usize,
    pub inner_steps: usize,
    pub epochs: usize,
    /// 0: `ceil(|train| / batch_size)`.
    pub iters_per_epoch: usize,
    pub lr_decoder: f64,
    pub lr_inner: f64,
    pub eta: f64,
    pub lr_critic: f64,
    pub beta: f64,
    pub clip_eps: f64,
    pub fallback_norm: f64,
    pub aux: bool,
    pub ew: bool,
    pub class_reward: ClassReward,
    pub log_std_init: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub flip: bool,
    pub seed: u64,
    pub threads: usize,
    pub eval_snrs: Vec<f64>,
    pub checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut c = ExperimentConfig {
            profile: Profile::Desk,
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist-subset"),
            train_limit: 0,
            test_limit: 0,
            synth_train: 512,
            synth_test: 128,
            synth_dim: 16,
            synth_classes: 10,
            bits: 128,
            latent: 128,
            encoder_hidden: 256,
            critic_hidden: 64,
            rec_hidden: 256,
            cls_hidden: 32,
            receivers: parse_receivers("reconstruction:awgn:4,classification:awgn:4").expect("valid default"),
            rician_k: DEFAULT_RICIAN_K,
            batch_size: 64,
            kappa: 0,
            inner_steps: 5,
            epochs: 0,
            iters_per_epoch: 0,
            lr_decoder: 0.0,
            lr_inner: 0.0,
            eta: 0.0,
            lr_critic: 0.0,
            beta: crate::trilevel::DEFAULT_BETA,
            clip_eps: crate::agent::DEFAULT_CLIP_EPS,
            fallback_norm: crate::trilevel::DEFAULT_FALLBACK_NORM,
            aux: true,
            ew: false,
            class_reward: ClassReward::Probability,
            log_std_init: 0.0,
            log_std_min: crate::agent::LOG_STD_MIN,
            log_std_max: crate::agent::LOG_STD_MAX,
            flip: false,
            seed: 0,
            threads: 1,
            eval_snrs: vec![f64::INFINITY, -4.0, 0.0, 4.0, 8.0, 12.0],
            checkpoints: true,
        };
        c.apply_profile(Profile::Desk);
        c
    }
}

/// Every accepted key with its description, in dump order.
pub const KEYS: &[(&str, &str)] = &[
    ("profile", "desk | paper; sets kappa, epochs, log_std_init and learning rates"),
    ("dataset", "mnist | synthetic"),
    ("data_dir", "directory with train-/t10k- IDX files (optionally .gz)"),
    ("train_limit", "use the first n training samples (0: all)"),
    ("test_limit", "use the first n test samples (0: all)"),
    ("synth_train", "synthetic training samples"),
    ("synth_test", "synthetic test samples"),
    ("synth_dim", "synthetic image dimension"),
    ("synth_classes", "synthetic class count"),
    ("bits", "transmitted bits B"),
    ("latent", "semantic state dimension"),
    ("encoder_hidden", "encoder trunk hidden width"),
    ("critic_hidden", "critic hidden width"),
    ("rec_hidden", "reconstruction decoder hidden width"),
    ("cls_hidden", "classification decoder hidden width"),
    ("receivers", "task:channel:snr list, e.g. reconstruction:awgn:4,classification:awgn:4"),
    ("rician_k", "Rician K-factor (linear)"),
    ("batch_size", "mini-batch size T"),
    ("kappa", "decoder steps per receiver per cycle"),
    ("inner_steps", "encoder inner steps H"),
    ("epochs", "training epochs"),
    ("iters_per_epoch", "cycles per epoch (0: ceil(train / batch_size))"),
    ("lr_decoder", "decoder SGD rate"),
    ("lr_inner", "encoder inner-descent rate"),
    ("eta", "joint (weights, encoder) step size"),
    ("lr_critic", "critic SGD rate"),
    ("beta", "control-barrier coefficient"),
    ("clip_eps", "PPO clip range"),
    ("fallback_norm", "constraint-gradient norm below which lambda is forced to 0"),
    ("aux", "include the auxiliary decoder losses in the encoder loss"),
    ("ew", "equal-weight ablation: fixed uniform weights, no weight assignment"),
    ("class_reward", "probability | indicator"),
    ("log_std_init", "initial log-std head bias"),
    ("log_std_min", "lower log-std clamp"),
    ("log_std_max", "upper log-std clamp"),
    ("flip", "random horizontal flips of training batches"),
    ("seed", "master seed"),
    ("threads", "worker threads (results do not depend on it)"),
    ("eval_snrs", "comma-separated SNR grid for evaluation (inf: noiseless)"),
    ("checkpoints", "write per-epoch checkpoints"),
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

impl ExperimentConfig {
    fn apply_profile(&mut self, p: Profile) {
        self.profile = p;
        match p {
            Profile::Desk => {
                self.kappa = 20;
                self.epochs = 15;
                self.lr_decoder = 0.3;
                self.lr_inner = 2e-4;
                self.eta = 1e-3;
                self.lr_critic = 0.05;
                self.log_std_init = -2.0;
            }
            Profile::Paper => {
                self.kappa = 100;
                self.epochs = 71;
                self.lr_decoder = 1e-3;
                self.lr_inner = 1e-3;
                self.eta = 1e-3;
                self.lr_critic = 1e-3;
                self.log_std_init = 0.0;
            }
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "profile" => self.apply_profile(v.parse()?),
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "train_limit" => self.train_limit = parse(key, v)?,
            "test_limit" => self.test_limit = parse(key, v)?,
            "synth_train" => self.synth_train = parse(key, v)?,
            "synth_test" => self.synth_test = parse(key, v)?,
            "synth_dim" => self.synth_dim = parse(key, v)?,
            "synth_classes" => self.synth_classes = parse(key, v)?,
            "bits" => self.bits = parse(key, v)?,
            "latent" => self.latent = parse(key, v)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, v)?,
            "critic_hidden" => self.critic_hidden = parse(key, v)?,
            "rec_hidden" => self.rec_hidden = parse(key, v)?,
            "cls_hidden" => self.cls_hidden = parse(key, v)?,
            "receivers" => self.receivers = parse_receivers(v)?,
            "rician_k" => self.rician_k = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "kappa" => self.kappa = parse(key, v)?,
            "inner_steps" => self.inner_steps = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "iters_per_epoch" => self.iters_per_epoch = parse(key, v)?,
            "lr_decoder" => self.lr_decoder = parse(key, v)?,
            "lr_inner" => self.lr_inner = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "lr_critic" => self.lr_critic = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "clip_eps" => self.clip_eps = parse(key, v)?,
            "fallback_norm" => self.fallback_norm = parse(key, v)?,
            "aux" => self.aux = parse_bool(key, v)?,
            "ew" => self.ew = parse_bool(key, v)?,
            "class_reward" => self.class_reward = v.parse()?,
            "log_std_init" => self.log_std_init = parse(key, v)?,
            "log_std_min" => self.log_std_min = parse(key, v)?,
            "log_std_max" => self.log_std_max = parse(key, v)?,
            "flip" => self.flip = parse_bool(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "eval_snrs" => self.eval_snrs = v.split(',').map(parse_snr).collect::<Result<_>>()?,
            "checkpoints" => self.checkpoints = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `(key, value)` pairs, `profile` first.
    pub fn apply<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let pairs: Vec<_> = pairs.into_iter().collect();
        for (k, v) in pairs.iter().filter(|(k, _)| k.trim() == "profile") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k.trim() != "profile") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses a TOML or JSON document (JSON if it starts with `{`).
    pub fn from_str_any(text: &str) -> Result<Self> {
        let pairs = if text.trim_start().starts_with('{') {
            let v: serde_json::Value =
                serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
            let mut out = Vec::new();
            flatten_json(&v, &mut out)?;
            out
        } else {
            let t: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
            let mut out = Vec::new();
            flatten_toml(&t, &mut out)?;
            out
        };
        let mut c = ExperimentConfig::default();
        c.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str_any(&text)
    }

    /// Parses `KEY=VALUE`.
    pub fn set_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
        self.set(k, v)
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[f64]| v.iter().map(|&x| fmt_snr(x)).collect::<Vec<_>>().join(",");
        KEYS.iter()
            .map(|&(k, _)| {
                let v = match k {
                    "profile" => self.profile.to_string(),
                    "dataset" => self.dataset.to_string(),
                    "data_dir" => self.data_dir.display().to_string(),
                    "train_limit" => self.train_limit.to_string(),
                    "test_limit" => self.test_limit.to_string(),
                    "synth_train" => self.synth_train.to_string(),
                    "synth_test" => self.synth_test.to_string(),
                    "synth_dim" => self.synth_dim.to_string(),
                    "synth_classes" => self.synth_classes.to_string(),
                    "bits" => self.bits.to_string(),
                    "latent" => self.latent.to_string(),
                    "encoder_hidden" => self.encoder_hidden.to_string(),
                    "critic_hidden" => self.critic_hidden.to_string(),
                    "rec_hidden" => self.rec_hidden.to_string(),
                    "cls_hidden" => self.cls_hidden.to_string(),
                    "receivers" => fmt_receivers(&self.receivers),
                    "rician_k" => self.rician_k.to_string(),
                    "batch_size" => self.batch_size.to_string(),
                    "kappa" => self.kappa.to_string(),
                    "inner_steps" => self.inner_steps.to_string(),
                    "epochs" => self.epochs.to_string(),
                    "iters_per_epoch" => self.iters_per_epoch.to_string(),
                    "lr_decoder" => self.lr_decoder.to_string(),
                    "lr_inner" => self.lr_inner.to_string(),
                    "eta" => self.eta.to_string(),
                    "lr_critic" => self.lr_critic.to_string(),
                    "beta" => self.beta.to_string(),
                    "clip_eps" => self.clip_eps.to_string(),
                    "fallback_norm" => self.fallback_norm.to_string(),
                    "aux" => self.aux.to_string(),
                    "ew" => self.ew.to_string(),
                    "class_reward" => self.class_reward.to_string(),
                    "log_std_init" => self.log_std_init.to_string(),
                    "log_std_min" => self.log_std_min.to_string(),
                    "log_std_max" => self.log_std_max.to_string(),
                    "flip" => self.flip.to_string(),
                    "seed" => self.seed.to_string(),
                    "threads" => self.threads.to_string(),
                    "eval_snrs" => join(&self.eval_snrs),
                    "checkpoints" => self.checkpoints.to_string(),
                    _ => unreachable!("every key is listed"),
                };
                (k, v)
            })
            .collect()
    }

    /// TOML dump of [`entries`](Self::entries) that parses back to `self`.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let quoted = toml::Value::String(v).to_string();
            out.push_str(&format!("{k} = {quoted}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be >= 1".into());
        }
        if self.bits == 0 || self.latent == 0 {
            return bad("bits and latent must be >= 1".into());
        }
        for (k, v) in [
            ("lr_decoder", self.lr_decoder),
            ("lr_inner", self.lr_inner),
            ("eta", self.eta),
            ("lr_critic", self.lr_critic),
            ("beta", self.beta),
            ("clip_eps", self.clip_eps),
            ("fallback_norm", self.fallback_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max".into());
        }
        for r in &self.receivers {
            r.channel(self.rician_k)?;
        }
        if self.eval_snrs.is_empty() {
            return bad("eval_snrs is empty".into());
        }
        Ok(())
    }
}

fn scalar_text(key: &str, v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) if f.is_infinite() => fmt_snr(*f),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(a) => a.iter().map(|x| scalar_text(key, x)).collect::<Result<Vec<_>>>()?.join(","),
        _ => return Err(Error::Config(format!("unsupported value for `{key}`"))),
    })
}

fn flatten_toml(t: &toml::Table, out: &mut Vec<(String, String)>) -> Result<()> {
    for (k, v) in t {
        match v {
            toml::Value::Table(inner) => flatten_toml(inner, out)?,
            _ => out.push((k.clone(), scalar_text(k, v)?)),
        }
    }
    Ok(())
}

fn flatten_json(v: &serde_json::Value, out: &mut Vec<(String, String)>) -> Result<()> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Config("JSON config must be an object".into()))?;
    for (k, v) in obj {
        let text = match v {
            serde_json::Value::Object(_) => {
                flatten_json(v, out)?;
                continue;
            }
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Array(a) => a
                .iter()
                .map(|x| match x {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            serde_json::Value::Null => return Err(Error::Config(format!("null value for `{k}`"))),
            other => other.to_string(),
        };
        out.push((k.clone(), text));
    }
    Ok(())
}
