//! Flat experiment configuration in a line-oriented `key = value` format.
//!
//! Keys are dotted (`reg.lambda`). A `[section]` line prefixes the keys that
//! follow it, so `[reg]` then `lambda = 0.5` sets `reg.lambda`. `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use biagree::agreement::{RegularizerConfig, Sampler};
use biagree::corpus::{SplitSizes, TaskKind, TaskSpec};
use biagree::decoding::{DecodeConfig, DecodeMode};
use biagree::evaluation::Smoothing;
use biagree::seq2seq::ModelConfig;
use biagree::training::{AdamConfig, JointTrainConfig, TrainConfig};
use biagree::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,

    pub task_kind: TaskKind,
    pub task_vocab_size: usize,
    pub task_min_len: usize,
    pub task_max_len: usize,
    pub task_noise: f64,

    pub data_train: usize,
    pub data_dev: usize,
    pub data_test: usize,

    pub model_embed: usize,
    pub model_hidden: usize,
    pub model_attention: usize,

    pub optim_lr: f64,
    pub optim_beta1: f64,
    pub optim_beta2: f64,
    pub optim_eps: f64,

    pub train_batch_size: usize,
    pub train_pretrain_steps: usize,
    pub train_log_every: usize,
    pub train_checkpoint_every: usize,

    pub joint_max_iterations: usize,
    pub joint_steps_per_phase: usize,

    pub probe_sources: usize,
    pub probe_max_len: usize,
    pub probe_samples: usize,
    pub probe_exact: bool,

    pub reg_lambda: f64,
    pub reg_m: usize,
    pub reg_candidate_beam: usize,
    pub reg_filter_threshold: Option<f64>,
    pub reg_filter_smoothing: Smoothing,
    pub reg_weight_clip: f64,
    pub reg_sampler: Sampler,
    pub reg_max_len: Option<usize>,

    pub decode_mode: DecodeMode,
    pub decode_beam_size: usize,
    pub decode_length_penalty: f64,
    pub decode_max_len: Option<usize>,

    pub eval_bucket_edges: Vec<usize>,

    pub oracle_vocab: usize,
    pub oracle_max_len: usize,
    pub oracle_resamples: usize,
    pub oracle_embed: usize,
    pub oracle_hidden: usize,
    pub oracle_attention: usize,

    pub paths_runs: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            task_kind: TaskKind::PrefixSuffixAgreement,
            task_vocab_size: 8,
            task_min_len: 4,
            task_max_len: 12,
            task_noise: 0.1,
            data_train: 2000,
            data_dev: 100,
            data_test: 100,
            model_embed: 16,
            model_hidden: 32,
            model_attention: 32,
            optim_lr: 1e-3,
            optim_beta1: 0.9,
            optim_beta2: 0.999,
            optim_eps: 1e-8,
            train_batch_size: 16,
            train_pretrain_steps: 2000,
            train_log_every: 50,
            train_checkpoint_every: 500,
            joint_max_iterations: 5,
            joint_steps_per_phase: 500,
            probe_sources: 0,
            probe_max_len: 4,
            probe_samples: 0,
            probe_exact: false,
            reg_lambda: 1.0,
            reg_m: 1,
            reg_candidate_beam: 4,
            reg_filter_threshold: Some(0.30),
            reg_filter_smoothing: Smoothing::AddOne,
            reg_weight_clip: 5.0,
            reg_sampler: Sampler::BeamBest,
            reg_max_len: None,
            decode_mode: DecodeMode::Beam,
            decode_beam_size: 8,
            decode_length_penalty: 1.0,
            decode_max_len: None,
            eval_bucket_edges: vec![0, 6, 9],
            oracle_vocab: 3,
            oracle_max_len: 3,
            oracle_resamples: 10_000,
            oracle_embed: 2,
            oracle_hidden: 3,
            oracle_attention: 2,
            paths_runs: PathBuf::from("runs"),
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigValue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, format!("cannot parse {v:?}")))
}

fn float(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v)?;
    if !x.is_finite() {
        return Err(bad(key, "must be finite"));
    }
    Ok(x)
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got {v:?}"))),
    }
}

fn optional<T>(key: &str, v: &str, none: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Option<T>> {
    if v == none {
        Ok(None)
    } else {
        f(key, v).map(Some)
    }
}

fn opt_text<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

fn smoothing_name(s: Smoothing) -> &'static str {
    match s {
        Smoothing::None => "none",
        Smoothing::AddOne => "add-one",
    }
}

fn mode_name(m: DecodeMode) -> &'static str {
    match m {
        DecodeMode::Greedy => "greedy",
        DecodeMode::Beam => "beam",
        DecodeMode::Sample => "sample",
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = num(key, v)?,
            "task.kind" => self.task_kind = v.parse().map_err(|e: Error| bad(key, e.to_string()))?,
            "task.vocab_size" => self.task_vocab_size = num(key, v)?,
            "task.min_len" => self.task_min_len = num(key, v)?,
            "task.max_len" => self.task_max_len = num(key, v)?,
            "task.noise" => self.task_noise = float(key, v)?,
            "data.train" => self.data_train = num(key, v)?,
            "data.dev" => self.data_dev = num(key, v)?,
            "data.test" => self.data_test = num(key, v)?,
            "model.embed" => self.model_embed = num(key, v)?,
            "model.hidden" => self.model_hidden = num(key, v)?,
            "model.attention" => self.model_attention = num(key, v)?,
            "optim.lr" => self.optim_lr = float(key, v)?,
            "optim.beta1" => self.optim_beta1 = float(key, v)?,
            "optim.beta2" => self.optim_beta2 = float(key, v)?,
            "optim.eps" => self.optim_eps = float(key, v)?,
            "train.batch_size" => self.train_batch_size = num(key, v)?,
            "train.pretrain_steps" => self.train_pretrain_steps = num(key, v)?,
            "train.log_every" => self.train_log_every = num(key, v)?,
            "train.checkpoint_every" => self.train_checkpoint_every = num(key, v)?,
            "joint.max_iterations" => self.joint_max_iterations = num(key, v)?,
            "joint.steps_per_phase" => self.joint_steps_per_phase = num(key, v)?,
            "probe.sources" => self.probe_sources = num(key, v)?,
            "probe.max_len" => self.probe_max_len = num(key, v)?,
            "probe.samples" => self.probe_samples = num(key, v)?,
            "probe.exact" => self.probe_exact = boolean(key, v)?,
            "reg.lambda" => self.reg_lambda = float(key, v)?,
            "reg.m" => self.reg_m = num(key, v)?,
            "reg.candidate_beam" => self.reg_candidate_beam = num(key, v)?,
            "reg.filter_threshold" => self.reg_filter_threshold = optional(key, v, "none", float)?,
            "reg.filter_smoothing" => {
                self.reg_filter_smoothing = match v {
                    "none" => Smoothing::None,
                    "add-one" => Smoothing::AddOne,
                    _ => return Err(bad(key, "expected none or add-one")),
                }
            }
            "reg.weight_clip" => {
                self.reg_weight_clip = if v == "none" { f64::INFINITY } else { float(key, v)? }
            }
            "reg.sampler" => self.reg_sampler = v.parse().map_err(|e: Error| bad(key, e.to_string()))?,
            "reg.max_len" => self.reg_max_len = optional(key, v, "auto", num)?,
            "decode.mode" => {
                self.decode_mode = match v {
                    "greedy" => DecodeMode::Greedy,
                    "beam" => DecodeMode::Beam,
                    "sample" => DecodeMode::Sample,
                    _ => return Err(bad(key, "expected greedy, beam or sample")),
                }
            }
            "decode.beam_size" => self.decode_beam_size = num(key, v)?,
            "decode.length_penalty" => self.decode_length_penalty = float(key, v)?,
            "decode.max_len" => self.decode_max_len = optional(key, v, "auto", num)?,
            "eval.bucket_edges" => {
                self.eval_bucket_edges = v.split(',').map(|e| num(key, e.trim())).collect::<Result<_>>()?
            }
            "oracle.vocab" => self.oracle_vocab = num(key, v)?,
            "oracle.max_len" => self.oracle_max_len = num(key, v)?,
            "oracle.resamples" => self.oracle_resamples = num(key, v)?,
            "oracle.embed" => self.oracle_embed = num(key, v)?,
            "oracle.hidden" => self.oracle_hidden = num(key, v)?,
            "oracle.attention" => self.oracle_attention = num(key, v)?,
            "paths.runs" => self.paths_runs = PathBuf::from(v),
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let clip = if self.reg_weight_clip.is_finite() {
            self.reg_weight_clip.to_string()
        } else {
            "none".to_string()
        };
        let edges: Vec<String> = self.eval_bucket_edges.iter().map(usize::to_string).collect();
        vec![
            ("seed", self.seed.to_string()),
            ("task.kind", self.task_kind.to_string()),
            ("task.vocab_size", self.task_vocab_size.to_string()),
            ("task.min_len", self.task_min_len.to_string()),
            ("task.max_len", self.task_max_len.to_string()),
            ("task.noise", self.task_noise.to_string()),
            ("data.train", self.data_train.to_string()),
            ("data.dev", self.data_dev.to_string()),
            ("data.test", self.data_test.to_string()),
            ("model.embed", self.model_embed.to_string()),
            ("model.hidden", self.model_hidden.to_string()),
            ("model.attention", self.model_attention.to_string()),
            ("optim.lr", self.optim_lr.to_string()),
            ("optim.beta1", self.optim_beta1.to_string()),
            ("optim.beta2", self.optim_beta2.to_string()),
            ("optim.eps", self.optim_eps.to_string()),
            ("train.batch_size", self.train_batch_size.to_string()),
            ("train.pretrain_steps", self.train_pretrain_steps.to_string()),
            ("train.log_every", self.train_log_every.to_string()),
            ("train.checkpoint_every", self.train_checkpoint_every.to_string()),
            ("joint.max_iterations", self.joint_max_iterations.to_string()),
            ("joint.steps_per_phase", self.joint_steps_per_phase.to_string()),
            ("probe.sources", self.probe_sources.to_string()),
            ("probe.max_len", self.probe_max_len.to_string()),
            ("probe.samples", self.probe_samples.to_string()),
            ("probe.exact", self.probe_exact.to_string()),
            ("reg.lambda", self.reg_lambda.to_string()),
            ("reg.m", self.reg_m.to_string()),
            ("reg.candidate_beam", self.reg_candidate_beam.to_string()),
            ("reg.filter_threshold", opt_text(&self.reg_filter_threshold, "none")),
            ("reg.filter_smoothing", smoothing_name(self.reg_filter_smoothing).to_string()),
            ("reg.weight_clip", clip),
            ("reg.sampler", self.reg_sampler.to_string()),
            ("reg.max_len", opt_text(&self.reg_max_len, "auto")),
            ("decode.mode", mode_name(self.decode_mode).to_string()),
            ("decode.beam_size", self.decode_beam_size.to_string()),
            ("decode.length_penalty", self.decode_length_penalty.to_string()),
            ("decode.max_len", opt_text(&self.decode_max_len, "auto")),
            ("eval.bucket_edges", edges.join(",")),
            ("oracle.vocab", self.oracle_vocab.to_string()),
            ("oracle.max_len", self.oracle_max_len.to_string()),
            ("oracle.resamples", self.oracle_resamples.to_string()),
            ("oracle.embed", self.oracle_embed.to_string()),
            ("oracle.hidden", self.oracle_hidden.to_string()),
            ("oracle.attention", self.oracle_attention.to_string()),
            ("paths.runs", self.paths_runs.display().to_string()),
        ]
    }

    /// The fully resolved config, in a form [`ExperimentConfig::load`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, Path::new("<config>"))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let k = k.trim();
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            self.set(&key, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?, path)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| bad(o, "override must look like key=value"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_checkpoint_every == 0 {
            return Err(bad("train.checkpoint_every", "must be positive"));
        }
        if self.train_batch_size == 0 {
            return Err(bad("train.batch_size", "must be positive"));
        }
        if self.data_train == 0 || self.data_dev == 0 {
            return Err(bad("data.train", "train and dev splits must be non-empty"));
        }
        if self.probe_sources > self.data_dev {
            return Err(bad("probe.sources", "cannot exceed data.dev"));
        }
        if self.eval_bucket_edges.first() != Some(&0) || self.eval_bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("eval.bucket_edges", "must start at 0 and increase strictly"));
        }
        self.regularizer().validate()?;
        Ok(())
    }

    /// Short hash of everything except the seed and the runs directory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "seed" && k != "paths.runs" {
                h.update(format!("{k}={v}\n"));
            }
        }
        hex::encode(&h.finalize()[..6])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.paths_runs.join(format!("{}-seed{}", self.hash(), self.seed))
    }

    pub fn task(&self) -> TaskSpec {
        TaskSpec {
            kind: self.task_kind,
            vocab_size: self.task_vocab_size,
            min_len: self.task_min_len,
            max_len: self.task_max_len,
            noise: self.task_noise,
            seed: self.seed,
        }
    }

    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.data_train,
            dev: self.data_dev,
            test: self.data_test,
        }
    }

    pub fn model(&self, vocab_len: usize) -> ModelConfig {
        ModelConfig::new(vocab_len).with_sizes(self.model_embed, self.model_hidden, self.model_attention)
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            beam_size: self.decode_beam_size,
            length_penalty: self.decode_length_penalty,
            max_len: self.decode_max_len,
            mode: self.decode_mode,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train_batch_size,
            adam: AdamConfig {
                lr: self.optim_lr,
                beta1: self.optim_beta1,
                beta2: self.optim_beta2,
                eps: self.optim_eps,
            },
            seed: self.seed,
            log_every: self.train_log_every,
            dev_decode: self.decode(),
        }
    }

    pub fn regularizer(&self) -> RegularizerConfig {
        RegularizerConfig {
            lambda: self.reg_lambda,
            m: self.reg_m,
            candidate_beam: self.reg_candidate_beam,
            filter_threshold: self.reg_filter_threshold,
            filter_smoothing: self.reg_filter_smoothing,
            weight_clip: self.reg_weight_clip,
            sampler: self.reg_sampler,
            max_len: self.reg_max_len,
        }
    }

    /// The joint schedule without a probe; the caller attaches probe sources.
    pub fn joint(&self) -> JointTrainConfig {
        JointTrainConfig {
            max_iterations: self.joint_max_iterations,
            steps_per_phase: self.joint_steps_per_phase,
            probe: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["reg.filter_threshold=none".into(), "reg.weight_clip=none".into(), "decode.max_len=30".into()])
            .unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn sections_prefix_keys() {
        let c = ExperimentConfig::parse("seed = 9\n[reg]\nlambda = 0.5 # half\nm=3\n[task]\nkind = copy\n").unwrap();
        assert_eq!((c.seed, c.reg_lambda, c.reg_m, c.task_kind), (9, 0.5, 3, TaskKind::Copy));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::parse("[reg]\nlamda = 1\n").unwrap_err();
        assert!(matches!(&err, Error::UnknownKey(k) if k == "reg.lamda"));
        let err = ExperimentConfig::default().apply_overrides(&["lamda=0".into()]).unwrap_err();
        assert!(err.to_string().contains("lamda"));
        assert!(ExperimentConfig::parse("reg.lambda 1\n").is_err());
    }

    #[test]
    fn hash_ignores_seed_and_location() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 7;
        b.paths_runs = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.reg_lambda = 0.0;
        assert_ne!(a.hash(), b.hash());
        assert!(a.run_dir().ends_with(format!("{}-seed1", a.hash())));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = ExperimentConfig::default();
        c.train_checkpoint_every = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.eval_bucket_edges = vec![1, 5];
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }
}
