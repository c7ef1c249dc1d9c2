//! The agreement-regularized objective and its sampled gradient.
//!
//! The objective for a model `P_s` with a frozen opposite-direction helper `P_h` is
//!
//! ```text
//! Σ log P_s(y|x) − λ · [ KL(P_h ‖ P_s) + KL(P_s ‖ P_h) ]
//! ```
//!
//! and its gradient is estimated from two sets of pseudo pairs: targets drawn from
//! the helper (weight 1) and targets drawn from the model itself, weighted by
//! `log P_h(ŷ|x) − log P_s(ŷ|x)`. All gradients here point uphill on the objective.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::autodiff::{Gradients, Graph, NodeId};
use crate::decoding::{ancestral_sample, beam_search, DecodeConfig, Hypothesis, Termination};
use crate::error::{Error, Result};
use crate::evaluation::{sentence_bleu_with, Smoothing};
use crate::rng;
use crate::seq2seq::{DirectionalModel, TokenSequence};

/// How pseudo targets are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    /// The best candidates of a small raw-score beam. Biased, but low variance.
    BeamBest,
    /// Token-by-token draws from the model. Unbiased.
    Ancestral,
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampler::BeamBest => "beam-best",
            Sampler::Ancestral => "ancestral",
        })
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beam-best" => Ok(Sampler::BeamBest),
            "ancestral" => Ok(Sampler::Ancestral),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sampler {s:?} (expected beam-best or ancestral)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerConfig {
    pub lambda: f64,
    /// Pseudo targets per source, for each of the two sets.
    pub m: usize,
    pub candidate_beam: usize,
    /// Pseudo pairs need sentence BLEU strictly above this against the reference.
    /// `None` keeps every pair.
    pub filter_threshold: Option<f64>,
    pub filter_smoothing: Smoothing,
    /// Bound on `|weight|` for self-drawn pairs; `f64::INFINITY` disables clipping.
    pub weight_clip: f64,
    pub sampler: Sampler,
    /// Length cap for pseudo targets; `None` means `2 * |x| + 5`.
    pub max_len: Option<usize>,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            m: 1,
            candidate_beam: 4,
            filter_threshold: Some(0.30),
            filter_smoothing: Smoothing::AddOne,
            weight_clip: 5.0,
            sampler: Sampler::BeamBest,
            max_len: None,
        }
    }
}

impl RegularizerConfig {
    /// Ancestral sampling with filtering and clipping switched off.
    pub fn unbiased(lambda: f64) -> Self {
        Self {
            lambda,
            filter_threshold: None,
            weight_clip: f64::INFINITY,
            sampler: Sampler::Ancestral,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::ConfigValue {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be a non-negative number");
        }
        if self.m == 0 {
            return bad("m", "must be at least 1");
        }
        if self.candidate_beam == 0 {
            return bad("candidate_beam", "must be at least 1");
        }
        if let Some(t) = self.filter_threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad("filter_threshold", "must lie in [0, 1]");
            }
        }
        if !(self.weight_clip > 0.0) {
            return bad("weight_clip", "must be positive");
        }
        if self.max_len == Some(0) {
            return bad("max_len", "must be at least 1");
        }
        Ok(())
    }

    fn decode_config(&self) -> DecodeConfig {
        let cfg = match self.sampler {
            Sampler::BeamBest => DecodeConfig::beam(self.candidate_beam.max(self.m), 0.0),
            Sampler::Ancestral => DecodeConfig::sample(),
        };
        match self.max_len {
            Some(l) => cfg.with_max_len(l),
            None => cfg,
        }
    }

    fn clip(&self, w: f64) -> f64 {
        w.clamp(-self.weight_clip, self.weight_clip)
    }
}

/// Which distribution a pseudo target was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoOrigin {
    Helper,
    SelfModel,
}

/// A generated training pair. `y_hat` is always in natural order.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoPair {
    pub x: TokenSequence,
    pub y_hat: TokenSequence,
    pub weight: f64,
    pub origin: PseudoOrigin,
    pub termination: Termination,
}

impl PseudoPair {
    fn cap(&self) -> Option<usize> {
        match self.termination {
            Termination::Eos => None,
            Termination::LengthCap(c) => Some(c),
        }
    }
}

fn draw(model: &DirectionalModel, x: &[u32], cfg: &RegularizerConfig, seed: u64) -> Result<Vec<Hypothesis>> {
    let dcfg = cfg.decode_config();
    match cfg.sampler {
        Sampler::BeamBest => {
            let list = beam_search(model, x, &dcfg)?;
            Ok(list.hypotheses().iter().take(cfg.m).cloned().collect())
        }
        Sampler::Ancestral => (0..cfg.m)
            .map(|j| ancestral_sample(model, x, &dcfg, rng::derive_seed(seed, &[j as u64])))
            .collect(),
    }
}

fn check_compatible(a: &DirectionalModel, b: &DirectionalModel) -> Result<()> {
    if a.config().src_vocab != b.config().src_vocab || a.config().tgt_vocab != b.config().tgt_vocab {
        return Err(Error::VocabMismatch(format!(
            "models use vocabularies {}/{} and {}/{}",
            a.config().src_vocab,
            a.config().tgt_vocab,
            b.config().src_vocab,
            b.config().tgt_vocab
        )));
    }
    Ok(())
}

/// Targets drawn from the helper, each with weight 1.
///
/// With the beam sampler these are the top `m` candidates of a raw-score beam
/// (length penalty 0), so `m = 1` gives the single best candidate.
pub fn make_pseudo_from_helper(
    helper: &DirectionalModel,
    x: &TokenSequence,
    cfg: &RegularizerConfig,
    seed: u64,
) -> Result<Vec<PseudoPair>> {
    cfg.validate()?;
    Ok(draw(helper, x, cfg, seed)?
        .into_iter()
        .map(|h| PseudoPair {
            x: x.clone(),
            y_hat: h.tokens,
            weight: 1.0,
            origin: PseudoOrigin::Helper,
            termination: h.termination,
        })
        .collect())
}

/// Targets drawn from the model itself, weighted by the clipped log-ratio
/// `log P_helper(ŷ|x) − log P_self(ŷ|x)`.
pub fn make_pseudo_from_self(
    self_model: &DirectionalModel,
    helper: &DirectionalModel,
    x: &TokenSequence,
    cfg: &RegularizerConfig,
    seed: u64,
) -> Result<Vec<PseudoPair>> {
    cfg.validate()?;
    check_compatible(self_model, helper)?;
    draw(self_model, x, cfg, seed)?
        .into_iter()
        .map(|h| {
            let log_ratio = h.rescore(helper, x)? - h.rescore(self_model, x)?;
            Ok(PseudoPair {
                x: x.clone(),
                weight: cfg.clip(log_ratio),
                y_hat: h.tokens,
                origin: PseudoOrigin::SelfModel,
                termination: h.termination,
            })
        })
        .collect()
}

/// Keeps the pairs whose sentence BLEU against `reference` is strictly above `threshold`.
pub fn filter_pseudo(
    pairs: Vec<PseudoPair>,
    reference: &[u32],
    threshold: f64,
    smoothing: Smoothing,
) -> Vec<PseudoPair> {
    pairs
        .into_iter()
        .filter(|p| sentence_bleu_with(&p.y_hat, reference, smoothing).value > threshold)
        .collect()
}

/// An objective-ascent gradient with its three additive parts.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub total: Gradients,
    pub mle: Gradients,
    /// `λ · Σ ∇ log P_s(ŷ)` over kept helper-drawn pairs.
    pub helper_term: Gradients,
    /// `λ · Σ w · ∇ log P_s(ŷ)` over kept self-drawn pairs.
    pub self_term: Gradients,
    /// `Σ log P_s(y|x)` over the batch references.
    pub log_likelihood: f64,
    pub generated: usize,
    pub kept: usize,
}

impl GradientEstimate {
    /// Fraction of generated pseudo pairs that survived filtering; 1 when none were generated.
    pub fn keep_rate(&self) -> f64 {
        if self.generated == 0 {
            1.0
        } else {
            self.kept as f64 / self.generated as f64
        }
    }
}

struct SourceGrads {
    mle: Gradients,
    helper: Gradients,
    selfg: Gradients,
    log_likelihood: f64,
    generated: usize,
    kept: usize,
}

fn source_grads(model: &DirectionalModel, x: &[u32], y: &[u32], pseudo: &[PseudoPair]) -> Result<SourceGrads> {
    let mut g = model.graph();
    let enc = model.encode(&mut g, x)?;
    let mle_root = model.logprob_node(&mut g, &enc, y, None)?;
    let mut helper_nodes = Vec::new();
    let mut self_nodes = Vec::new();
    for p in pseudo {
        let lp = model.logprob_node(&mut g, &enc, &p.y_hat, p.cap())?;
        match p.origin {
            PseudoOrigin::Helper => helper_nodes.push(lp),
            PseudoOrigin::SelfModel => self_nodes.push(g.scale(lp, p.weight)?),
        }
    }
    let term = |g: &Graph<'_>, nodes: &[NodeId]| -> Result<Gradients> {
        let mut acc = model.params().zero_gradients();
        for &n in nodes {
            acc.add_assign(&g.backward(n)?);
        }
        Ok(acc)
    };
    Ok(SourceGrads {
        mle: g.backward(mle_root)?,
        helper: term(&g, &helper_nodes)?,
        selfg: term(&g, &self_nodes)?,
        log_likelihood: g.scalar(mle_root),
        generated: 0,
        kept: pseudo.len(),
    })
}

fn assemble(model: &DirectionalModel, parts: Vec<SourceGrads>, lambda: f64) -> GradientEstimate {
    let mut mle = model.params().zero_gradients();
    let mut helper_term = model.params().zero_gradients();
    let mut self_term = model.params().zero_gradients();
    let (mut log_likelihood, mut generated, mut kept) = (0.0, 0, 0);
    for p in parts {
        mle.add_assign(&p.mle);
        helper_term.add_assign(&p.helper);
        self_term.add_assign(&p.selfg);
        log_likelihood += p.log_likelihood;
        generated += p.generated;
        kept += p.kept;
    }
    helper_term.scale(lambda);
    self_term.scale(lambda);
    let mut total = mle.clone();
    total.add_assign(&helper_term);
    total.add_assign(&self_term);
    GradientEstimate {
        total,
        mle,
        helper_term,
        self_term,
        log_likelihood,
        generated,
        kept,
    }
}

/// Gradient of `Σ log P(y|x)` over the batch. The regularizer terms are zero.
pub fn mle_grad(model: &DirectionalModel, batch: &[(TokenSequence, TokenSequence)]) -> Result<GradientEstimate> {
    if batch.is_empty() {
        return Err(Error::EmptySequence("training batch"));
    }
    let parts = batch
        .par_iter()
        .map(|(x, y)| source_grads(model, x, y, &[]))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(model, parts, 0.0))
}

/// The regularized gradient for `self_model` with `helper` frozen.
///
/// Per source `i`, helper targets use the stream `derive_seed(seed, [i, 1])` and
/// self targets `derive_seed(seed, [i, 2])`. With `λ = 0` no pseudo pairs are
/// generated and the result equals [`mle_grad`].
pub fn rt_grad(
    self_model: &DirectionalModel,
    helper: &DirectionalModel,
    batch: &[(TokenSequence, TokenSequence)],
    cfg: &RegularizerConfig,
    seed: u64,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    check_compatible(self_model, helper)?;
    if self_model.direction() == helper.direction() {
        return Err(Error::InvalidArgument(format!(
            "helper must run in the opposite direction, both are {}",
            self_model.direction()
        )));
    }
    if cfg.lambda == 0.0 {
        return mle_grad(self_model, batch);
    }
    if batch.is_empty() {
        return Err(Error::EmptySequence("training batch"));
    }
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let i = i as u64;
            let mut pseudo = make_pseudo_from_helper(helper, x, cfg, rng::derive_seed(seed, &[i, 1]))?;
            pseudo.extend(make_pseudo_from_self(self_model, helper, x, cfg, rng::derive_seed(seed, &[i, 2]))?);
            let generated = pseudo.len();
            if let Some(t) = cfg.filter_threshold {
                pseudo = filter_pseudo(pseudo, y, t, cfg.filter_smoothing);
            }
            let mut part = source_grads(self_model, x, y, &pseudo)?;
            part.generated = generated;
            Ok(part)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(self_model, parts, cfg.lambda))
}

/// The right-to-left objective: [`rt_grad`] with the right-to-left model as `self`.
pub fn r2l_objective_grad(
    r2l_model: &DirectionalModel,
    l2r_helper: &DirectionalModel,
    batch: &[(TokenSequence, TokenSequence)],
    cfg: &RegularizerConfig,
    seed: u64,
) -> Result<GradientEstimate> {
    rt_grad(r2l_model, l2r_helper, batch, cfg, seed)
}
