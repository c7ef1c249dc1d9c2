//! Exact answers on tiny instances, by enumerating every target sequence.
//!
//! A space with content vocabulary `V` and cap `L` holds every string of length
//! `0..=L`. Strings shorter than `L` end with an EOS step; strings of length `L`
//! are terminated by the cap, so their probability absorbs every continuation and
//! the distribution is exactly normalized. The samplers in [`crate::decoding`]
//! apply the same rule when their length cap is `L`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::agreement::{rt_grad, RegularizerConfig, Sampler};
use crate::autodiff::{Array, Gradients, Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng;
use crate::seq2seq::{output_index, DirectionalModel, EncoderStates, TokenId, TokenSequence, BOS, EOS, FIRST_CONTENT};

/// Largest `|V|^L` that [`enumerate_space`] accepts.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// Every target of length at most `max_len`, ordered by length, then lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedSpace {
    content: Vec<TokenId>,
    max_len: usize,
    sequences: Vec<TokenSequence>,
    index: HashMap<TokenSequence, usize>,
}

pub fn enumerate_space(content: &[TokenId], max_len: usize) -> Result<EnumeratedSpace> {
    let mut content = content.to_vec();
    content.sort_unstable();
    content.dedup();
    if let Some(&bad) = content.iter().find(|&&t| t < FIRST_CONTENT) {
        return Err(Error::InvalidToken {
            id: bad,
            vocab_size: content.len(),
        });
    }
    let guard_exceeded = Error::GuardExceeded {
        vocab: content.len(),
        max_len,
        limit: ENUMERATION_LIMIT,
    };
    let top = u32::try_from(max_len)
        .ok()
        .and_then(|l| (content.len() as u64).checked_pow(l))
        .filter(|&n| n <= ENUMERATION_LIMIT);
    if top.is_none() {
        return Err(guard_exceeded);
    }
    let mut sequences = vec![TokenSequence::default()];
    let mut layer = vec![Vec::<TokenId>::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|prefix| {
                content.iter().map(move |&t| {
                    let mut s = prefix.clone();
                    s.push(t);
                    s
                })
            })
            .collect();
        sequences.extend(layer.iter().cloned().map(TokenSequence));
    }
    let index = sequences.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    Ok(EnumeratedSpace {
        content,
        max_len,
        sequences,
        index,
    })
}

impl EnumeratedSpace {
    /// The space over every content token of a target vocabulary of `tgt_vocab` ids.
    pub fn for_vocab(tgt_vocab: usize, max_len: usize) -> Result<Self> {
        let content: Vec<TokenId> = (FIRST_CONTENT..tgt_vocab as TokenId).collect();
        enumerate_space(&content, max_len)
    }

    pub fn content(&self) -> &[TokenId] {
        &self.content
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[TokenSequence] {
        &self.sequences
    }

    pub fn index_of(&self, y: &[TokenId]) -> Option<usize> {
        self.index.get(&TokenSequence(y.to_vec())).copied()
    }

    /// Index of the largest score; ties go to the lexicographically smaller sequence.
    pub fn argmax(&self, scores: &[f64]) -> Option<usize> {
        (0..scores.len().min(self.len())).reduce(|best, i| {
            match scores[i].total_cmp(&scores[best]) {
                std::cmp::Ordering::Greater => i,
                std::cmp::Ordering::Equal if self.sequences[i] < self.sequences[best] => i,
                _ => best,
            }
        })
    }

    fn check_model(&self, model: &DirectionalModel) -> Result<()> {
        let expected: Vec<TokenId> = (FIRST_CONTENT..model.config().tgt_vocab as TokenId).collect();
        if expected != self.content {
            return Err(Error::VocabMismatch(format!(
                "space covers {} content tokens, model has {}",
                self.content.len(),
                expected.len()
            )));
        }
        Ok(())
    }
}

/// Exact `P(y|x)` for every sequence of an [`EnumeratedSpace`], in space order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    pub probs: Vec<f64>,
    pub logprobs: Vec<f64>,
    /// Probability that generation would have continued past the cap.
    pub overflow_mass: f64,
}

impl ExactDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

struct Enumeration {
    /// One scalar node per space entry holding `log P(y|x)`.
    logprobs: Vec<NodeId>,
    overflow: f64,
}

/// Builds `log P(y|x)` nodes for the whole space in one graph, sharing prefixes.
fn enumerate_nodes(
    model: &DirectionalModel,
    g: &mut Graph<'_>,
    enc: &EncoderStates,
    space: &EnumeratedSpace,
) -> Result<Enumeration> {
    let mut out: Vec<Option<NodeId>> = vec![None; space.len()];
    let mut overflow = 0.0;
    let zero = g.input(Array::scalar(0.0)?);
    let init = model.initial_state(g, enc)?;
    // (tokens in generation order, cumulative log-prob node, state)
    let mut stack = vec![(Vec::<TokenId>::new(), zero, init)];
    while let Some((prefix, cum, state)) = stack.pop() {
        let natural = model.direction().orient(&prefix);
        let slot = space.index_of(&natural).expect("prefix lies in the space");
        let prev = prefix.last().copied().unwrap_or(BOS);
        let step = model.decoder_step(g, enc, prev, &state)?;
        if prefix.len() == space.max_len() {
            out[slot] = Some(cum);
            let stop = g.value(step.probs).data()[output_index(EOS)];
            overflow += g.scalar(cum).exp() * (1.0 - stop);
            continue;
        }
        let p_eos = g.pick(step.probs, output_index(EOS))?;
        let l_eos = g.log(p_eos)?;
        out[slot] = Some(g.add(cum, l_eos)?);
        for &tok in space.content() {
            let p = g.pick(step.probs, output_index(tok))?;
            let l = g.log(p)?;
            let next = g.add(cum, l)?;
            let mut longer = prefix.clone();
            longer.push(tok);
            stack.push((longer, next, step.state));
        }
    }
    Ok(Enumeration {
        logprobs: out.into_iter().map(|n| n.expect("every entry visited")).collect(),
        overflow,
    })
}

/// Exact distribution of `model` over `space` for source `x`.
///
/// Right-to-left models are enumerated over reversed prefixes and mapped back,
/// so entry `i` always refers to `space.sequences()[i]` in natural order.
pub fn exact_distribution(model: &DirectionalModel, x: &[TokenId], space: &EnumeratedSpace) -> Result<ExactDistribution> {
    space.check_model(model)?;
    let mut g = model.graph();
    let enc = model.encode(&mut g, x)?;
    let e = enumerate_nodes(model, &mut g, &enc, space)?;
    let logprobs: Vec<f64> = e.logprobs.iter().map(|&n| g.scalar(n)).collect();
    Ok(ExactDistribution {
        probs: logprobs.iter().map(|l| l.exp()).collect(),
        logprobs,
        overflow_mass: e.overflow,
    })
}

/// `Σ p · ln(p / q)` over two probability vectors on the same support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "distributions have {} and {} entries",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::Support { p: pi });
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// `KL(p ‖ q)` computed from stored log-probabilities.
pub fn exact_kl(p: &ExactDistribution, q: &ExactDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "distributions have {} and {} entries",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for i in 0..p.len() {
        if p.probs[i] == 0.0 {
            continue;
        }
        if q.probs[i] == 0.0 {
            return Err(Error::Support { p: p.probs[i] });
        }
        kl += p.probs[i] * (p.logprobs[i] - q.logprobs[i]);
    }
    Ok(kl.max(0.0))
}

/// Exact expectations behind the two sampled regularizer terms, for `λ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactRegularizerGrad {
    /// `Σ_y P_h(y) ∇ log P_s(y)`, which equals `−∇ KL(P_h ‖ P_s)`.
    pub helper_term: Gradients,
    /// `Σ_y P_s(y) (log P_h(y) − log P_s(y)) ∇ log P_s(y)`, which equals `−∇ KL(P_s ‖ P_h)`.
    pub self_term: Gradients,
}

/// Exact regularizer gradients with respect to `self_model`'s parameters.
pub fn exact_regularizer_grad(
    self_model: &DirectionalModel,
    helper: &DirectionalModel,
    x: &[TokenId],
    space: &EnumeratedSpace,
) -> Result<ExactRegularizerGrad> {
    let helper_dist = exact_distribution(helper, x, space)?;
    space.check_model(self_model)?;
    let mut g = self_model.graph();
    let enc = self_model.encode(&mut g, x)?;
    let e = enumerate_nodes(self_model, &mut g, &enc, space)?;
    let mut helper_parts = Vec::with_capacity(space.len());
    let mut self_parts = Vec::with_capacity(space.len());
    for (i, &node) in e.logprobs.iter().enumerate() {
        let log_self = g.scalar(node);
        let weight = log_self.exp() * (helper_dist.logprobs[i] - log_self);
        helper_parts.push(g.scale(node, helper_dist.probs[i])?);
        self_parts.push(g.scale(node, weight)?);
    }
    let helper_root = g.add_all(&helper_parts)?;
    let self_root = g.add_all(&self_parts)?;
    Ok(ExactRegularizerGrad {
        helper_term: g.backward(helper_root)?,
        self_term: g.backward(self_root)?,
    })
}

/// Sampled-versus-exact statistics for one regularizer term.
#[derive(Clone, Debug, PartialEq)]
pub struct TermBias {
    /// Flattened in parameter order.
    pub exact: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    /// `(mean − exact) / std_error`; 0 when both agree with zero spread, infinite
    /// when they differ with zero spread.
    pub z: Vec<f64>,
}

impl TermBias {
    fn from_samples(exact: &Gradients, samples: &[Vec<f64>]) -> Self {
        let exact: Vec<f64> = exact.flat().collect();
        let n = samples.len() as f64;
        let dim = exact.len();
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for (k, s) in samples.iter().enumerate() {
            for j in 0..dim {
                let delta = s[j] - mean[j];
                mean[j] += delta / (k + 1) as f64;
                m2[j] += delta * (s[j] - mean[j]);
            }
        }
        let std_error: Vec<f64> = m2
            .iter()
            .map(|&v| if n > 1.0 { (v / (n - 1.0) / n).sqrt() } else { 0.0 })
            .collect();
        let z = (0..dim)
            .map(|j| {
                let diff = mean[j] - exact[j];
                if std_error[j] > 0.0 {
                    diff / std_error[j]
                } else if diff.abs() <= 1e-10 * (1.0 + exact[j].abs()) {
                    0.0
                } else {
                    diff.signum() * f64::INFINITY
                }
            })
            .collect();
        Self {
            exact,
            mean,
            std_error,
            z,
        }
    }

    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().fold(0.0, |m, z| m.max(z.abs()))
    }

    pub fn max_abs_bias(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.exact)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerBias {
    pub sampler: Sampler,
    pub helper_term: TermBias,
    pub self_term: TermBias,
}

/// How well the sampled regularizer gradient matches the exact one.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasReport {
    pub resamples: usize,
    pub parameters: usize,
    pub space_size: usize,
    pub self_overflow: f64,
    pub helper_overflow: f64,
    pub samplers: Vec<SamplerBias>,
}

impl BiasReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "resamples\t{}", self.resamples);
        let _ = writeln!(out, "parameters\t{}", self.parameters);
        let _ = writeln!(out, "space_size\t{}", self.space_size);
        let _ = writeln!(out, "overflow_mass_self\t{:e}", self.self_overflow);
        let _ = writeln!(out, "overflow_mass_helper\t{:e}", self.helper_overflow);
        out.push_str("sampler\tterm\tmax_abs_z\tmax_abs_bias\n");
        for s in &self.samplers {
            for (term, t) in [("helper", &s.helper_term), ("self", &s.self_term)] {
                let _ = writeln!(out, "{}\t{term}\t{:.4}\t{:.6e}", s.sampler, t.max_abs_z(), t.max_abs_bias());
            }
        }
        out
    }
}

/// Runs the regularized gradient estimator `resamples` times for each sampler
/// and compares the per-parameter means of its two terms with the exact values.
///
/// `cfg` supplies filtering and clipping; `λ` is taken as 1, `m` as given, and the
/// length cap is the space's, so samples and enumeration share one truncation rule.
pub fn estimator_bias_report(
    self_model: &DirectionalModel,
    helper: &DirectionalModel,
    x: &[TokenId],
    space: &EnumeratedSpace,
    cfg: &RegularizerConfig,
    resamples: usize,
    seed: u64,
) -> Result<BiasReport> {
    if resamples == 0 {
        return Err(Error::InvalidArgument("at least one resample is needed".into()));
    }
    let exact = exact_regularizer_grad(self_model, helper, x, space)?;
    let x_seq = TokenSequence(x.to_vec());
    let batch = vec![(x_seq.clone(), x_seq)];
    let mut samplers = Vec::new();
    for sampler in [Sampler::Ancestral, Sampler::BeamBest] {
        let run_cfg = RegularizerConfig {
            lambda: 1.0,
            sampler,
            max_len: Some(space.max_len()),
            ..*cfg
        };
        let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..resamples)
            .into_par_iter()
            .map(|r| {
                let est = rt_grad(self_model, helper, &batch, &run_cfg, rng::derive_seed(seed, &[r as u64]))?;
                Ok((est.helper_term.flat().collect(), est.self_term.flat().collect()))
            })
            .collect::<Result<_>>()?;
        let (helper_draws, self_draws): (Vec<_>, Vec<_>) = draws.into_iter().unzip();
        samplers.push(SamplerBias {
            sampler,
            helper_term: TermBias::from_samples(&exact.helper_term, &helper_draws),
            self_term: TermBias::from_samples(&exact.self_term, &self_draws),
        });
    }
    Ok(BiasReport {
        resamples,
        parameters: self_model.params().count(),
        space_size: space.len(),
        self_overflow: exact_distribution(self_model, x, space)?.overflow_mass,
        helper_overflow: exact_distribution(helper, x, space)?.overflow_mass,
        samplers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::numeric_gradient;
    use crate::seq2seq::{Direction, ModelConfig};
    use proptest::prelude::*;

    fn tiny(direction: Direction, seed: u64) -> DirectionalModel {
        DirectionalModel::new(ModelConfig::new(6).with_sizes(2, 3, 2), direction, seed).unwrap()
    }

    #[test]
    fn space_sizes() {
        let s = enumerate_space(&[3, 4], 2).unwrap();
        let seqs: Vec<Vec<TokenId>> = s.sequences().iter().map(|q| q.0.clone()).collect();
        assert_eq!(seqs, vec![vec![], vec![3], vec![4], vec![3, 3], vec![3, 4], vec![4, 3], vec![4, 4]]);
        assert_eq!(enumerate_space(&[3, 4, 5], 3).unwrap().len(), 40);
        assert_eq!(enumerate_space(&[3, 4, 5], 0).unwrap().len(), 1);
        assert!(matches!(
            enumerate_space(&[3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13], 6),
            Err(Error::GuardExceeded { .. })
        ));
        assert!(enumerate_space(&[2], 1).is_err());
    }

    #[test]
    fn argmax_breaks_ties_lexicographically() {
        let s = enumerate_space(&[3, 4], 2).unwrap();
        // [4] (index 2) ties with [3, 3] (index 3); [3, 3] is lexicographically smaller.
        let scores = [0.0, 0.1, 0.5, 0.5, 0.2, 0.0, 0.0];
        assert_eq!(s.argmax(&scores), Some(3));
    }

    #[test]
    fn uniform_model_hand_case() {
        let mut m = DirectionalModel::new(ModelConfig::new(5).with_sizes(2, 3, 2), Direction::L2R, 0).unwrap();
        m.zero_output_layer();
        let space = EnumeratedSpace::for_vocab(5, 1).unwrap();
        let d = exact_distribution(&m, &[3], &space).unwrap();
        for p in &d.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((d.overflow_mass - 2.0 / 9.0 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn distributions_are_normalized_and_match_sequence_logprob() {
        for direction in [Direction::L2R, Direction::R2L] {
            let m = tiny(direction, 3);
            let space = EnumeratedSpace::for_vocab(6, 3).unwrap();
            let x = [3, 5];
            let d = exact_distribution(&m, &x, &space).unwrap();
            assert!((d.total() - 1.0).abs() < 1e-9);
            for (i, y) in space.sequences().iter().enumerate() {
                let lp = if y.len() < 3 {
                    m.sequence_logprob(&x, y).unwrap()
                } else {
                    m.sequence_logprob_capped(&x, y, 3).unwrap()
                };
                assert!((lp - d.logprobs[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let m = tiny(Direction::L2R, 0);
        let space = EnumeratedSpace::for_vocab(5, 2).unwrap();
        assert!(matches!(exact_distribution(&m, &[3], &space), Err(Error::VocabMismatch(_))));
    }

    #[test]
    fn kl_hand_cases() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let kl = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((kl - 0.143841036).abs() < 1e-6, "{kl}");
        assert!(matches!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), Err(Error::Support { .. })));
        assert_eq!(kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln());
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(raw in proptest::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..8)) {
            let sp: f64 = raw.iter().map(|r| r.0).sum();
            let sq: f64 = raw.iter().map(|r| r.1).sum();
            let p: Vec<f64> = raw.iter().map(|r| r.0 / sp).collect();
            let q: Vec<f64> = raw.iter().map(|r| r.1 / sq).collect();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn identical_models_have_zero_kl_and_zero_self_term() {
        let mut me = tiny(Direction::L2R, 4);
        me.zero_output_layer();
        let helper = me.with_direction(Direction::R2L);
        let space = EnumeratedSpace::for_vocab(6, 3).unwrap();
        let p = exact_distribution(&me, &[4, 3], &space).unwrap();
        let q = exact_distribution(&helper, &[4, 3], &space).unwrap();
        assert_eq!(exact_kl(&p, &q).unwrap(), 0.0);
        let grads = exact_regularizer_grad(&me, &helper, &[4, 3], &space).unwrap();
        assert!(grads.self_term.flat().all(|v| v == 0.0));
    }

    #[test]
    fn exact_gradients_match_finite_differences_of_kl() {
        let me = tiny(Direction::L2R, 5);
        let helper = tiny(Direction::R2L, 6);
        let space = EnumeratedSpace::for_vocab(6, 2).unwrap();
        let x = [3, 4, 5];
        let grads = exact_regularizer_grad(&me, &helper, &x, &space).unwrap();
        let h = exact_distribution(&helper, &x, &space).unwrap();
        let rebuild = |store: &crate::autodiff::ParamStore| {
            DirectionalModel::from_params(me.config().clone(), me.direction(), store.clone()).unwrap()
        };
        let neg_kl_hs = numeric_gradient(
            |store| {
                let s = exact_distribution(&rebuild(store), &x, &space)?;
                Ok(-exact_kl(&h, &s)?)
            },
            me.params(),
            1e-5,
        )
        .unwrap();
        let neg_kl_sh = numeric_gradient(
            |store| {
                let s = exact_distribution(&rebuild(store), &x, &space)?;
                Ok(-exact_kl(&s, &h)?)
            },
            me.params(),
            1e-5,
        )
        .unwrap();
        let (err_h, _) = crate::autodiff::compare_gradients(&grads.helper_term, &neg_kl_hs);
        let (err_s, _) = crate::autodiff::compare_gradients(&grads.self_term, &neg_kl_sh);
        assert!(err_h < 1e-4, "{err_h}");
        assert!(err_s < 1e-4, "{err_s}");
    }

    #[test]
    fn beam_best_on_a_point_mass_is_exact() {
        let mut me = tiny(Direction::L2R, 7);
        let out_b = me.params().index_of("out.b").unwrap();
        // EOS is output index 0: make stopping immediately near certain.
        me.params_mut().values_mut(out_b)[0] = 40.0;
        let mut helper = tiny(Direction::R2L, 8);
        helper.params_mut().values_mut(out_b)[0] = 40.0;
        let space = EnumeratedSpace::for_vocab(6, 2).unwrap();
        let report =
            estimator_bias_report(&me, &helper, &[3, 4], &space, &RegularizerConfig::unbiased(1.0), 4, 1).unwrap();
        let beam = report.samplers.iter().find(|s| s.sampler == Sampler::BeamBest).unwrap();
        assert!(beam.helper_term.max_abs_bias() < 1e-9);
        assert!(beam.self_term.max_abs_bias() < 1e-9);
        assert_eq!(report.samplers.len(), 2);
        assert!(report.to_text().contains("beam-best\thelper"));
    }
}
