//! Greedy search, beam search with a length penalty, ancestral sampling, n-best
//! lists and joint-probability reranking.
//!
//! All decoders return targets in natural (left-to-right) order regardless of
//! the model's direction.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::seq2seq::{output_token, DirectionalModel, TokenId, TokenSequence, BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam,
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    /// `None` means `2 * |x| + 5`.
    pub max_len: Option<usize>,
    pub mode: DecodeMode,
}

impl Default for DecodeConfig {
    /// Beam 8 with length penalty 1.0.
    fn default() -> Self {
        Self::beam(8, 1.0)
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self {
            beam_size: 1,
            length_penalty: 0.0,
            max_len: None,
            mode: DecodeMode::Greedy,
        }
    }

    pub fn beam(beam_size: usize, length_penalty: f64) -> Self {
        Self {
            beam_size,
            length_penalty,
            max_len: None,
            mode: DecodeMode::Beam,
        }
    }

    pub fn sample() -> Self {
        Self {
            beam_size: 1,
            length_penalty: 0.0,
            max_len: None,
            mode: DecodeMode::Sample,
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = Some(max_len);
        self
    }

    pub fn max_len_for(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(2 * source_len + 5)
    }

    fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::InvalidArgument("beam_size must be at least 1".into()));
        }
        if self.max_len == Some(0) {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::InvalidArgument("length penalty must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// How a hypothesis ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    /// The model emitted EOS.
    Eos,
    /// Generation stopped at this length cap without an EOS step.
    LengthCap(usize),
}

/// A complete translation with its model score.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: TokenSequence,
    /// Natural-log model probability, including the EOS step unless length-capped.
    pub logprob: f64,
    pub finished: bool,
    pub termination: Termination,
}

/// GNMT length penalty `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

impl Hypothesis {
    /// Length-normalized ranking score.
    pub fn score(&self, alpha: f64) -> f64 {
        self.logprob / length_penalty(self.tokens.len(), alpha)
    }

    /// Recomputes the log-probability of these tokens under `model`, honoring
    /// the termination mode.
    pub fn rescore(&self, model: &DirectionalModel, x: &[TokenId]) -> Result<f64> {
        match self.termination {
            Termination::Eos => model.sequence_logprob(x, &self.tokens),
            Termination::LengthCap(cap) => model.sequence_logprob_capped(x, &self.tokens, cap),
        }
    }
}

fn rank(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Hypotheses for one source, best first, without duplicate token sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestList {
    pub source: TokenSequence,
    pub length_penalty: f64,
    hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    /// Sorts by length-penalized score (ties: lexicographically smaller tokens
    /// first) and keeps the better-scored copy of each duplicate.
    pub fn new(source: TokenSequence, length_penalty: f64, mut hypotheses: Vec<Hypothesis>) -> Self {
        hypotheses.sort_by(|a, b| {
            rank(
                (a.score(length_penalty), &a.tokens),
                (b.score(length_penalty), &b.tokens),
            )
        });
        let mut seen = std::collections::HashSet::new();
        hypotheses.retain(|h| seen.insert(h.tokens.clone()));
        Self {
            source,
            length_penalty,
            hypotheses,
        }
    }

    /// Combines several lists for the same source into one.
    pub fn merge(lists: Vec<NBestList>) -> Result<Self> {
        let mut iter = lists.into_iter();
        let first = iter.next().ok_or(Error::EmptySequence("no n-best lists to merge"))?;
        let mut hyps = first.hypotheses;
        for list in iter {
            if list.source != first.source {
                return Err(Error::InvalidArgument("n-best lists are for different sources".into()));
            }
            hyps.extend(list.hypotheses);
        }
        Ok(Self::new(first.source, first.length_penalty, hyps))
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

fn finish(model: &DirectionalModel, generated: &[TokenId], logprob: f64, termination: Termination) -> Hypothesis {
    Hypothesis {
        tokens: TokenSequence(model.direction().orient(generated)),
        logprob,
        finished: true,
        termination,
    }
}

/// Takes the most probable token at every step.
pub fn greedy_decode(model: &DirectionalModel, x: &[TokenId], cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let max_len = cfg.max_len_for(x.len());
    let mut g = model.graph();
    let enc = model.encode(&mut g, x)?;
    let mut state = model.initial_state(&mut g, &enc)?;
    let mut prev = BOS;
    let mut generated = Vec::new();
    let mut logprob = 0.0;
    while generated.len() < max_len {
        let step = model.decoder_step(&mut g, &enc, prev, &state)?;
        let probs = g.value(step.probs).data();
        let (best, p) = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        logprob += p.ln();
        let tok = output_token(best);
        if tok == EOS {
            return Ok(finish(model, &generated, logprob, Termination::Eos));
        }
        generated.push(tok);
        state = step.state;
        prev = tok;
    }
    Ok(finish(model, &generated, logprob, Termination::LengthCap(max_len)))
}

/// Beam search. Candidates are expanded and pruned by raw log-probability; a
/// candidate that ends in EOS leaves the beam, shrinking it, and search stops
/// once `beam_size` hypotheses have finished or the length cap is reached.
/// The finished set is ranked by `logprob / lp(|y|)`.
pub fn beam_search(model: &DirectionalModel, x: &[TokenId], cfg: &DecodeConfig) -> Result<NBestList> {
    cfg.validate()?;
    let k = cfg.beam_size;
    let max_len = cfg.max_len_for(x.len());
    let mut g = model.graph();
    let enc = model.encode(&mut g, x)?;
    let init = model.initial_state(&mut g, &enc)?;
    let mut live = vec![(Vec::<TokenId>::new(), 0.0_f64, init)];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for len in 0..=max_len {
        if live.is_empty() || finished.len() >= k {
            break;
        }
        if len == max_len {
            for (generated, logprob, _) in live.drain(..) {
                finished.push(finish(model, &generated, logprob, Termination::LengthCap(max_len)));
            }
            break;
        }
        // (parent, token, score)
        let mut candidates: Vec<(usize, TokenId, f64)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (parent, (generated, logprob, state)) in live.iter().enumerate() {
            let prev = generated.last().copied().unwrap_or(BOS);
            let step = model.decoder_step(&mut g, &enc, prev, state)?;
            for (o, &p) in g.value(step.probs).data().iter().enumerate() {
                candidates.push((parent, output_token(o), logprob + p.ln()));
            }
            next_states.push(step.state);
        }
        candidates.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| live[a.0].0.cmp(&live[b.0].0))
                .then_with(|| a.1.cmp(&b.1))
        });
        let slots = k - finished.len();
        let mut next_live = Vec::new();
        for (parent, tok, logprob) in candidates.into_iter().take(slots) {
            let mut generated = live[parent].0.clone();
            if tok == EOS {
                finished.push(finish(model, &generated, logprob, Termination::Eos));
            } else {
                generated.push(tok);
                next_live.push((generated, logprob, next_states[parent]));
            }
        }
        live = next_live;
    }
    let mut list = NBestList::new(TokenSequence(x.to_vec()), cfg.length_penalty, finished);
    list.hypotheses.truncate(k);
    Ok(list)
}

/// Draws one target token by token from the model's own step distributions.
pub fn ancestral_sample_with<R: Rng + ?Sized>(
    model: &DirectionalModel,
    x: &[TokenId],
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<Hypothesis> {
    cfg.validate()?;
    let max_len = cfg.max_len_for(x.len());
    let mut g = model.graph();
    let enc = model.encode(&mut g, x)?;
    let mut state = model.initial_state(&mut g, &enc)?;
    let mut prev = BOS;
    let mut generated = Vec::new();
    let mut logprob = 0.0;
    while generated.len() < max_len {
        let step = model.decoder_step(&mut g, &enc, prev, &state)?;
        let probs = g.value(step.probs).data();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut choice = probs.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                choice = i;
                break;
            }
        }
        logprob += probs[choice].ln();
        let tok = output_token(choice);
        if tok == EOS {
            return Ok(finish(model, &generated, logprob, Termination::Eos));
        }
        generated.push(tok);
        state = step.state;
        prev = tok;
    }
    Ok(finish(model, &generated, logprob, Termination::LengthCap(max_len)))
}

/// [`ancestral_sample_with`] on a stream keyed by `seed`.
pub fn ancestral_sample(model: &DirectionalModel, x: &[TokenId], cfg: &DecodeConfig, seed: u64) -> Result<Hypothesis> {
    ancestral_sample_with(model, x, cfg, &mut rng::stream(seed, &[]))
}

/// Decodes according to `cfg.mode` and returns the single best hypothesis.
pub fn decode(model: &DirectionalModel, x: &[TokenId], cfg: &DecodeConfig, seed: u64) -> Result<Hypothesis> {
    match cfg.mode {
        DecodeMode::Greedy => greedy_decode(model, x, cfg),
        DecodeMode::Beam => beam_search(model, x, cfg)?
            .best()
            .cloned()
            .ok_or(Error::EmptySequence("beam search produced no hypothesis")),
        DecodeMode::Sample => ancestral_sample(model, x, cfg, seed),
    }
}

/// Decodes every source in parallel; output order follows input order.
/// Sampling uses an independent stream per source index.
pub fn decode_all(model: &DirectionalModel, sources: &[TokenSequence], cfg: &DecodeConfig, seed: u64) -> Result<Vec<Hypothesis>> {
    sources
        .par_iter()
        .enumerate()
        .map(|(i, x)| decode(model, x, cfg, rng::derive_seed(seed, &[i as u64])))
        .collect()
}

/// Winner of joint-probability reranking.
#[derive(Clone, Debug, PartialEq)]
pub struct JsChoice {
    pub hypothesis: Hypothesis,
    pub l2r_logprob: f64,
    pub r2l_logprob: f64,
}

impl JsChoice {
    pub fn joint(&self) -> f64 {
        self.l2r_logprob + self.r2l_logprob
    }
}

/// Picks the candidate maximizing `log P_l2r(y|x) + log P_r2l(y|x)`; ties go to
/// the lexicographically smaller token sequence.
pub fn rerank_js(l2r: &DirectionalModel, r2l: &DirectionalModel, list: &NBestList) -> Result<JsChoice> {
    if l2r.config().tgt_vocab != r2l.config().tgt_vocab || l2r.config().src_vocab != r2l.config().src_vocab {
        return Err(Error::VocabMismatch("reranking models use different vocabularies".into()));
    }
    let x = &list.source;
    let mut best: Option<JsChoice> = None;
    for h in list.hypotheses() {
        let choice = JsChoice {
            hypothesis: h.clone(),
            l2r_logprob: h.rescore(l2r, x)?,
            r2l_logprob: h.rescore(r2l, x)?,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                rank(
                    (choice.joint(), &choice.hypothesis.tokens),
                    (b.joint(), &b.hypothesis.tokens),
                ) == Ordering::Less
            }
        };
        if better {
            best = Some(choice);
        }
    }
    best.ok_or(Error::EmptySequence("reranking needs at least one candidate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::{Direction, ModelConfig};

    fn tiny(direction: Direction, seed: u64) -> DirectionalModel {
        DirectionalModel::new(ModelConfig::new(6).with_sizes(4, 6, 4), direction, seed).unwrap()
    }

    #[test]
    fn length_penalty_formula() {
        assert_eq!(length_penalty(1, 1.0), 1.0);
        assert!((length_penalty(7, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(length_penalty(12, 0.0), 1.0);
    }

    #[test]
    fn greedy_is_deterministic() {
        let m = tiny(Direction::L2R, 3);
        let cfg = DecodeConfig::greedy();
        let a = greedy_decode(&m, &[3, 4, 5], &cfg).unwrap();
        let b = greedy_decode(&m, &[3, 4, 5], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.logprob.to_bits(), b.logprob.to_bits());
    }

    #[test]
    fn eos_first_gives_empty_translation() {
        let mut m = tiny(Direction::L2R, 3);
        m.zero_output_layer();
        let bias = m.params_mut().values_mut_by_name("out.b").unwrap();
        bias[0] = 50.0;
        let h = greedy_decode(&m, &[3, 4], &DecodeConfig::greedy()).unwrap();
        assert!(h.tokens.is_empty());
        assert_eq!(h.termination, Termination::Eos);
    }

    #[test]
    fn length_cap_terminates() {
        let mut m = tiny(Direction::L2R, 3);
        m.zero_output_layer();
        // Never EOS: content token 3 dominates.
        m.params_mut().values_mut_by_name("out.b").unwrap()[1] = 50.0;
        let cfg = DecodeConfig::greedy().with_max_len(4);
        let h = greedy_decode(&m, &[3], &cfg).unwrap();
        assert_eq!(h.tokens.0, vec![3; 4]);
        assert_eq!(h.termination, Termination::LengthCap(4));
        let list = beam_search(&m, &[3], &DecodeConfig::beam(3, 1.0).with_max_len(4)).unwrap();
        assert!(list.hypotheses().iter().all(|h| h.tokens.len() <= 4));
    }

    #[test]
    fn beam_one_equals_greedy() {
        for seed in 0..20 {
            for dir in [Direction::L2R, Direction::R2L] {
                let m = tiny(dir, seed);
                let x = [3, 4 + (seed % 2) as TokenId, 5];
                let g = greedy_decode(&m, &x, &DecodeConfig::greedy()).unwrap();
                let b = beam_search(&m, &x, &DecodeConfig::beam(1, 0.0)).unwrap();
                assert_eq!(b.best().unwrap().tokens, g.tokens);
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]

        #[test]
        fn wider_beams_never_score_lower(seed in 0u64..1000, k in 1usize..6, x in proptest::collection::vec(3u32..6, 1..4)) {
            let dir = if seed % 2 == 0 { Direction::L2R } else { Direction::R2L };
            let m = tiny(dir, seed);
            let best = |k| beam_search(&m, &x, &DecodeConfig::beam(k, 0.0).with_max_len(4)).unwrap().best().unwrap().logprob;
            proptest::prop_assert!(best(k + 1) >= best(k) - 1e-12);
        }
    }

    #[test]
    fn hypothesis_scores_match_recomputation() {
        for dir in [Direction::L2R, Direction::R2L] {
            let m = tiny(dir, 8);
            let x = [5, 3, 4];
            let list = beam_search(&m, &x, &DecodeConfig::beam(6, 1.0).with_max_len(4)).unwrap();
            assert!(!list.is_empty());
            for h in list.hypotheses() {
                assert!((h.rescore(&m, &x).unwrap() - h.logprob).abs() < 1e-8);
            }
            let s = ancestral_sample(&m, &x, &DecodeConfig::sample(), 5).unwrap();
            assert!((s.rescore(&m, &x).unwrap() - s.logprob).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_alpha_ranks_by_raw_logprob() {
        let m = tiny(Direction::L2R, 12);
        let list = beam_search(&m, &[3, 4], &DecodeConfig::beam(8, 0.0).with_max_len(4)).unwrap();
        let raw: Vec<f64> = list.hypotheses().iter().map(|h| h.logprob).collect();
        assert!(raw.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn nbest_dedup_keeps_higher() {
        let h = |t: Vec<TokenId>, lp: f64| Hypothesis {
            tokens: TokenSequence(t),
            logprob: lp,
            finished: true,
            termination: Termination::Eos,
        };
        let list = NBestList::new(
            TokenSequence(vec![3]),
            0.0,
            vec![h(vec![3], -2.0), h(vec![4], -1.0), h(vec![3], -0.5), h(vec![5], -1.0)],
        );
        let got: Vec<_> = list.hypotheses().iter().map(|h| (h.tokens.0.clone(), h.logprob)).collect();
        assert_eq!(got, vec![(vec![3], -0.5), (vec![4], -1.0), (vec![5], -1.0)]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = tiny(Direction::R2L, 2);
        let cfg = DecodeConfig::sample();
        let a = ancestral_sample(&m, &[3, 4], &cfg, 77).unwrap();
        let b = ancestral_sample(&m, &[3, 4], &cfg, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rerank_single_and_identical() {
        let l2r = tiny(Direction::L2R, 4);
        let x = TokenSequence(vec![3, 5]);
        let list = beam_search(&l2r, &x, &DecodeConfig::beam(5, 0.0)).unwrap();
        let same = l2r.clone();
        let choice = rerank_js(&l2r, &same, &list).unwrap();
        assert_eq!(choice.hypothesis.tokens, list.best().unwrap().tokens);

        let one = NBestList::new(x.clone(), 0.0, vec![list.hypotheses()[2].clone()]);
        let r2l = tiny(Direction::R2L, 9);
        assert_eq!(rerank_js(&l2r, &r2l, &one).unwrap().hypothesis, list.hypotheses()[2]);

        let empty = NBestList::new(x, 0.0, vec![]);
        assert!(rerank_js(&l2r, &r2l, &empty).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let m = tiny(Direction::L2R, 4);
        assert!(beam_search(&m, &[3], &DecodeConfig::beam(0, 1.0)).is_err());
        assert!(greedy_decode(&m, &[3], &DecodeConfig::greedy().with_max_len(0)).is_err());
    }
}
