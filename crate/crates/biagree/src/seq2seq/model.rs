use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::vocab::{TokenId, BOS, EOS, FIRST_CONTENT};
use crate::autodiff::{Array, Graph, NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::rng;

static NEXT_ENCODING_ID: AtomicU64 = AtomicU64::new(1);

/// Which end of the target a model generates from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    L2R,
    R2L,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::L2R => Direction::R2L,
            Direction::R2L => Direction::L2R,
        }
    }

    /// Converts between natural target order and this model's generation order.
    /// The mapping is its own inverse.
    pub fn orient(self, y: &[TokenId]) -> Vec<TokenId> {
        match self {
            Direction::L2R => y.to_vec(),
            Direction::R2L => y.iter().rev().copied().collect(),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::L2R => "l2r",
            Direction::R2L => "r2l",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2r" | "L2R" => Ok(Direction::L2R),
            "r2l" | "R2L" => Ok(Direction::R2L),
            other => Err(Error::InvalidArgument(format!("unknown direction {other:?}"))),
        }
    }
}

/// Layer sizes. Vocabulary sizes include the three reserved ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
}

impl ModelConfig {
    pub fn new(vocab: usize) -> Self {
        Self {
            src_vocab: vocab,
            tgt_vocab: vocab,
            embed: 32,
            hidden: 64,
            attention: 64,
        }
    }

    pub fn with_sizes(mut self, embed: usize, hidden: usize, attention: usize) -> Self {
        self.embed = embed;
        self.hidden = hidden;
        self.attention = attention;
        self
    }

    /// Number of distributions entries per decoder step: EOS plus every content token.
    pub fn output_size(&self) -> usize {
        self.tgt_vocab - FIRST_CONTENT as usize + 1
    }

    fn validate(&self) -> Result<()> {
        if self.src_vocab <= FIRST_CONTENT as usize || self.tgt_vocab <= FIRST_CONTENT as usize {
            return Err(Error::InvalidArgument("vocabularies need at least one content token".into()));
        }
        if self.embed == 0 || self.hidden == 0 || self.attention == 0 {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Position of a token id in the decoder's output distribution.
///
/// The decoder only ever emits EOS or content tokens, so its distribution skips
/// PAD and BOS: EOS is entry 0 and content id `k` is entry `k - 2`.
pub fn output_index(id: TokenId) -> usize {
    debug_assert!(id >= EOS);
    (id - EOS) as usize
}

/// Inverse of [`output_index`].
pub fn output_token(index: usize) -> TokenId {
    index as TokenId + EOS
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Gru {
    wz: usize,
    uz: usize,
    bz: usize,
    wr: usize,
    ur: usize,
    br: usize,
    wn: usize,
    un: usize,
    bn: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    src_embed: usize,
    enc: Gru,
    init_w: usize,
    init_b: usize,
    tgt_embed: usize,
    dec: Gru,
    att_query: usize,
    att_key: usize,
    out_w: usize,
    out_b: usize,
}

/// Names and shapes of every parameter, in store order.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (e, h, a) = (cfg.embed, cfg.hidden, cfg.attention);
    let mut shapes = vec![("src_embed".to_string(), vec![cfg.src_vocab, e])];
    let gru = |prefix: &str, input: usize, shapes: &mut Vec<(String, Vec<usize>)>| {
        for gate in ["z", "r", "n"] {
            shapes.push((format!("{prefix}.w{gate}"), vec![input, h]));
            shapes.push((format!("{prefix}.u{gate}"), vec![h, h]));
            shapes.push((format!("{prefix}.b{gate}"), vec![1, h]));
        }
    };
    gru("enc", e, &mut shapes);
    shapes.push(("dec_init.w".into(), vec![h, h]));
    shapes.push(("dec_init.b".into(), vec![1, h]));
    shapes.push(("tgt_embed".into(), vec![cfg.tgt_vocab, e]));
    gru("dec", e, &mut shapes);
    shapes.push(("att.query".into(), vec![h, a]));
    shapes.push(("att.key".into(), vec![h, a]));
    shapes.push(("out.w".into(), vec![2 * h, cfg.output_size()]));
    shapes.push(("out.b".into(), vec![1, cfg.output_size()]));
    shapes
}

fn layout() -> Layout {
    // Indices follow `parameter_shapes`.
    let gru = |base: usize| Gru {
        wz: base,
        uz: base + 1,
        bz: base + 2,
        wr: base + 3,
        ur: base + 4,
        br: base + 5,
        wn: base + 6,
        un: base + 7,
        bn: base + 8,
    };
    Layout {
        src_embed: 0,
        enc: gru(1),
        init_w: 10,
        init_b: 11,
        tgt_embed: 12,
        dec: gru(13),
        att_query: 22,
        att_key: 23,
        out_w: 24,
        out_b: 25,
    }
}

/// An attention-based GRU encoder-decoder defining `P(y | x)` in one direction.
///
/// Right-to-left models share the architecture exactly; they see targets reversed
/// at the data boundary, so every public method takes and returns targets in
/// natural (left-to-right) order.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalModel {
    direction: Direction,
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// Encoder output for one source sentence, tied to the graph it was built in.
#[derive(Clone, Copy, Debug)]
pub struct EncoderStates {
    graph: u64,
    id: u64,
    len: usize,
    /// `(T, hidden)`: one context vector per source position.
    pub states: NodeId,
    /// `(attention, T)`: projected keys, transposed for the score product.
    pub keys_t: NodeId,
    /// `(1, hidden)`: the final encoder state.
    pub summary: NodeId,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Recurrent decoder state, valid only with the encoding that produced it.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    graph: u64,
    enc: u64,
    pub hidden: NodeId,
}

/// One decoder step: the next-token distribution (over output indices) and the new state.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub probs: NodeId,
    pub state: DecoderState,
}

impl DirectionalModel {
    /// Fresh model with uniform `[-r, r]` weights, `r = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases.
    pub fn new(config: ModelConfig, direction: Direction, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[0x1417]);
        let mut params = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            let n: usize = shape.iter().product();
            let is_bias = name.rsplit('.').next().is_some_and(|leaf| leaf.starts_with('b'));
            let data = if is_bias {
                vec![0.0; n]
            } else {
                let r = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-r..=r)).collect()
            };
            params.insert(name, Array::new(shape, data)?)?;
        }
        Ok(Self {
            direction,
            config,
            params,
            layout: layout(),
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, direction: Direction, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (actual_name, array)) in expected.iter().zip(params.iter()) {
            if name != actual_name || shape.as_slice() != array.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {actual_name} {:?} does not match expected {name} {shape:?}",
                    array.shape()
                )));
            }
        }
        Ok(Self {
            direction,
            config,
            params,
            layout: layout(),
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Same parameters, opposite direction.
    pub fn with_direction(&self, direction: Direction) -> Self {
        Self {
            direction,
            ..self.clone()
        }
    }

    /// Sets the output projection and bias to zero, making every step uniform.
    pub fn zero_output_layer(&mut self) {
        for idx in [self.layout.out_w, self.layout.out_b] {
            self.params.values_mut(idx).fill(0.0);
        }
    }

    /// A graph bound to this model's parameters.
    pub fn graph(&self) -> Graph<'_> {
        Graph::with_params(&self.params)
    }

    fn check_bound(&self, g: &Graph<'_>) -> Result<()> {
        if g.has_layout_of(&self.params) {
            Ok(())
        } else {
            Err(Error::UnboundParams)
        }
    }

    fn gru_cell(&self, g: &mut Graph<'_>, cell: &Gru, x: NodeId, h: NodeId) -> Result<NodeId> {
        let gate = |g: &mut Graph<'_>, w: usize, u: usize, b: usize, hidden: NodeId| -> Result<NodeId> {
            let (w, u, b) = (g.param_at(w)?, g.param_at(u)?, g.param_at(b)?);
            let xw = g.matmul(x, w)?;
            let hu = g.matmul(hidden, u)?;
            let s = g.add(xw, hu)?;
            g.add(s, b)
        };
        let z_pre = gate(g, cell.wz, cell.uz, cell.bz, h)?;
        let z = g.sigmoid(z_pre)?;
        let r_pre = gate(g, cell.wr, cell.ur, cell.br, h)?;
        let r = g.sigmoid(r_pre)?;
        let rh = g.mul(r, h)?;
        let n_pre = gate(g, cell.wn, cell.un, cell.bn, rh)?;
        let n = g.tanh(n_pre)?;
        // h' = (1 - z) * n + z * h = n + z * (h - n)
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }

    fn check_source(&self, x: &[TokenId]) -> Result<()> {
        if x.is_empty() {
            return Err(Error::EmptySequence("source sentence"));
        }
        for &id in x {
            if id < FIRST_CONTENT || id as usize >= self.config.src_vocab {
                return Err(Error::InvalidToken {
                    id,
                    vocab_size: self.config.src_vocab,
                });
            }
        }
        Ok(())
    }

    fn check_target(&self, y: &[TokenId]) -> Result<()> {
        for &id in y {
            if id < FIRST_CONTENT || id as usize >= self.config.tgt_vocab {
                return Err(Error::InvalidToken {
                    id,
                    vocab_size: self.config.tgt_vocab,
                });
            }
        }
        Ok(())
    }

    /// Runs the encoder over `x`, producing one context vector per source token.
    pub fn encode(&self, g: &mut Graph<'_>, x: &[TokenId]) -> Result<EncoderStates> {
        self.check_bound(g)?;
        self.check_source(x)?;
        let l = &self.layout;
        let table = g.param_at(l.src_embed)?;
        let mut h = g.input(Array::zeros(&[1, self.config.hidden]));
        let mut rows = Vec::with_capacity(x.len());
        for &tok in x {
            let e = g.embedding(table, tok as usize)?;
            h = self.gru_cell(g, &l.enc, e, h)?;
            rows.push(h);
        }
        let states = g.concat(&rows, 0)?;
        let key_w = g.param_at(l.att_key)?;
        let keys = g.matmul(states, key_w)?;
        let keys_t = g.transpose(keys)?;
        Ok(EncoderStates {
            graph: g.id(),
            id: NEXT_ENCODING_ID.fetch_add(1, Ordering::Relaxed),
            len: x.len(),
            states,
            keys_t,
            summary: h,
        })
    }

    pub fn initial_state(&self, g: &mut Graph<'_>, enc: &EncoderStates) -> Result<DecoderState> {
        if enc.graph != g.id() {
            return Err(Error::StateMismatch);
        }
        let (w, b) = (g.param_at(self.layout.init_w)?, g.param_at(self.layout.init_b)?);
        let pre = g.matmul(enc.summary, w)?;
        let pre = g.add(pre, b)?;
        let hidden = g.tanh(pre)?;
        Ok(DecoderState {
            graph: g.id(),
            enc: enc.id,
            hidden,
        })
    }

    /// One decoding step from `prev` (BOS at the start). Returns the distribution
    /// over output indices (see [`output_index`]) and the next state.
    pub fn decoder_step(
        &self,
        g: &mut Graph<'_>,
        enc: &EncoderStates,
        prev: TokenId,
        state: &DecoderState,
    ) -> Result<StepOutput> {
        if state.graph != g.id() || enc.graph != g.id() || state.enc != enc.id {
            return Err(Error::StateMismatch);
        }
        if prev != BOS && (prev < FIRST_CONTENT || prev as usize >= self.config.tgt_vocab) {
            return Err(Error::InvalidToken {
                id: prev,
                vocab_size: self.config.tgt_vocab,
            });
        }
        let l = &self.layout;
        let table = g.param_at(l.tgt_embed)?;
        let e = g.embedding(table, prev as usize)?;
        let s = self.gru_cell(g, &l.dec, e, state.hidden)?;
        let qw = g.param_at(l.att_query)?;
        let q = g.matmul(s, qw)?;
        let scores = g.matmul(q, enc.keys_t)?;
        let weights = g.softmax(scores)?;
        let context = g.matmul(weights, enc.states)?;
        let features = g.concat(&[s, context], 1)?;
        let (ow, ob) = (g.param_at(l.out_w)?, g.param_at(l.out_b)?);
        let logits = g.matmul(features, ow)?;
        let logits = g.add(logits, ob)?;
        let probs = g.softmax(logits)?;
        Ok(StepOutput {
            probs,
            state: DecoderState {
                graph: g.id(),
                enc: enc.id,
                hidden: s,
            },
        })
    }

    /// Scalar node holding `log P(y | x)` for a natural-order target `y`.
    ///
    /// With `cap = Some(L)` and `|y| == L` the final EOS factor is dropped: the
    /// sequence was terminated by the length cap, not by the model.
    pub fn logprob_node(
        &self,
        g: &mut Graph<'_>,
        enc: &EncoderStates,
        y: &[TokenId],
        cap: Option<usize>,
    ) -> Result<NodeId> {
        self.check_target(y)?;
        if let Some(cap) = cap {
            if y.len() > cap {
                return Err(Error::InvalidArgument(format!(
                    "target length {} exceeds cap {cap}",
                    y.len()
                )));
            }
        }
        let ordered = self.direction.orient(y);
        let capped = cap == Some(ordered.len());
        let mut state = self.initial_state(g, enc)?;
        let mut prev = BOS;
        let mut terms = Vec::with_capacity(ordered.len() + 1);
        let targets = ordered.iter().copied().chain((!capped).then_some(EOS));
        for tok in targets {
            let step = self.decoder_step(g, enc, prev, &state)?;
            let p = g.pick(step.probs, output_index(tok))?;
            terms.push(g.log(p)?);
            state = step.state;
            prev = tok;
        }
        if terms.is_empty() {
            return Ok(g.input(Array::scalar(0.0)?));
        }
        g.add_all(&terms)
    }

    /// `log P(y | x)` with BOS/EOS framing, in this model's direction.
    pub fn sequence_logprob(&self, x: &[TokenId], y: &[TokenId]) -> Result<f64> {
        let mut g = self.graph();
        let enc = self.encode(&mut g, x)?;
        let node = self.logprob_node(&mut g, &enc, y, None)?;
        Ok(g.scalar(node))
    }

    /// Like [`Self::sequence_logprob`], but a target of exactly `max_len` tokens
    /// counts as terminated by the cap.
    pub fn sequence_logprob_capped(&self, x: &[TokenId], y: &[TokenId], max_len: usize) -> Result<f64> {
        let mut g = self.graph();
        let enc = self.encode(&mut g, x)?;
        let node = self.logprob_node(&mut g, &enc, y, Some(max_len))?;
        Ok(g.scalar(node))
    }

    /// Per-step `log P(token | history, x)` in generation order, EOS step last.
    pub fn step_logprobs(&self, x: &[TokenId], y: &[TokenId]) -> Result<Vec<f64>> {
        self.check_target(y)?;
        let mut g = self.graph();
        let enc = self.encode(&mut g, x)?;
        let mut state = self.initial_state(&mut g, &enc)?;
        let mut prev = BOS;
        let mut out = Vec::new();
        for tok in self.direction.orient(y).into_iter().chain([EOS]) {
            let step = self.decoder_step(&mut g, &enc, prev, &state)?;
            out.push(g.value(step.probs).data()[output_index(tok)].ln());
            state = step.state;
            prev = tok;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    fn tiny(direction: Direction, seed: u64) -> DirectionalModel {
        DirectionalModel::new(ModelConfig::new(6).with_sizes(4, 5, 3), direction, seed).unwrap()
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let m = tiny(Direction::L2R, 1);
        let mut g = m.graph();
        let enc = m.encode(&mut g, &[3, 4, 5, 3, 4]).unwrap();
        assert_eq!(enc.len(), 5);
        assert_eq!(g.value(enc.states).shape(), &[5, 5]);
        let again = m.encode(&mut g, &[3, 4, 5, 3, 4]).unwrap();
        assert_eq!(g.value(enc.states), g.value(again.states));
        let single = m.encode(&mut g, &[5]).unwrap();
        assert_eq!(g.value(single.states).shape(), &[1, 5]);
    }

    #[test]
    fn encode_rejects_empty_and_reserved() {
        let m = tiny(Direction::L2R, 1);
        let mut g = m.graph();
        assert!(matches!(m.encode(&mut g, &[]), Err(Error::EmptySequence(_))));
        assert!(matches!(m.encode(&mut g, &[3, 1]), Err(Error::InvalidToken { id: 1, .. })));
        assert!(matches!(m.encode(&mut g, &[9]), Err(Error::InvalidToken { id: 9, .. })));
    }

    #[test]
    fn graph_of_another_model_is_rejected() {
        let a = tiny(Direction::L2R, 1);
        let b = DirectionalModel::new(ModelConfig::new(7).with_sizes(4, 5, 3), Direction::L2R, 1).unwrap();
        let mut g = b.graph();
        assert!(matches!(a.encode(&mut g, &[3]), Err(Error::UnboundParams)));
    }

    #[test]
    fn step_distributions_normalize() {
        let m = tiny(Direction::L2R, 4);
        let mut g = m.graph();
        let enc = m.encode(&mut g, &[3, 5, 4]).unwrap();
        let mut state = m.initial_state(&mut g, &enc).unwrap();
        let mut prev = BOS;
        for tok in [4, 3, 5, 5] {
            let out = m.decoder_step(&mut g, &enc, prev, &state).unwrap();
            let p = g.value(out.probs).data();
            assert_eq!(p.len(), m.config().output_size());
            assert!(p.iter().all(|&v| v > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            state = out.state;
            prev = tok;
        }
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut m = tiny(Direction::L2R, 4);
        m.zero_output_layer();
        let mut g = m.graph();
        let enc = m.encode(&mut g, &[3, 4]).unwrap();
        let s = m.initial_state(&mut g, &enc).unwrap();
        let out = m.decoder_step(&mut g, &enc, BOS, &s).unwrap();
        let n = m.config().output_size() as f64;
        for &p in g.value(out.probs).data() {
            assert!((p - 1.0 / n).abs() < 1e-15);
        }
    }

    #[test]
    fn state_from_other_encoding_is_rejected() {
        let m = tiny(Direction::L2R, 4);
        let mut g = m.graph();
        let enc1 = m.encode(&mut g, &[3, 4]).unwrap();
        let enc2 = m.encode(&mut g, &[4]).unwrap();
        let s1 = m.initial_state(&mut g, &enc1).unwrap();
        assert!(matches!(m.decoder_step(&mut g, &enc2, BOS, &s1), Err(Error::StateMismatch)));
        let mut other = m.graph();
        let enc_other = m.encode(&mut other, &[3]).unwrap();
        assert!(matches!(m.initial_state(&mut g, &enc_other), Err(Error::StateMismatch)));
    }

    #[test]
    fn logprob_is_sum_of_steps() {
        for dir in [Direction::L2R, Direction::R2L] {
            let m = tiny(dir, 9);
            let x = [3, 4, 5];
            for y in [vec![], vec![4], vec![5, 3, 4, 4]] {
                let total = m.sequence_logprob(&x, &y).unwrap();
                let steps: f64 = m.step_logprobs(&x, &y).unwrap().iter().sum();
                assert!((total - steps).abs() < 1e-10);
                assert!(total <= 0.0);
            }
        }
    }

    #[test]
    fn single_step_logprob_is_the_eos_entry() {
        let m = tiny(Direction::L2R, 2);
        let mut g = m.graph();
        let enc = m.encode(&mut g, &[4]).unwrap();
        let s = m.initial_state(&mut g, &enc).unwrap();
        let out = m.decoder_step(&mut g, &enc, BOS, &s).unwrap();
        let p_eos = g.value(out.probs).data()[output_index(EOS)];
        assert_eq!(m.sequence_logprob(&[4], &[]).unwrap(), p_eos.ln());
    }

    #[test]
    fn r2l_is_l2r_on_reversed_target() {
        let r2l = tiny(Direction::R2L, 5);
        let l2r = r2l.with_direction(Direction::L2R);
        let x = [3, 5, 4, 4];
        let y = [3, 4, 5, 5, 3];
        let rev: Vec<_> = y.iter().rev().copied().collect();
        assert_eq!(
            r2l.sequence_logprob(&x, &y).unwrap().to_bits(),
            l2r.sequence_logprob(&x, &rev).unwrap().to_bits()
        );
    }

    #[test]
    fn capped_sequences_drop_the_eos_factor() {
        let m = tiny(Direction::L2R, 5);
        let full = m.step_logprobs(&[3], &[4, 5]).unwrap();
        let capped = m.sequence_logprob_capped(&[3], &[4, 5], 2).unwrap();
        assert!((capped - (full[0] + full[1])).abs() < 1e-12);
        let short = m.sequence_logprob_capped(&[3], &[4], 2).unwrap();
        assert_eq!(short, m.sequence_logprob(&[3], &[4]).unwrap());
        assert!(m.sequence_logprob_capped(&[3], &[4, 5, 3], 2).is_err());
    }

    #[test]
    fn capped_space_sums_to_one() {
        // Brute-force enumeration of every target up to length 3 over 3 content tokens.
        for dir in [Direction::L2R, Direction::R2L] {
            let m = tiny(dir, 21);
            let mut seqs: Vec<Vec<TokenId>> = vec![vec![]];
            let mut frontier = seqs.clone();
            for _ in 0..3 {
                let mut next = Vec::new();
                for s in &frontier {
                    for t in 3..6 {
                        let mut e = s.clone();
                        e.push(t);
                        next.push(e);
                    }
                }
                seqs.extend(next.iter().cloned());
                frontier = next;
            }
            assert_eq!(seqs.len(), 40);
            let total: f64 = seqs
                .iter()
                .map(|y| m.sequence_logprob_capped(&[4, 3], y, 3).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        let m = tiny(Direction::R2L, 17);
        let report = finite_diff_check(
            |g| {
                let enc = m.encode(g, &[3, 4])?;
                m.logprob_node(g, &enc, &[5, 4], None)
            },
            m.params(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{:?}", report.worst);
    }

    #[test]
    fn from_params_checks_layout() {
        let m = tiny(Direction::L2R, 1);
        let ok = DirectionalModel::from_params(*m.config(), Direction::R2L, m.params().clone()).unwrap();
        assert_eq!(ok.params(), m.params());
        let other = ModelConfig::new(7).with_sizes(4, 5, 3);
        assert!(DirectionalModel::from_params(other, Direction::L2R, m.params().clone()).is_err());
    }
}
