//! Optimization: MLE pretraining, helper-regularized phases, joint alternation
//! with dev-BLEU stopping, and back-translation.
//!
//! Every random choice is keyed by `(checkpoint seed, direction, model step)`,
//! so a phase resumed from a checkpoint continues exactly as an uninterrupted run.

mod checkpoint;
mod log;
mod optimizer;

use rand::Rng;

use crate::agreement::{mle_grad, rt_grad, GradientEstimate, RegularizerConfig};
use crate::corpus::{Corpus, Provenance, SentencePair};
use crate::decoding::{decode_all, DecodeConfig};
use crate::error::{Error, Result};
use crate::evaluation::corpus_bleu;
use crate::oracle::{exact_distribution, exact_kl, EnumeratedSpace};
use crate::rng;
use crate::seq2seq::{Direction, DirectionalModel, ModelConfig, TokenSequence, Vocab};

pub use checkpoint::{Checkpoint, MAGIC};
pub use log::{IterationRecord, LogRecord, TrainLog};
pub use optimizer::{AdamConfig, OptimizerState};

const INIT_TAG: u64 = 0x1417;
const BATCH_TAG: u64 = 0xBA7C;
const GRAD_TAG: u64 = 0x6AD;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Record a step line every this many steps (and on the last step of a phase).
    pub log_every: usize,
    /// Decoder used for dev BLEU.
    pub dev_decode: DecodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 1,
            log_every: 50,
            dev_decode: DecodeConfig::beam(8, 1.0),
        }
    }
}

/// Symmetric-KL measurement on a fixed probe set, taken after every iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct KlProbe {
    pub sources: Vec<TokenSequence>,
    /// Length cap for both the exact and the sampled estimate.
    pub max_len: usize,
    /// Samples per source and direction for the sampled estimate; 0 skips it.
    pub samples: usize,
    /// Compute the enumeration-exact value (tiny vocabularies only).
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointTrainConfig {
    pub max_iterations: usize,
    pub steps_per_phase: usize,
    pub probe: Option<KlProbe>,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            steps_per_phase: 2000,
            probe: None,
        }
    }
}

fn direction_tag(d: Direction) -> u64 {
    match d {
        Direction::L2R => 0,
        Direction::R2L => 1,
    }
}

/// A freshly initialized checkpoint. Weights depend only on `(cfg.seed, direction)`.
pub fn init_checkpoint(direction: Direction, vocab: &Vocab, model: ModelConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
    if model.tgt_vocab != vocab.len() || model.src_vocab != vocab.len() {
        return Err(Error::VocabMismatch(format!(
            "model expects {}/{} ids, vocabulary has {}",
            model.src_vocab,
            model.tgt_vocab,
            vocab.len()
        )));
    }
    let seed = rng::derive_seed(cfg.seed, &[INIT_TAG, direction_tag(direction)]);
    let m = DirectionalModel::new(model, direction, seed)?;
    Ok(Checkpoint::fresh(m, vocab.clone(), cfg.adam, cfg.seed))
}

fn draw_batch(ck: &Checkpoint, corpus: &Corpus, batch_size: usize) -> Vec<(TokenSequence, TokenSequence)> {
    let mut r = rng::stream(ck.seed, &[BATCH_TAG, direction_tag(ck.model.direction()), ck.step]);
    (0..batch_size)
        .map(|_| {
            let p = &corpus.pairs[r.gen_range(0..corpus.len())];
            (p.x.clone(), p.y.clone())
        })
        .collect()
}

fn run_phase<F>(
    mut ck: Checkpoint,
    train: &Corpus,
    cfg: &TrainConfig,
    steps: usize,
    phase: &str,
    log: &mut TrainLog,
    grad: F,
) -> Result<Checkpoint>
where
    F: Fn(&DirectionalModel, &[(TokenSequence, TokenSequence)], u64) -> Result<GradientEstimate>,
{
    if steps > 0 && train.is_empty() {
        return Err(Error::EmptySequence("training corpus"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let dir = ck.model.direction();
    for k in 0..steps {
        let batch = draw_batch(&ck, train, cfg.batch_size);
        let seed = rng::derive_seed(ck.seed, &[GRAD_TAG, direction_tag(dir), ck.step]);
        let est = match grad(&ck.model, &batch, seed) {
            Err(Error::NonFinite(_)) => None,
            other => Some(other?),
        };
        let est = match est {
            Some(e) if e.total.is_finite() && e.log_likelihood.is_finite() => e,
            _ => {
                return Err(Error::Diverged {
                    step: ck.step,
                    batch: k,
                })
            }
        };
        ck.optimizer.ascend(ck.model.params_mut(), &est.total)?;
        ck.step += 1;
        if (cfg.log_every > 0 && ck.step % cfg.log_every as u64 == 0) || k + 1 == steps {
            log.push(
                LogRecord::new("step")
                    .with("phase", phase)
                    .with("direction", dir)
                    .with("step", ck.step)
                    .with("log_likelihood", est.log_likelihood / batch.len() as f64)
                    .with("generated", est.generated)
                    .with("kept", est.kept)
                    .with("keep_rate", est.keep_rate()),
            );
        }
    }
    Ok(ck)
}

/// Continues plain maximum-likelihood training for `steps` steps.
pub fn continue_mle(ck: Checkpoint, train: &Corpus, cfg: &TrainConfig, steps: usize, log: &mut TrainLog) -> Result<Checkpoint> {
    run_phase(ck, train, cfg, steps, "mle", log, |m, b, _| mle_grad(m, b))
}

/// Initializes a model and trains it with maximum likelihood.
pub fn pretrain_mle(
    direction: Direction,
    train: &Corpus,
    vocab: &Vocab,
    model: ModelConfig,
    cfg: &TrainConfig,
    steps: usize,
    log: &mut TrainLog,
) -> Result<Checkpoint> {
    if train.is_empty() {
        return Err(Error::EmptySequence("training corpus"));
    }
    let ck = init_checkpoint(direction, vocab, model, cfg)?;
    continue_mle(ck, train, cfg, steps, log)
}

/// One regularized phase: `self_ck` learns with `helper` frozen.
pub fn train_direction_with_helper(
    self_ck: Checkpoint,
    helper: &DirectionalModel,
    train: &Corpus,
    cfg: &TrainConfig,
    reg: &RegularizerConfig,
    steps: usize,
    log: &mut TrainLog,
) -> Result<Checkpoint> {
    if self_ck.model.direction() == helper.direction() {
        return Err(Error::InvalidArgument("helper must run in the opposite direction".into()));
    }
    run_phase(self_ck, train, cfg, steps, "rt", log, |m, b, seed| rt_grad(m, helper, b, reg, seed))
}

/// Corpus BLEU of `model`'s decodes of the corpus sources against its targets.
pub fn dev_bleu(model: &DirectionalModel, dev: &Corpus, decode: &DecodeConfig) -> Result<f64> {
    if dev.is_empty() {
        return Err(Error::EmptySequence("dev corpus"));
    }
    let hyps = decode_all(model, &dev.sources(), decode, 0)?;
    let hyps: Vec<&[u32]> = hyps.iter().map(|h| &h.tokens[..]).collect();
    Ok(corpus_bleu(&hyps, &dev.targets())?.value)
}

/// Average of `KL(P_l2r ‖ P_r2l) + KL(P_r2l ‖ P_l2r)` over the probe sources, by enumeration.
pub fn exact_symmetric_kl(l2r: &DirectionalModel, r2l: &DirectionalModel, sources: &[TokenSequence], max_len: usize) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::EmptySequence("probe sources"));
    }
    let space = EnumeratedSpace::for_vocab(l2r.config().tgt_vocab, max_len)?;
    let mut total = 0.0;
    for x in sources {
        let p = exact_distribution(l2r, x, &space)?;
        let q = exact_distribution(r2l, x, &space)?;
        total += exact_kl(&p, &q)? + exact_kl(&q, &p)?;
    }
    Ok(total / sources.len() as f64)
}

/// Monte Carlo version of [`exact_symmetric_kl`] from ancestral samples of each model.
pub fn sampled_symmetric_kl(
    l2r: &DirectionalModel,
    r2l: &DirectionalModel,
    sources: &[TokenSequence],
    max_len: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if sources.is_empty() || samples == 0 {
        return Err(Error::EmptySequence("probe sources or samples"));
    }
    let cfg = DecodeConfig::sample().with_max_len(max_len);
    let mut total = 0.0;
    for (i, x) in sources.iter().enumerate() {
        for (d, (p, q)) in [(l2r, r2l), (r2l, l2r)].into_iter().enumerate() {
            let mut sum = 0.0;
            for s in 0..samples {
                let h = crate::decoding::ancestral_sample(p, x, &cfg, rng::derive_seed(seed, &[i as u64, d as u64, s as u64]))?;
                sum += h.rescore(p, x)? - h.rescore(q, x)?;
            }
            total += sum / samples as f64;
        }
    }
    Ok(total / sources.len() as f64)
}

/// Result of [`joint_train`]: the best dev-BLEU checkpoint seen for each direction.
#[derive(Clone, Debug)]
pub struct JointOutcome {
    pub l2r: Checkpoint,
    pub r2l: Checkpoint,
    pub best_l2r_iteration: usize,
    pub best_r2l_iteration: usize,
    pub iterations: Vec<IterationRecord>,
    /// True when the loop halted because neither direction's dev BLEU increased.
    pub converged: bool,
}

fn probe(p: &KlProbe, l2r: &DirectionalModel, r2l: &DirectionalModel, seed: u64, iteration: usize) -> Result<(Option<f64>, Option<f64>)> {
    let exact = p
        .exact
        .then(|| exact_symmetric_kl(l2r, r2l, &p.sources, p.max_len))
        .transpose()?;
    let sampled = (p.samples > 0)
        .then(|| sampled_symmetric_kl(l2r, r2l, &p.sources, p.max_len, p.samples, rng::derive_seed(seed, &[iteration as u64])))
        .transpose()?;
    Ok((exact, sampled))
}

/// Alternating joint training.
///
/// Each iteration runs a left-to-right phase with the right-to-left model frozen,
/// then a right-to-left phase with the iteration-start left-to-right model frozen.
/// Iteration 0 records the inputs. Training stops once an iteration improves
/// neither direction's dev BLEU, or after `max_iterations`.
#[allow(clippy::too_many_arguments)]
pub fn joint_train(
    l2r: Checkpoint,
    r2l: Checkpoint,
    train: &Corpus,
    dev: &Corpus,
    joint: &JointTrainConfig,
    cfg: &TrainConfig,
    reg: &RegularizerConfig,
    log: &mut TrainLog,
) -> Result<JointOutcome> {
    if l2r.model.direction() != Direction::L2R || r2l.model.direction() != Direction::R2L {
        return Err(Error::InvalidArgument("joint training needs an l2r and an r2l checkpoint".into()));
    }
    if l2r.vocab != r2l.vocab {
        return Err(Error::VocabMismatch("joint training checkpoints use different vocabularies".into()));
    }
    let record = |it: usize, a: &Checkpoint, b: &Checkpoint| -> Result<IterationRecord> {
        let (kl_exact, kl_sampled) = match &joint.probe {
            Some(p) => probe(p, &a.model, &b.model, cfg.seed, it)?,
            None => (None, None),
        };
        Ok(IterationRecord {
            iteration: it,
            l2r_bleu: dev_bleu(&a.model, dev, &cfg.dev_decode)?,
            r2l_bleu: dev_bleu(&b.model, dev, &cfg.dev_decode)?,
            kl_exact,
            kl_sampled,
        })
    };
    let first = record(0, &l2r, &r2l)?;
    log.push_iteration(&first);
    let mut rows = vec![first];
    let (mut best_l2r, mut best_r2l) = ((l2r.clone(), 0), (r2l.clone(), 0));
    let (mut cur_l2r, mut cur_r2l) = (l2r, r2l);
    let mut converged = false;
    for it in 1..=joint.max_iterations {
        let helper_r2l = cur_r2l.model.clone();
        let helper_l2r = cur_l2r.model.clone();
        cur_l2r = train_direction_with_helper(cur_l2r, &helper_r2l, train, cfg, reg, joint.steps_per_phase, log)?;
        cur_r2l = train_direction_with_helper(cur_r2l, &helper_l2r, train, cfg, reg, joint.steps_per_phase, log)?;
        let row = record(it, &cur_l2r, &cur_r2l)?;
        log.push_iteration(&row);
        let prev = rows.last().expect("iteration 0 is recorded");
        let stalled = row.l2r_bleu <= prev.l2r_bleu && row.r2l_bleu <= prev.r2l_bleu;
        if row.l2r_bleu > rows[best_l2r.1].l2r_bleu {
            best_l2r = (cur_l2r.clone(), it);
        }
        if row.r2l_bleu > rows[best_r2l.1].r2l_bleu {
            best_r2l = (cur_r2l.clone(), it);
        }
        rows.push(row);
        if stalled {
            converged = true;
            break;
        }
    }
    log.push(
        LogRecord::new("joint_end")
            .with("iterations", rows.len() - 1)
            .with("best_l2r_iteration", best_l2r.1)
            .with("best_r2l_iteration", best_r2l.1)
            .with("converged", converged),
    );
    Ok(JointOutcome {
        l2r: best_l2r.0,
        r2l: best_r2l.0,
        best_l2r_iteration: best_l2r.1,
        best_r2l_iteration: best_r2l.1,
        iterations: rows,
        converged,
    })
}

/// Adds `(decode(y), y)` for every monolingual target `y`, using a model that
/// translates targets into sources. Pairs whose synthetic source comes out empty
/// are skipped, since the encoder needs at least one token.
pub fn back_translate_augment(
    target_to_source: &DirectionalModel,
    monolingual: &[TokenSequence],
    corpus: &Corpus,
    decode: &DecodeConfig,
) -> Result<Corpus> {
    let sources = decode_all(target_to_source, monolingual, decode, 0)?;
    let mut out = corpus.clone();
    for (y, x) in monolingual.iter().zip(sources) {
        if x.tokens.is_empty() {
            continue;
        }
        out.pairs.push(SentencePair {
            x: x.tokens,
            y: y.clone(),
            provenance: Provenance::SyntheticBt,
        });
    }
    Ok(out)
}

/// The corpus with source and target exchanged, for training a back-translation model.
pub fn swap_sides(corpus: &Corpus) -> Corpus {
    Corpus::new(
        corpus.split,
        corpus
            .pairs
            .iter()
            .filter(|p| !p.y.is_empty())
            .map(|p| SentencePair {
                x: p.y.clone(),
                y: p.x.clone(),
                provenance: p.provenance,
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests;
