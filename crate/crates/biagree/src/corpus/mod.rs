//! Synthetic translation tasks, parallel-text files and vocabulary construction.

mod io;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::seq2seq::{TokenId, TokenSequence, Vocab, FIRST_CONTENT, RESERVED};

pub use io::{load_parallel, load_vocab, save_parallel, save_vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// `y = x`.
    Copy,
    /// `y` is `x` reversed.
    Reverse,
    /// `y` is the token-wise lexicon translation of `x` followed by the translation
    /// of `x`'s first token. Noise never touches that final token.
    PrefixSuffixAgreement,
    /// Token-wise lexicon translation with output noise.
    NoisyLexicon,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::PrefixSuffixAgreement => "prefix-suffix-agreement",
            TaskKind::NoisyLexicon => "noisy-lexicon",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "copy" => TaskKind::Copy,
            "reverse" => TaskKind::Reverse,
            "prefix-suffix-agreement" => TaskKind::PrefixSuffixAgreement,
            "noisy-lexicon" => TaskKind::NoisyLexicon,
            _ => return Err(Error::InvalidArgument(format!("unknown task kind {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Number of content tokens, shared by source and target.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a target token is replaced by a different random token.
    pub noise: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        Self {
            kind,
            vocab_size: 16,
            min_len: 4,
            max_len: 20,
            noise: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let needed = match self.kind {
            TaskKind::Copy | TaskKind::Reverse => 1,
            TaskKind::PrefixSuffixAgreement | TaskKind::NoisyLexicon => 2,
        };
        if self.vocab_size < needed {
            return Err(Error::InvalidArgument(format!(
                "task {} needs at least {needed} content tokens, got {}",
                self.kind, self.vocab_size
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "length range {}..={} is invalid",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidArgument("noise must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Content token strings `w0, w1, ...`.
    pub fn vocab(&self) -> Vocab {
        Vocab::from_tokens((0..self.vocab_size).map(|i| format!("w{i}"))).expect("generated tokens are valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Real,
    /// Source produced by back-translating a monolingual target.
    SyntheticBt,
    Pseudo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub x: TokenSequence,
    pub y: TokenSequence,
    pub provenance: Provenance,
}

impl SentencePair {
    pub fn real(x: Vec<TokenId>, y: Vec<TokenId>) -> Self {
        Self {
            x: TokenSequence(x),
            y: TokenSequence(y),
            provenance: Provenance::Real,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub split: Split,
    pub pairs: Vec<SentencePair>,
}

impl Corpus {
    pub fn new(split: Split, pairs: Vec<SentencePair>) -> Self {
        Self { split, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<TokenSequence> {
        self.pairs.iter().map(|p| p.x.clone()).collect()
    }

    pub fn targets(&self) -> Vec<TokenSequence> {
        self.pairs.iter().map(|p| p.y.clone()).collect()
    }

    /// `(x, y)` pairs in corpus order.
    pub fn examples(&self) -> Vec<(TokenSequence, TokenSequence)> {
        self.pairs.iter().map(|p| (p.x.clone(), p.y.clone())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Generated train/dev/test corpora with the shared vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub lexicon: Vec<TokenId>,
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &Corpus {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

struct Generator {
    spec: TaskSpec,
    /// `lexicon[i]` translates content id `FIRST_CONTENT + i`.
    lexicon: Vec<TokenId>,
}

impl Generator {
    fn translate(&self, t: TokenId) -> TokenId {
        self.lexicon[(t - FIRST_CONTENT) as usize]
    }

    fn noisy<R: Rng>(&self, t: TokenId, rng: &mut R) -> TokenId {
        if self.spec.noise > 0.0 && rng.gen::<f64>() < self.spec.noise {
            let shift = rng.gen_range(1..self.spec.vocab_size) as TokenId;
            let offset = (t - FIRST_CONTENT + shift) % self.spec.vocab_size as TokenId;
            FIRST_CONTENT + offset
        } else {
            t
        }
    }

    fn target<R: Rng>(&self, x: &[TokenId], rng: &mut R) -> Vec<TokenId> {
        match self.spec.kind {
            TaskKind::Copy => x.to_vec(),
            TaskKind::Reverse => x.iter().rev().copied().collect(),
            TaskKind::NoisyLexicon => x.iter().map(|&t| self.noisy(self.translate(t), rng)).collect(),
            TaskKind::PrefixSuffixAgreement => {
                let mut y: Vec<TokenId> = x.iter().map(|&t| self.noisy(self.translate(t), rng)).collect();
                y.push(self.translate(x[0]));
                y
            }
        }
    }
}

/// Checks a pair against the noise-free task relation. Noisy tasks only check
/// the parts that noise cannot touch.
pub fn satisfies_task(kind: TaskKind, lexicon: &[TokenId], x: &[TokenId], y: &[TokenId]) -> bool {
    let tr = |t: TokenId| lexicon[(t - FIRST_CONTENT) as usize];
    match kind {
        TaskKind::Copy => x == y,
        TaskKind::Reverse => x.iter().rev().eq(y.iter()),
        TaskKind::NoisyLexicon => x.len() == y.len(),
        TaskKind::PrefixSuffixAgreement => y.len() == x.len() + 1 && y.last() == Some(&tr(x[0])),
    }
}

/// Generates reproducible, source-disjoint train/dev/test splits.
pub fn gen_synthetic(spec: &TaskSpec, sizes: SplitSizes) -> Result<Dataset> {
    spec.validate()?;
    if sizes.train == 0 || sizes.dev == 0 || sizes.test == 0 {
        return Err(Error::InvalidArgument("every split needs at least one pair".into()));
    }
    let mut lexicon: Vec<TokenId> = (0..spec.vocab_size as TokenId).map(|i| FIRST_CONTENT + i).collect();
    lexicon.shuffle(&mut rng::stream(spec.seed, &[0]));
    let generator = Generator { spec: *spec, lexicon };
    let mut rng = rng::stream(spec.seed, &[1]);
    let mut seen: HashSet<Vec<TokenId>> = HashSet::new();
    let total = sizes.train + sizes.dev + sizes.test;
    let budget = 100 * total + 1000;
    let mut pairs = Vec::with_capacity(total);
    let mut attempts = 0;
    while pairs.len() < total {
        attempts += 1;
        if attempts > budget {
            return Err(Error::InvalidArgument(format!(
                "could not draw {total} distinct sources from this task spec"
            )));
        }
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let x: Vec<TokenId> = (0..len)
            .map(|_| FIRST_CONTENT + rng.gen_range(0..spec.vocab_size) as TokenId)
            .collect();
        if !seen.insert(x.clone()) {
            continue;
        }
        let y = generator.target(&x, &mut rng);
        pairs.push(SentencePair::real(x, y));
    }
    let test = pairs.split_off(sizes.train + sizes.dev);
    let dev = pairs.split_off(sizes.train);
    Ok(Dataset {
        vocab: spec.vocab(),
        lexicon: generator.lexicon,
        train: Corpus::new(Split::Train, pairs),
        dev: Corpus::new(Split::Dev, dev),
        test: Corpus::new(Split::Test, test),
    })
}

/// Frequency-ranked vocabulary: most frequent first, ties in lexicographic order.
/// Reserved strings in the stream are ignored. `cap` limits the content tokens.
pub fn build_vocab<I, S>(tokens: I, cap: Option<usize>) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut any = false;
    for t in tokens {
        any = true;
        let t = t.as_ref();
        if !RESERVED.contains(&t) {
            *counts.entry(t.to_string()).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::EmptySequence("vocabulary token stream"));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(cap) = cap {
        ranked.truncate(cap);
    }
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes() -> SplitSizes {
        SplitSizes {
            train: 50,
            dev: 10,
            test: 10,
        }
    }

    #[test]
    fn every_pair_satisfies_its_task() {
        for kind in [
            TaskKind::Copy,
            TaskKind::Reverse,
            TaskKind::PrefixSuffixAgreement,
            TaskKind::NoisyLexicon,
        ] {
            let spec = TaskSpec {
                noise: 0.2,
                ..TaskSpec::new(kind, 3)
            };
            let d = gen_synthetic(&spec, sizes()).unwrap();
            for c in [&d.train, &d.dev, &d.test] {
                for p in &c.pairs {
                    assert!(satisfies_task(kind, &d.lexicon, &p.x, &p.y), "{kind}: {p:?}");
                    assert!((4..=20).contains(&p.x.len()));
                }
            }
        }
    }

    #[test]
    fn copy_is_identity_and_generation_is_deterministic() {
        let spec = TaskSpec::new(TaskKind::Copy, 9);
        let a = gen_synthetic(&spec, sizes()).unwrap();
        assert!(a.train.pairs.iter().all(|p| p.x == p.y));
        assert_eq!(a, gen_synthetic(&spec, sizes()).unwrap());
        assert_ne!(a, gen_synthetic(&TaskSpec::new(TaskKind::Copy, 10), sizes()).unwrap());
    }

    #[test]
    fn splits_are_disjoint() {
        let d = gen_synthetic(&TaskSpec::new(TaskKind::NoisyLexicon, 1), sizes()).unwrap();
        let train: HashSet<_> = d.train.pairs.iter().map(|p| p.x.clone()).collect();
        assert!(d.dev.pairs.iter().chain(&d.test.pairs).all(|p| !train.contains(&p.x)));
        assert_eq!((d.train.len(), d.dev.len(), d.test.len()), (50, 10, 10));
    }

    #[test]
    fn noise_leaves_headroom_and_spares_the_final_token() {
        let spec = TaskSpec {
            noise: 0.3,
            ..TaskSpec::new(TaskKind::PrefixSuffixAgreement, 4)
        };
        let d = gen_synthetic(&spec, sizes()).unwrap();
        let tr = |t: TokenId| d.lexicon[(t - FIRST_CONTENT) as usize];
        let changed = d
            .train
            .pairs
            .iter()
            .flat_map(|p| p.x.iter().zip(p.y.iter()).map(|(&a, &b)| (tr(a) != b) as usize))
            .sum::<usize>();
        assert!(changed > 0);
    }

    #[test]
    fn invalid_specs_rejected() {
        let small = TaskSpec {
            vocab_size: 1,
            ..TaskSpec::new(TaskKind::NoisyLexicon, 0)
        };
        assert!(gen_synthetic(&small, sizes()).is_err());
        let tiny_space = TaskSpec {
            vocab_size: 1,
            min_len: 1,
            max_len: 2,
            ..TaskSpec::new(TaskKind::Copy, 0)
        };
        assert!(gen_synthetic(&tiny_space, sizes()).is_err());
        assert_eq!("noisy-lexicon".parse::<TaskKind>().unwrap(), TaskKind::NoisyLexicon);
    }

    #[test]
    fn vocab_frequency_and_tie_rules() {
        let v = build_vocab("b b a".split(' '), None).unwrap();
        assert!(v.id("b").unwrap() < v.id("a").unwrap());
        assert_eq!(v.id("b"), Some(FIRST_CONTENT));
        let v = build_vocab("b a b a".split(' '), None).unwrap();
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        let v = build_vocab("c b b a".split(' '), Some(1)).unwrap();
        assert_eq!(v.content_len(), 1);
        assert!(v.id("a").is_none());
        assert!(build_vocab(Vec::<&str>::new(), None).is_err());
    }
}
