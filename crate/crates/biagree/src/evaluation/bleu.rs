use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// How sentence-level precisions are smoothed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothing {
    None,
    /// Adds one to numerator and denominator of every order above 1.
    AddOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    /// In `[0, 1]`.
    pub value: f64,
    /// Modified precision per order; `None` where the candidate has no n-grams of that order.
    pub precisions: [Option<f64>; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuScore {
    /// Score on the 0-100 scale used in reports.
    pub fn percent(&self) -> f64 {
        100.0 * self.value
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Stats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

impl Stats {
    fn add(&mut self, other: &Stats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn sentence_stats<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Stats {
    let mut s = Stats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..Stats::default()
    };
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        s.matches[n - 1] = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    s
}

fn score(stats: &Stats, smoothing: Smoothing) -> BleuScore {
    let mut precisions = [None; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut any_zero = false;
    let mut included = 0;
    for n in 0..MAX_ORDER {
        let (m, t) = (stats.matches[n], stats.totals[n]);
        if t == 0 {
            continue;
        }
        let p = if n > 0 && smoothing == Smoothing::AddOne {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        } else {
            m as f64 / t as f64
        };
        precisions[n] = Some(p);
        included += 1;
        if p == 0.0 {
            any_zero = true;
        } else {
            log_sum += p.ln() / MAX_ORDER as f64;
        }
    }
    let (c, r) = (stats.hyp_len as f64, stats.ref_len as f64);
    let brevity_penalty = if c >= r {
        1.0
    } else if c == 0.0 {
        0.0
    } else {
        (1.0 - r / c).exp()
    };
    let value = if any_zero || included == 0 {
        0.0
    } else {
        (brevity_penalty * log_sum.exp()).clamp(0.0, 1.0)
    };
    BleuScore {
        value,
        precisions,
        matches: stats.matches,
        totals: stats.totals,
        brevity_penalty,
        hyp_len: stats.hyp_len,
        ref_len: stats.ref_len,
    }
}

/// Corpus BLEU-4 with clipped n-gram counts pooled over all sentences.
pub fn corpus_bleu<T, H, R>(hyps: &[H], refs: &[R]) -> Result<BleuScore>
where
    T: Eq + Hash,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    corpus_bleu_with(hyps, refs, Smoothing::None)
}

pub fn corpus_bleu_with<T, H, R>(hyps: &[H], refs: &[R], smoothing: Smoothing) -> Result<BleuScore>
where
    T: Eq + Hash,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = Stats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&sentence_stats(h.as_ref(), r.as_ref()));
    }
    Ok(score(&total, smoothing))
}

/// Sentence BLEU with add-one smoothing on orders 2-4.
pub fn sentence_bleu<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> BleuScore {
    sentence_bleu_with(hyp, reference, Smoothing::AddOne)
}

pub fn sentence_bleu_with<T: Eq + Hash>(hyp: &[T], reference: &[T], smoothing: Smoothing) -> BleuScore {
    score(&sentence_stats(hyp, reference), smoothing)
}

/// Whitespace tokenization with optional lowercasing.
pub fn tokenize(line: &str, lowercase: bool) -> Vec<String> {
    line.split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}
