//! BLEU, length-bucket reports and training-iteration tables.

mod bleu;
mod buckets;

pub use bleu::{
    corpus_bleu, corpus_bleu_with, sentence_bleu, sentence_bleu_with, tokenize, BleuScore, Smoothing, MAX_ORDER,
};
pub use buckets::{bucket_report, BucketRow, LengthBucketReport};

use crate::error::{Error, Result};
use crate::training::TrainLog;

/// Pads the columns of a tab-separated table with spaces.
pub fn align_tsv(tsv: &str) -> String {
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Per-iteration dev BLEU (x100) for both directions, with KL probes when they were logged.
///
/// Iteration 0 is the MLE starting point. A `*` marks the iteration with the best dev score
/// in that direction.
pub fn iteration_log_report(log: &TrainLog) -> Result<String> {
    let its = log.iterations();
    if its.is_empty() {
        return Err(Error::InvalidArgument("training log has no iteration records".into()));
    }
    let best = |f: fn(&crate::training::IterationRecord) -> f64| {
        its.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, r)| if f(r) > acc.1 { (i, f(r)) } else { acc })
            .0
    };
    let (bl, br) = (best(|r| r.l2r_bleu), best(|r| r.r2l_bleu));
    let has_exact = its.iter().any(|r| r.kl_exact.is_some());
    let has_sampled = its.iter().any(|r| r.kl_sampled.is_some());
    let mut tsv = String::from("iteration\tl2r\tr2l");
    if has_exact {
        tsv.push_str("\tkl_exact");
    }
    if has_sampled {
        tsv.push_str("\tkl_sampled");
    }
    tsv.push('\n');
    let kl = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    for (i, r) in its.iter().enumerate() {
        let mark = |b: usize| if b == i { "*" } else { "" };
        tsv.push_str(&format!(
            "{}\t{:.2}{}\t{:.2}{}",
            r.iteration,
            100.0 * r.l2r_bleu,
            mark(bl),
            100.0 * r.r2l_bleu,
            mark(br)
        ));
        if has_exact {
            tsv.push_str(&format!("\t{}", kl(r.kl_exact)));
        }
        if has_sampled {
            tsv.push_str(&format!("\t{}", kl(r.kl_sampled)));
        }
        tsv.push('\n');
    }
    Ok(align_tsv(&tsv))
}
