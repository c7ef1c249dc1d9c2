use std::fmt::Write as _;
use std::hash::Hash;

use super::bleu::corpus_bleu;
use crate::error::{Error, Result};

/// One source-length bucket `[lo, hi)`; `hi = None` is unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketRow {
    pub lo: usize,
    pub hi: Option<usize>,
    pub count: usize,
    /// Corpus BLEU per system, `None` for an empty bucket.
    pub bleu: Vec<Option<f64>>,
}

impl BucketRow {
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("[{},{})", self.lo, hi),
            None => format!("[{},inf)", self.lo),
        }
    }
}

/// Corpus BLEU per source-length bucket for several systems.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthBucketReport {
    pub systems: Vec<String>,
    pub rows: Vec<BucketRow>,
}

/// Groups test sentences by source length and scores each group.
///
/// `edges` must start at 0 and increase strictly; bucket `i` covers
/// `[edges[i], edges[i + 1])` and the last bucket is unbounded.
pub fn bucket_report<T, R, H>(
    source_lens: &[usize],
    references: &[R],
    systems: &[(String, Vec<H>)],
    edges: &[usize],
) -> Result<LengthBucketReport>
where
    T: Eq + Hash,
    R: AsRef<[T]>,
    H: AsRef<[T]>,
{
    if edges.first() != Some(&0) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "bucket edges must start at 0 and increase strictly, got {edges:?}"
        )));
    }
    if references.len() != source_lens.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sources but {} references",
            source_lens.len(),
            references.len()
        )));
    }
    for (name, hyps) in systems {
        if hyps.len() != source_lens.len() {
            return Err(Error::InvalidArgument(format!(
                "system {name} has {} lines, expected {}",
                hyps.len(),
                source_lens.len()
            )));
        }
    }
    let mut rows = Vec::with_capacity(edges.len());
    for (i, &lo) in edges.iter().enumerate() {
        let hi = edges.get(i + 1).copied();
        let members: Vec<usize> = source_lens
            .iter()
            .enumerate()
            .filter(|(_, &len)| len >= lo && hi.is_none_or(|h| len < h))
            .map(|(j, _)| j)
            .collect();
        let refs: Vec<&[T]> = members.iter().map(|&j| references[j].as_ref()).collect();
        let bleu = systems
            .iter()
            .map(|(_, hyps)| {
                if members.is_empty() {
                    return Ok(None);
                }
                let h: Vec<&[T]> = members.iter().map(|&j| hyps[j].as_ref()).collect();
                corpus_bleu(&h, &refs).map(|s| Some(s.value))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(BucketRow {
            lo,
            hi,
            count: members.len(),
            bleu,
        });
    }
    Ok(LengthBucketReport {
        systems: systems.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    })
}

fn fmt_bleu(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |b| format!("{:.2}", 100.0 * b))
}

impl LengthBucketReport {
    /// BLEU difference of system `i` over system 0, per bucket.
    pub fn deltas(&self, system: usize) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| match (r.bleu[0], r.bleu[system]) {
                (Some(base), Some(v)) => Some(v - base),
                _ => None,
            })
            .collect()
    }

    /// Tab-separated table with one row per bucket and delta columns against the first system.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bucket\tlo\thi\tcount");
        for s in &self.systems {
            let _ = write!(out, "\t{s}");
        }
        for s in self.systems.iter().skip(1) {
            let _ = write!(out, "\tdelta:{s}");
        }
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let hi = r.hi.map_or_else(|| "inf".to_string(), |h| h.to_string());
            let _ = write!(out, "{}\t{}\t{}\t{}", r.label(), r.lo, hi, r.count);
            for b in &r.bleu {
                let _ = write!(out, "\t{}", fmt_bleu(*b));
            }
            for s in 1..self.systems.len() {
                let d = self.deltas(s)[i];
                let _ = write!(out, "\t{}", d.map_or_else(|| "n/a".into(), |d| format!("{:+.2}", 100.0 * d)));
            }
            out.push('\n');
        }
        out
    }

    /// Space-aligned rendering of [`Self::to_tsv`].
    pub fn to_text(&self) -> String {
        super::align_tsv(&self.to_tsv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn single_bucket_equals_corpus_bleu() {
        let refs = vec![v("a b c d"), v("e f g"), v("a a b")];
        let hyps = vec![v("a b c"), v("e f g"), v("a b b")];
        let lens = [4, 3, 3];
        let report = bucket_report(&lens, &refs, &[("sys".into(), hyps.clone())], &[0]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].count, 3);
        assert_eq!(report.rows[0].bleu[0], Some(corpus_bleu(&hyps, &refs).unwrap().value));
    }

    #[test]
    fn empty_bucket_is_marked() {
        let refs = vec![v("a b"); 3];
        let report = bucket_report(&[5, 5, 5], &refs, &[("s".into(), refs.clone())], &[0, 10]).unwrap();
        assert_eq!(report.rows[0].count, 3);
        assert_eq!(report.rows[1].count, 0);
        assert_eq!(report.rows[1].bleu[0], None);
        assert!(report.to_tsv().contains("[10,inf)\t10\tinf\t0\tn/a"));
        let total: usize = report.rows.iter().map(|r| r.count).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn misaligned_inputs_rejected() {
        let refs = vec![v("a b"); 2];
        assert!(bucket_report(&[1, 2], &refs, &[("s".into(), vec![v("a")])], &[0]).is_err());
        assert!(bucket_report(&[1, 2], &refs, &[("s".into(), refs.clone())], &[1]).is_err());
        assert!(bucket_report(&[1, 2], &refs, &[("s".into(), refs.clone())], &[0, 5, 5]).is_err());
    }

    #[test]
    fn deltas_against_first_system() {
        let refs = vec![v("a b c d"), v("a b c d e f g h i j k l")];
        let base = vec![v("a b c x"), v("a b c d e f g h i j k x")];
        let better = refs.clone();
        let report = bucket_report(
            &[4, 12],
            &refs,
            &[("mle".into(), base), ("rt".into(), better)],
            &[0, 10],
        )
        .unwrap();
        let d = report.deltas(1);
        assert!(d.iter().all(|x| x.unwrap() > 0.0));
        assert!(report.to_tsv().starts_with("bucket\tlo\thi\tcount\tmle\trt\tdelta:rt\n"));
    }
}
