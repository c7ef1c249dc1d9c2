use std::fs;
use std::path::Path;

use super::{Corpus, SentencePair, Split};
use crate::error::{Error, Result};
use crate::seq2seq::{TokenId, Vocab, RESERVED};

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?.lines().map(str::to_string).collect())
}

fn encode_line(vocab: &Vocab, path: &Path, line: usize, text: &str) -> Result<Vec<TokenId>> {
    text.split_whitespace()
        .map(|t| {
            vocab.id(t).filter(|&id| vocab.is_content(id)).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("unknown token {t:?}"),
            })
        })
        .collect()
}

/// Reads paired whitespace-tokenized files. Every pair is tagged [`super::Provenance::Real`].
pub fn load_parallel(source: &Path, target: &Path, vocab: &Vocab, split: Split) -> Result<Corpus> {
    let src = read_lines(source)?;
    let tgt = read_lines(target)?;
    if src.len() != tgt.len() {
        return Err(Error::LineCount {
            source_path: source.to_path_buf(),
            source_lines: src.len(),
            target_path: target.to_path_buf(),
            target_lines: tgt.len(),
        });
    }
    let mut pairs = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
        let line = i + 1;
        let x = encode_line(vocab, source, line, s)?;
        if x.is_empty() {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line,
                message: "empty source sentence".into(),
            });
        }
        let y = encode_line(vocab, target, line, t)?;
        pairs.push(SentencePair::real(x, y));
    }
    Ok(Corpus::new(split, pairs))
}

pub fn save_parallel(corpus: &Corpus, source: &Path, target: &Path, vocab: &Vocab) -> Result<()> {
    let render = |seqs: &mut dyn Iterator<Item = &[TokenId]>| {
        seqs.map(|s| vocab.decode(s) + "\n").collect::<String>()
    };
    fs::write(source, render(&mut corpus.pairs.iter().map(|p| &p.x[..])))?;
    fs::write(target, render(&mut corpus.pairs.iter().map(|p| &p.y[..])))?;
    Ok(())
}

/// One token per line; the reserved tokens come first.
pub fn save_vocab(vocab: &Vocab, path: &Path) -> Result<()> {
    let mut text: String = RESERVED.iter().map(|t| format!("{t}\n")).collect();
    for t in vocab.content_tokens() {
        text.push_str(t);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let lines = read_lines(path)?;
    for (i, reserved) in RESERVED.iter().enumerate() {
        if lines.get(i).map(String::as_str) != Some(*reserved) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected reserved token {reserved}"),
            });
        }
    }
    Vocab::from_tokens(lines.into_iter().skip(RESERVED.len())).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}
