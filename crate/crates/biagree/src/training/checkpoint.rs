use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::optimizer::{AdamConfig, OptimizerState};
use crate::autodiff::{Array, ParamStore};
use crate::error::{Error, Result};
use crate::seq2seq::{parameter_shapes, Direction, DirectionalModel, ModelConfig, Vocab};

pub const MAGIC: &[u8; 8] = b"BIAGREE1";
const FORMAT_VERSION: u32 = 1;

/// A model with everything needed to resume its training bit-exactly.
///
/// Randomness is derived from `(seed, step)` rather than stored generator
/// state, so the seed and step counter are the whole random state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DirectionalModel,
    pub vocab: Vocab,
    pub optimizer: OptimizerState,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn fresh(model: DirectionalModel, vocab: Vocab, adam: AdamConfig, seed: u64) -> Self {
        let optimizer = OptimizerState::new(model.params(), adam);
        Self {
            model,
            vocab,
            optimizer,
            step: 0,
            seed,
        }
    }

    fn header(&self) -> String {
        let c = self.model.config();
        let a = &self.optimizer.config;
        let mut h = String::new();
        let mut kv = |k: &str, v: String| {
            h.push_str(k);
            h.push('=');
            h.push_str(&v);
            h.push('\n');
        };
        kv("version", FORMAT_VERSION.to_string());
        kv("direction", self.model.direction().to_string());
        kv("src_vocab", c.src_vocab.to_string());
        kv("tgt_vocab", c.tgt_vocab.to_string());
        kv("embed", c.embed.to_string());
        kv("hidden", c.hidden.to_string());
        kv("attention", c.attention.to_string());
        kv("step", self.step.to_string());
        kv("seed", self.seed.to_string());
        kv("adam.lr", a.lr.to_string());
        kv("adam.beta1", a.beta1.to_string());
        kv("adam.beta2", a.beta2.to_string());
        kv("adam.eps", a.eps.to_string());
        kv("adam.step", self.optimizer.step.to_string());
        kv("vocab", self.vocab.content_tokens().join(" "));
        let shapes: Vec<String> = self
            .model
            .params()
            .iter()
            .map(|(n, a)| {
                let dims: Vec<String> = a.shape().iter().map(usize::to_string).collect();
                format!("{n}:{}", dims.join("x"))
            })
            .collect();
        kv("params", shapes.join(" "));
        h
    }

    /// Magic, a little-endian `u64` header length, the UTF-8 header, then the
    /// parameters followed by Adam's first and second moments as `f64` LE blocks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        let blocks = self
            .model
            .params()
            .iter()
            .map(|(_, a)| a.data())
            .chain(self.optimizer.first.iter().map(Vec::as_slice))
            .chain(self.optimizer.second.iter().map(Vec::as_slice));
        for block in blocks {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing BIAGREE1 magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
        let header = std::str::from_utf8(body.get(..hlen).ok_or_else(|| bad("truncated header"))?)
            .map_err(|_| bad("header is not UTF-8"))?;
        let map: HashMap<&str, &str> = header.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| map.get(k).copied().ok_or_else(|| bad(&format!("header lacks {k}")));
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(&format!("bad {k}"))) };
        let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(&format!("bad {k}"))) };
        if num("version")? != u64::from(FORMAT_VERSION) {
            return Err(bad("unsupported checkpoint version"));
        }
        let direction: Direction = get("direction")?.parse()?;
        let config = ModelConfig {
            src_vocab: num("src_vocab")? as usize,
            tgt_vocab: num("tgt_vocab")? as usize,
            embed: num("embed")? as usize,
            hidden: num("hidden")? as usize,
            attention: num("attention")? as usize,
        };
        let vocab = Vocab::from_tokens(get("vocab")?.split_whitespace())?;
        let shapes = parameter_shapes(&config);
        let declared: Vec<&str> = get("params")?.split_whitespace().collect();
        if declared.len() != shapes.len() {
            return Err(bad("parameter list does not match the model config"));
        }
        let mut data = body[hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        if (body.len() - hlen) % 8 != 0 {
            return Err(bad("parameter data is not a whole number of f64 values"));
        }
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = data.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(bad("truncated parameter data"))
            }
        };
        let mut params = ParamStore::new();
        for ((name, shape), decl) in shapes.iter().zip(&declared) {
            if decl.split(':').next() != Some(name.as_str()) {
                return Err(bad(&format!("expected parameter {name}, found {decl}")));
            }
            let n = shape.iter().product();
            params.insert(name.clone(), Array::new(shape.clone(), take(n)?)?)?;
        }
        let sizes: Vec<usize> = shapes.iter().map(|(_, s)| s.iter().product()).collect();
        let first = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
        let second = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
        if data.next().is_some() {
            return Err(bad("trailing data after the moment blocks"));
        }
        let model = DirectionalModel::from_params(config, direction, params)?;
        if vocab.len() != config.tgt_vocab {
            return Err(Error::VocabMismatch(format!(
                "checkpoint vocabulary has {} ids, model expects {}",
                vocab.len(),
                config.tgt_vocab
            )));
        }
        Ok(Self {
            model,
            vocab,
            optimizer: OptimizerState {
                config: AdamConfig {
                    lr: float("adam.lr")?,
                    beta1: float("adam.beta1")?,
                    beta2: float("adam.beta2")?,
                    eps: float("adam.eps")?,
                },
                step: num("adam.step")?,
                first,
                second,
            },
            step: num("step")?,
            seed: num("seed")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let vocab = Vocab::from_tokens(["a", "b", "c"]).unwrap();
        let model = DirectionalModel::new(ModelConfig::new(6).with_sizes(2, 3, 2), Direction::R2L, 4).unwrap();
        let mut ck = Checkpoint::fresh(model, vocab, AdamConfig::default(), 77);
        ck.step = 12;
        ck.optimizer.first[3][1] = 0.1 / 3.0;
        ck
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
    }
}
