use std::collections::HashMap;
use std::ops::Deref;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
/// Surface strings of the reserved ids, in id order.
pub const RESERVED: [&str; 3] = ["<pad>", "<s>", "</s>"];
/// First id available to ordinary tokens.
pub const FIRST_CONTENT: TokenId = 3;

/// Bijection between token strings and contiguous ids. Ids 0..3 are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary whose content tokens take ids in iteration order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid token {t:?}")));
            }
            if vocab.index.contains_key(&t) {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
            vocab.index.insert(t.clone(), vocab.tokens.len() as TokenId);
            vocab.tokens.push(t);
        }
        Ok(vocab)
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content_len() == 0
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn content_ids(&self) -> impl Iterator<Item = TokenId> {
        FIRST_CONTENT..self.tokens.len() as TokenId
    }

    /// Content tokens in id order (what a vocabulary file lists after the reserved lines).
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn is_content(&self, id: TokenId) -> bool {
        id >= FIRST_CONTENT && (id as usize) < self.tokens.len()
    }

    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        text.split_whitespace()
            .map(|t| {
                self.id(t)
                    .filter(|&id| self.is_content(id))
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown token {t:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(TokenSequence)
    }

    pub fn decode(&self, seq: &[TokenId]) -> String {
        seq.iter()
            .map(|&id| self.token(id).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Token ids without BOS/EOS framing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn reversed(&self) -> Self {
        reverse_target(self)
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl AsRef<[TokenId]> for TokenSequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

/// Reverses the order of a target sequence. Right-to-left models see targets
/// through this function.
pub fn reverse_target(y: &TokenSequence) -> TokenSequence {
    TokenSequence(y.0.iter().rev().copied().collect())
}
