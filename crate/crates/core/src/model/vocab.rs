//! Word-level vocabulary and fixed-length token sequences for the text branch.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";

/// Maximum sequence length, including the leading CLS token.
pub const MAX_TOKENS: usize = 512;

/// Lowercased alphanumeric runs of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;
    pub const CLS_ID: u32 = 2;

    pub const DEFAULT_MIN_FREQ: usize = 2;
    pub const DEFAULT_CAP: usize = 8192;

    /// Builds a vocabulary from a corpus: words seen at least `min_freq`
    /// times, most frequent first (ties alphabetical), capped at `cap`
    /// entries including the three specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize, cap: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = cap.saturating_sub(3);
        Self::from_tokens(ranked.into_iter().take(room).map(|(w, _)| w))
    }

    fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = vec![PAD.to_string(), UNK.to_string(), CLS.to_string()];
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// `token<TAB>id` lines in id order.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(w, "{t}\t{i}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("write to Vec");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected token<TAB>id".into(),
            })?;
            let id: usize = id.trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("bad id {id:?}"),
            })?;
            if id != tokens.len() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("ids must be dense and ordered, expected {}", tokens.len()),
                });
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < 3 || tokens[0] != PAD || tokens[1] != UNK || tokens[2] != CLS {
            return Err(Error::Parse {
                line: 1,
                message: "vocabulary must start with [PAD], [UNK], [CLS]".into(),
            });
        }
        Ok(Self::from_tokens(tokens.into_iter().skip(3)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Token ids padded to [`MAX_TOKENS`], CLS first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    /// Positions with mask 1, in order.
    pub fn active_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.attention_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 1)
            .map(|(i, _)| i)
    }

    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Lowercase, split on non-alphanumerics, map through the vocabulary
/// (unknown words become UNK), prepend CLS, truncate and pad to 512.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let mut ids = Vec::with_capacity(MAX_TOKENS);
    ids.push(Vocabulary::CLS_ID);
    ids.extend(words(text).take(MAX_TOKENS - 1).map(|w| vocab.id(&w)));
    let mut attention_mask = vec![1u8; ids.len()];
    ids.resize(MAX_TOKENS, Vocabulary::PAD_ID);
    attention_mask.resize(MAX_TOKENS, 0);
    TokenSequence { ids, attention_mask }
}
