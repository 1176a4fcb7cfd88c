//! Synonym replacement and stand-in perturbation levels for synthetic text.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{perturb_text_level1_with, Level1Rule};
use crate::error::{Error, Result};

/// Per-hit replacement probability of [`synonym_replace`].
pub const SYNONYM_PROBABILITY: f64 = 0.5;

const BUILTIN: &str = include_str!("../../data/synonyms.tsv");

/// Lowercase word to single-word synonyms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl SynonymTable {
    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled synonym table parses")
    }

    /// `word<TAB>syn1,syn2` lines; `#` comments and blank lines skipped.
    pub fn parse(input: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in input.lines().enumerate() {
            let line = raw.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| Error::Parse {
                line: n + 1,
                message: message.to_string(),
            };
            let (word, syns) = line.split_once('\t').ok_or_else(|| err("expected word<TAB>synonyms"))?;
            let syns: Vec<String> = syns.split(',').map(|s| s.trim().to_lowercase()).collect();
            if word.trim().is_empty() || syns.iter().any(|s| s.is_empty() || s.contains(char::is_whitespace)) {
                return Err(err("synonyms must be single non-empty words"));
            }
            entries.insert(word.trim().to_lowercase(), syns);
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&s)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Splits a whitespace-free token into leading punctuation, core and
/// trailing punctuation.
fn split_core(token: &str) -> (&str, &str, &str) {
    let start = token.find(|c: char| c.is_alphanumeric()).unwrap_or(token.len());
    let end = token.rfind(|c: char| c.is_alphanumeric()).map_or(start, |i| {
        i + token[i..].chars().next().map_or(0, char::len_utf8)
    });
    (&token[..start], &token[start..end], &token[end..])
}

fn match_case(template: &str, word: &str) -> String {
    let mut chars = template.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    if first_upper && template.chars().filter(|c| c.is_alphabetic()).all(char::is_uppercase) && template.len() > 1 {
        return word.to_uppercase();
    }
    if first_upper {
        let mut c = word.chars();
        return c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect());
    }
    word.to_string()
}

/// Replaces each table word with probability 0.5 by a seed-chosen synonym.
/// Whitespace, punctuation around words and the token count are preserved.
pub fn synonym_replace(text: &str, table: &SynonymTable, seed: u64) -> String {
    synonym_replace_with(text, table, seed, SYNONYM_PROBABILITY)
}

pub fn synonym_replace_with(text: &str, table: &SynonymTable, seed: u64, probability: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = probability.clamp(0.0, 1.0);
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        let ws = rest.find(|c: char| !c.is_whitespace()).unwrap_or(rest.len());
        out.push_str(&rest[..ws]);
        rest = &rest[ws..];
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let token = &rest[..end];
        rest = &rest[end..];
        if token.is_empty() {
            continue;
        }
        let (pre, core, post) = split_core(token);
        match table.entries.get(&core.to_lowercase()) {
            Some(syns) if !syns.is_empty() && rng.gen_bool(p) => {
                let s = &syns[rng.gen_range(0..syns.len())];
                out.push_str(pre);
                out.push_str(&match_case(core, s));
                out.push_str(post);
            }
            _ => out.push_str(token),
        }
    }
    out
}

/// Rule-based stand-ins for the five perturbation levels, mild to severe.
///
/// Level 1 is OCR-like character noise. Higher levels add synonym
/// substitution, heavier noise, local word reordering and word drops.
pub fn stand_in_levels(text: &str, table: &SynonymTable, seed: u64) -> [String; 5] {
    let noise = |t: &str, s: u64, p: f64| perturb_text_level1_with(t, s, p, &Level1Rule::ALL);
    let l1 = noise(text, seed, 0.1);
    let l2 = noise(&synonym_replace_with(text, table, seed ^ 2, 0.3), seed ^ 22, 0.15);
    let l3 = noise(&synonym_replace_with(text, table, seed ^ 3, 0.6), seed ^ 33, 0.3);
    let l4 = reorder(&noise(&synonym_replace_with(text, table, seed ^ 4, 1.0), seed ^ 44, 0.45), seed ^ 444, 0.3);
    let l5 = drop_words(
        &reorder(&noise(&synonym_replace_with(text, table, seed ^ 5, 1.0), seed ^ 55, 0.6), seed ^ 555, 0.5),
        seed ^ 5555,
        0.3,
    );
    [l1, l2, l3, l4, l5]
}

/// Swaps adjacent words within each line with probability `p`.
fn reorder(text: &str, seed: u64, p: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    text.lines()
        .map(|line| {
            let mut w: Vec<&str> = line.split_whitespace().collect();
            let mut i = 0;
            while i + 1 < w.len() {
                if rng.gen_bool(p) {
                    w.swap(i, i + 1);
                    i += 2;
                } else {
                    i += 1;
                }
            }
            w.join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Drops words with probability `p`, keeping at least one per line.
fn drop_words(text: &str, seed: u64, p: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    text.lines()
        .map(|line| {
            let w: Vec<&str> = line.split_whitespace().collect();
            let mut kept: Vec<&str> = w.iter().copied().filter(|_| !rng.gen_bool(p)).collect();
            if kept.is_empty() {
                if let Some(x) = w.choose(&mut rng) {
                    kept.push(x);
                }
            }
            kept.join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
