//! Popularity whitelist from a `rank,domain` list.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Highest rank that still counts as whitelisted.
pub const WHITELIST_CUTOFF: u32 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WhitelistIndex {
    ranks: HashMap<String, u32>,
    cutoff: u32,
    /// Also match `a.b.example.com` against a listed `example.com`.
    pub fold_subdomains: bool,
}

fn canonical(domain: &str) -> String {
    domain.trim().trim_end_matches('.').to_ascii_lowercase()
}

impl WhitelistIndex {
    pub fn new(cutoff: u32) -> Self {
        Self {
            ranks: HashMap::new(),
            cutoff,
            fold_subdomains: false,
        }
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Adds an entry if `rank <= cutoff`. Duplicates keep the best rank.
    pub fn insert(&mut self, rank: u32, domain: &str) -> Result<()> {
        if rank == 0 {
            return Err(Error::invalid("ranks start at 1"));
        }
        let d = canonical(domain);
        if d.is_empty() {
            return Err(Error::invalid("empty domain"));
        }
        if rank <= self.cutoff {
            let e = self.ranks.entry(d).or_insert(rank);
            *e = (*e).min(rank);
        }
        Ok(())
    }

    /// Parses `rank,domain` lines. Blank lines and `#` comments are skipped.
    pub fn parse(input: &str, cutoff: u32) -> Result<Self> {
        let mut idx = Self::new(cutoff);
        for (n, raw) in input.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { line: n + 1, message };
            let (rank, domain) = line
                .split_once(',')
                .ok_or_else(|| err(format!("expected \"rank,domain\", got {line:?}")))?;
            let rank: u32 = rank
                .trim()
                .parse()
                .map_err(|_| err(format!("rank {:?} is not a positive integer", rank.trim())))?;
            let domain = domain.trim();
            if domain.is_empty() || domain.contains(',') || domain.contains(char::is_whitespace) {
                return Err(err(format!("malformed domain {domain:?}")));
            }
            idx.insert(rank, domain).map_err(|e| err(e.to_string()))?;
        }
        Ok(idx)
    }

    pub fn load(path: impl AsRef<Path>, cutoff: u32) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&s, cutoff)
    }

    /// Rank of the matching entry, if whitelisted.
    pub fn rank(&self, domain: &str) -> Option<u32> {
        let d = canonical(domain);
        if let Some(&r) = self.ranks.get(&d) {
            return Some(r);
        }
        if !self.fold_subdomains {
            return None;
        }
        let mut rest = d.as_str();
        while let Some((_, parent)) = rest.split_once('.') {
            if !parent.contains('.') {
                break;
            }
            if let Some(&r) = self.ranks.get(parent) {
                return Some(r);
            }
            rest = parent;
        }
        None
    }

    pub fn contains(&self, domain: &str) -> bool {
        self.rank(domain).is_some()
    }
}
