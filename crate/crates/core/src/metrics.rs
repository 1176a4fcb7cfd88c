//! Detection, text-similarity and annotator-agreement metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Malicious-class scores with binary labels (1 = malicious).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabels {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {l} is not binary")));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("NaN score"));
        }
        Ok(Self { scores, labels })
    }

    fn split(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let pos: Vec<f64> = self.by_label(1);
        let neg: Vec<f64> = self.by_label(0);
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::UndefinedMetric(format!(
                "need both classes, got {} positive and {} negative",
                pos.len(),
                neg.len()
            )));
        }
        Ok((pos, neg))
    }

    fn by_label(&self, label: u8) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == label)
            .map(|(&s, _)| s)
            .collect()
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks in O(n log n).
pub fn auroc(data: &ScoredLabels) -> Result<f64> {
    let (pos, neg) = data.split()?;
    let mut all: Vec<(f64, u8)> = data.scores.iter().copied().zip(data.labels.iter().copied()).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|e| e.1 == 1).count() as f64;
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Largest count `c` with `c / n <= fp_target`.
fn allowed_false_positives(n: usize, fp_target: f64) -> usize {
    let nf = n as f64;
    let mut c = (fp_target * nf).floor().clamp(0.0, nf) as usize;
    while c < n && (c + 1) as f64 / nf <= fp_target {
        c += 1;
    }
    while c > 0 && c as f64 / nf > fp_target {
        c -= 1;
    }
    c
}

/// Threshold used by [`dr_at_fp`]: samples with score strictly greater
/// count as detections. `None` means minus infinity.
pub fn threshold_at_fp(data: &ScoredLabels, fp_target: f64) -> Result<Option<f64>> {
    if !(0.0..=1.0).contains(&fp_target) {
        return Err(Error::invalid(format!("fp_target {fp_target} outside [0, 1]")));
    }
    let (_, mut neg) = data.split()?;
    neg.sort_by(|a, b| b.total_cmp(a));
    let k = allowed_false_positives(neg.len(), fp_target);
    Ok(neg.get(k).copied())
}

/// True-positive rate at the lowest observed benign score that keeps the
/// false-positive rate within `fp_target`.
pub fn dr_at_fp(data: &ScoredLabels, fp_target: f64) -> Result<f64> {
    let t = threshold_at_fp(data, fp_target)?;
    let (pos, _) = data.split()?;
    let hits = pos.iter().filter(|&&s| t.map_or(true, |t| s > t)).count();
    Ok(hits as f64 / pos.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub dr_at_fp: f64,
    pub fp_target: f64,
    /// `null` when every sample is flagged.
    pub threshold: Option<f64>,
    pub confusion: Confusion,
    pub n_benign: usize,
    pub n_bma: usize,
}

pub fn evaluate(data: &ScoredLabels, fp_target: f64) -> Result<MetricsReport> {
    let threshold = threshold_at_fp(data, fp_target)?;
    let mut confusion = Confusion {
        true_positive: 0,
        false_positive: 0,
        true_negative: 0,
        false_negative: 0,
    };
    for (&s, &l) in data.scores.iter().zip(&data.labels) {
        let flagged = threshold.map_or(true, |t| s > t);
        match (flagged, l == 1) {
            (true, true) => confusion.true_positive += 1,
            (true, false) => confusion.false_positive += 1,
            (false, false) => confusion.true_negative += 1,
            (false, true) => confusion.false_negative += 1,
        }
    }
    Ok(MetricsReport {
        auroc: auroc(data)?,
        dr_at_fp: dr_at_fp(data, fp_target)?,
        fp_target,
        threshold,
        confusion,
        n_benign: confusion.true_negative + confusion.false_positive,
        n_bma: confusion.true_positive + confusion.false_negative,
    })
}

/// Character-level edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Token-level ROUGE-L F1 with `a` as reference and `b` as candidate.
/// Lowercased whitespace tokens; 0 when either side has no tokens.
pub fn rouge_l_f1(a: &str, b: &str) -> f64 {
    let (ta, tb) = (rouge_tokens(a), rouge_tokens(b));
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&ta, &tb) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / tb.len() as f64;
    let r = lcs / ta.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!("dimensions {} and {} differ", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedMetric("cosine of a zero vector".into()));
    }
    if u == v {
        return Ok(1.0);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Items x annotators table of nominal labels; `None` marks a missing label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub items: Vec<Vec<Option<u32>>>,
}

impl LabelMatrix {
    pub fn new(items: Vec<Vec<Option<u32>>>) -> Result<Self> {
        let annotators = items.first().map_or(0, Vec::len);
        if annotators < 2 {
            return Err(Error::invalid("need at least two annotators"));
        }
        if items.iter().any(|r| r.len() != annotators) {
            return Err(Error::invalid("every item needs one slot per annotator"));
        }
        if !items.iter().any(|r| r.iter().flatten().count() >= 2) {
            return Err(Error::invalid("no item has two or more labels"));
        }
        Ok(Self { items })
    }
}

/// Nominal Krippendorff's alpha from the coincidence matrix:
/// `1 - (n - 1) * sum_{c != k} o_ck / sum_{c != k} n_c * n_k`.
pub fn krippendorff_alpha(m: &LabelMatrix) -> Result<f64> {
    let mut o: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for row in &m.items {
        let vals: Vec<u32> = row.iter().flatten().copied().collect();
        let mu = vals.len();
        if mu < 2 {
            continue;
        }
        let w = 1.0 / (mu - 1) as f64;
        for (i, &c) in vals.iter().enumerate() {
            for (j, &k) in vals.iter().enumerate() {
                if i != j {
                    *o.entry((c, k)).or_default() += w;
                }
            }
        }
    }
    let mut nc: BTreeMap<u32, f64> = BTreeMap::new();
    for (&(c, _), &v) in &o {
        *nc.entry(c).or_default() += v;
    }
    let n: f64 = nc.values().sum();
    let observed: f64 = o.iter().filter(|((c, k), _)| c != k).map(|(_, v)| v).sum();
    // sum_{c != k} n_c * n_k
    let expected = n * n - nc.values().map(|v| v * v).sum::<f64>();
    if expected == 0.0 {
        return Err(Error::UndefinedMetric(
            "no expected disagreement (a single label value)".into(),
        ));
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}
