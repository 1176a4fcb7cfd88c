//! Brute-force oracles shared by integration tests.
#![allow(dead_code)]

pub fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &sp) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sn) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

// Best detection rate over every threshold whose false-positive rate stays
// within the target, flagging scores strictly above the threshold.
pub fn sweep_dr(scores: &[f64], labels: &[u8], target: f64) -> f64 {
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    let n_pos = labels.len() - n_neg;
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.push(f64::NEG_INFINITY);
    let mut best = 0.0f64;
    for t in candidates {
        let fp = scores.iter().zip(labels).filter(|(&s, &l)| l == 0 && s > t).count();
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| l == 1 && s > t).count();
        if fp as f64 / n_neg as f64 <= target {
            best = best.max(tp as f64 / n_pos as f64);
        }
    }
    best
}

pub fn dp_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

// Exhaustive LCS over subsequences of the shorter token list.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
        let mut it = long.iter();
        if sub.iter().all(|s| it.any(|t| t == *s)) {
            best = best.max(sub.len());
        }
    }
    best
}

pub fn oracle_rouge(a: &str, b: &str) -> f64 {
    let ta: Vec<String> = a.split_whitespace().map(str::to_lowercase).collect();
    let tb: Vec<String> = b.split_whitespace().map(str::to_lowercase).collect();
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let l = brute_lcs(&ta, &tb) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / tb.len() as f64;
    let r = l / ta.len() as f64;
    2.0 * p * r / (p + r)
}

// Nominal alpha as 1 - D_o / D_e, both by enumerating ordered value pairs.
pub fn pairwise_alpha(items: &[Vec<Option<u32>>]) -> f64 {
    let units: Vec<Vec<u32>> = items
        .iter()
        .map(|r| r.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|v| v.len() >= 2)
        .collect();
    let pooled: Vec<u32> = units.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let mut d_o = 0.0;
    for u in &units {
        let mut dis = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if i != j && u[i] != u[j] {
                    dis += 1.0;
                }
            }
        }
        d_o += dis / (u.len() - 1) as f64;
    }
    d_o /= n;
    let mut d_e = 0.0;
    for i in 0..pooled.len() {
        for j in 0..pooled.len() {
            if i != j && pooled[i] != pooled[j] {
                d_e += 1.0;
            }
        }
    }
    d_e /= n * (n - 1.0);
    1.0 - d_o / d_e
}
