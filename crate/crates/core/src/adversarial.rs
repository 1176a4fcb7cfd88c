//! PGD image attacks, character-level text noise, externally generated text
//! perturbations and the adversarial-training curriculum.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{FloatImage, NormalizedImage};
use crate::metrics::{cosine_similarity, levenshtein, rouge_l_f1};
use crate::model::{text_embedding, tokenize, AttackTarget, DualBranchTarget, ModelParams, Vocabulary};

/// Image budgets of the five tiers, in [0, 1] pixel units.
pub const EPSILON_TIERS: [f64; 5] = [2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0, 32.0 / 255.0];

/// Perturbation level 1..=5, paired one-to-one with [`EPSILON_TIERS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PerturbationTier(u8);

impl PerturbationTier {
    pub const ALL: [PerturbationTier; 5] = [
        PerturbationTier(1),
        PerturbationTier(2),
        PerturbationTier(3),
        PerturbationTier(4),
        PerturbationTier(5),
    ];

    pub fn new(level: u8) -> Result<Self> {
        if (1..=5).contains(&level) {
            Ok(Self(level))
        } else {
            Err(Error::invalid(format!("perturbation level {level} outside 1..=5")))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn epsilon(self) -> f64 {
        EPSILON_TIERS[self.0 as usize - 1]
    }

    /// Tier whose budget is exactly `eps`, if any.
    pub fn from_epsilon(eps: f64) -> Option<Self> {
        EPSILON_TIERS
            .iter()
            .position(|&e| e == eps)
            .map(|i| Self(i as u8 + 1))
    }
}

impl TryFrom<u8> for PerturbationTier {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PerturbationTier> for u8 {
    fn from(t: PerturbationTier) -> u8 {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl PgdConfig {
    /// Step `epsilon / 4`, 10 iterations, no random start.
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            step_size: epsilon / 4.0,
            iterations: 10,
            random_start: false,
            seed: 0,
        }
    }

    pub fn for_tier(tier: PerturbationTier) -> Self {
        Self::new(tier.epsilon())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.epsilon > 0.0 && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be positive when epsilon > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutcome {
    pub image: FloatImage,
    /// Attack loss of the returned image.
    pub loss: f64,
    pub clean_loss: f64,
    pub iterations_run: usize,
}

/// Bounds `[lo, hi]` around `x` such that `x - lo <= eps` and `hi - x <= eps`
/// hold when evaluated in f64, intersected with [0, 1].
fn ball(x: f64, eps: f64) -> (f64, f64) {
    let mut lo = x - eps;
    while x - lo > eps {
        lo = lo.next_up();
    }
    let mut hi = x + eps;
    while hi - x > eps {
        hi = hi.next_down();
    }
    (lo.max(0.0), hi.min(1.0))
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Untargeted L-infinity PGD: ascend the loss of `label` with signed
/// gradient steps, projecting onto the epsilon ball and [0, 1] after every
/// step. Returns the iterate with the highest loss seen.
pub fn pgd_attack<T: AttackTarget + ?Sized>(
    target: &T,
    image: &FloatImage,
    label: usize,
    cfg: &PgdConfig,
) -> Result<PgdOutcome> {
    cfg.validate()?;
    if image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("pixel values must lie in [0, 1]"));
    }
    let (clean_loss, clean_grad) = target.loss_and_gradient(image, label);
    if cfg.epsilon == 0.0 || clean_grad.iter().all(|&g| g == 0.0) {
        return Ok(PgdOutcome {
            image: image.clone(),
            loss: clean_loss,
            clean_loss,
            iterations_run: 0,
        });
    }
    let bounds: Vec<(f64, f64)> = image.data.iter().map(|&x| ball(x, cfg.epsilon)).collect();
    let mut adv = image.clone();
    if cfg.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (v, &(lo, hi)) in adv.data.iter_mut().zip(&bounds) {
            *v = rng.gen_range(lo..=hi);
        }
    }
    let mut grad = if cfg.random_start {
        target.loss_and_gradient(&adv, label).1
    } else {
        clean_grad
    };
    let mut best: Option<(f64, FloatImage)> = None;
    for it in 0..cfg.iterations {
        for ((v, &g), &(lo, hi)) in adv.data.iter_mut().zip(&grad).zip(&bounds) {
            *v = (*v + cfg.step_size * sign(g)).clamp(lo, hi);
        }
        // The last iterate only needs its loss; the gradient is discarded.
        let (loss, g) = target.loss_and_gradient(&adv, label);
        if best.as_ref().map_or(true, |(b, _)| loss > *b) {
            best = Some((loss, adv.clone()));
        }
        grad = g;
        if it + 1 < cfg.iterations && grad.iter().all(|&g| g == 0.0) {
            let (loss, image) = best.expect("one iterate");
            return Ok(PgdOutcome {
                image,
                loss,
                clean_loss,
                iterations_run: it + 1,
            });
        }
    }
    let (loss, image) = best.expect("at least one iteration");
    Ok(PgdOutcome {
        image,
        loss,
        clean_loss,
        iterations_run: cfg.iterations,
    })
}

/// Character-level edits used for level-1 text noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level1Rule {
    SwapAdjacent,
    CaseFlip,
    /// Every `O`/`o` becomes `0`.
    OhToZero,
    /// Every `l` becomes `1`.
    ElToOne,
}

impl Level1Rule {
    pub const ALL: [Level1Rule; 4] = [
        Level1Rule::SwapAdjacent,
        Level1Rule::CaseFlip,
        Level1Rule::OhToZero,
        Level1Rule::ElToOne,
    ];

    fn applies(self, w: &[char]) -> bool {
        match self {
            Level1Rule::SwapAdjacent => w.windows(2).any(|p| p[0] != p[1]),
            Level1Rule::CaseFlip => w.iter().any(|c| c.is_ascii_alphabetic()),
            Level1Rule::OhToZero => w.iter().any(|&c| c == 'o' || c == 'O'),
            Level1Rule::ElToOne => w.contains(&'l'),
        }
    }

    fn apply(self, w: &mut [char], rng: &mut impl Rng) {
        match self {
            Level1Rule::SwapAdjacent => {
                let spots: Vec<usize> = (0..w.len() - 1).filter(|&i| w[i] != w[i + 1]).collect();
                let i = spots[rng.gen_range(0..spots.len())];
                w.swap(i, i + 1);
            }
            Level1Rule::CaseFlip => {
                let spots: Vec<usize> = (0..w.len()).filter(|&i| w[i].is_ascii_alphabetic()).collect();
                let c = &mut w[spots[rng.gen_range(0..spots.len())]];
                *c = if c.is_ascii_uppercase() {
                    c.to_ascii_lowercase()
                } else {
                    c.to_ascii_uppercase()
                };
            }
            Level1Rule::OhToZero => w.iter_mut().filter(|c| **c == 'o' || **c == 'O').for_each(|c| *c = '0'),
            Level1Rule::ElToOne => w.iter_mut().filter(|c| **c == 'l').for_each(|c| *c = '1'),
        }
    }
}

/// Per-word probability of level-1 noise.
pub const LEVEL1_WORD_PROBABILITY: f64 = 0.1;

/// OCR-like noise: each whitespace-delimited word is edited with
/// probability 0.1 by one applicable rule. Length in characters and all
/// whitespace are preserved.
pub fn perturb_text_level1(text: &str, seed: u64) -> String {
    perturb_text_level1_with(text, seed, LEVEL1_WORD_PROBABILITY, &Level1Rule::ALL)
}

pub fn perturb_text_level1_with(text: &str, seed: u64, probability: f64, rules: &[Level1Rule]) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(text.len());
    let mut word: Vec<char> = Vec::new();
    let flush = |word: &mut Vec<char>, out: &mut String, rng: &mut ChaCha8Rng| {
        if word.is_empty() {
            return;
        }
        if rng.gen_bool(probability.clamp(0.0, 1.0)) {
            let usable: Vec<Level1Rule> = rules.iter().copied().filter(|r| r.applies(word)).collect();
            if !usable.is_empty() {
                let rule = usable[rng.gen_range(0..usable.len())];
                rule.apply(word, rng);
            }
        }
        out.extend(word.drain(..));
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut word, &mut out, &mut rng);
            out.push(c);
        } else {
            word.push(c);
        }
    }
    flush(&mut word, &mut out, &mut rng);
    out
}

/// Externally generated level 1..5 rewrites, keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalPerturbations {
    pub samples: BTreeMap<String, [String; 5]>,
}

impl ExternalPerturbations {
    pub fn get(&self, id: &str, tier: PerturbationTier) -> Option<&str> {
        self.samples.get(id).map(|t| t[tier.level() as usize - 1].as_str())
    }

    /// Texts grouped by level, in sample-id order.
    pub fn by_level(&self) -> BTreeMap<u8, Vec<String>> {
        (1..=5u8)
            .map(|l| (l, self.samples.values().map(|t| t[l as usize - 1].clone()).collect()))
            .collect()
    }

    pub fn parse(input: &str) -> Result<Self> {
        let mut samples = BTreeMap::new();
        let mut current: Option<(String, usize, BTreeMap<u8, Vec<String>>)> = None;
        let mut level: Option<u8> = None;

        fn finish(
            cur: Option<(String, usize, BTreeMap<u8, Vec<String>>)>,
            samples: &mut BTreeMap<String, [String; 5]>,
        ) -> Result<()> {
            let Some((id, line, blocks)) = cur else {
                return Ok(());
            };
            let mut texts: [String; 5] = Default::default();
            for l in 1..=5u8 {
                let lines = blocks.get(&l).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("sample {id} is missing Level {l}"),
                })?;
                texts[l as usize - 1] = trim_blank_lines(lines);
            }
            if samples.insert(id.clone(), texts).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate sample id {id}"),
                });
            }
            Ok(())
        }

        for (n, raw) in input.lines().enumerate() {
            let line_no = n + 1;
            if let Some(rest) = raw.strip_prefix("# id") {
                let id = rest.trim();
                if id.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "header without sample id".into(),
                    });
                }
                finish(current.take(), &mut samples)?;
                current = Some((id.to_string(), line_no, BTreeMap::new()));
                level = None;
                continue;
            }
            if raw.trim_start().starts_with("Level") {
                let (l, rest) = parse_label(raw.trim_start()).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("malformed level label {raw:?}"),
                })?;
                let Some((id, _, blocks)) = current.as_mut() else {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "level label before any \"# id\" header".into(),
                    });
                };
                if blocks.contains_key(&l) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("sample {id} repeats Level {l}"),
                    });
                }
                let first = rest.trim_start();
                blocks.insert(l, if first.is_empty() { vec![] } else { vec![first.to_string()] });
                level = Some(l);
                continue;
            }
            match (current.as_mut(), level) {
                (Some((_, _, blocks)), Some(l)) => blocks.get_mut(&l).expect("open block").push(raw.to_string()),
                _ if raw.trim().is_empty() => {}
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "text outside a level block".into(),
                    })
                }
            }
        }
        finish(current, &mut samples)?;
        Ok(Self { samples })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&s)
    }

    /// Serializes in the parseable format. Fails on texts that would not
    /// round-trip: lines that look like labels or headers, or leading or
    /// trailing blank lines.
    pub fn to_file_string(&self) -> Result<String> {
        let mut out = String::new();
        for (id, texts) in &self.samples {
            if id.trim() != id || id.is_empty() || id.contains('\n') {
                return Err(Error::invalid(format!("sample id {id:?} cannot be written")));
            }
            writeln!(out, "# id {id}").expect("write to String");
            for (i, t) in texts.iter().enumerate() {
                let lines: Vec<String> = t.lines().map(str::to_string).collect();
                if trim_blank_lines(&lines) != *t
                    || t.lines()
                        .any(|l| l.trim_start().starts_with("Level") || l.starts_with("# id"))
                {
                    return Err(Error::invalid(format!(
                        "text for {id} level {} cannot be represented",
                        i + 1
                    )));
                }
                writeln!(out, "Level {}:", i + 1).expect("write to String");
                if !t.is_empty() {
                    writeln!(out, "{t}").expect("write to String");
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()?).map_err(|e| Error::io(path, e))
    }
}

/// `Level k:` with k in 1..=5, returning k and the rest of the line.
fn parse_label(s: &str) -> Option<(u8, &str)> {
    let rest = s.strip_prefix("Level")?.trim_start();
    let colon = rest.find(':')?;
    let l: u8 = rest[..colon].trim().parse().ok()?;
    (1..=5).contains(&l).then_some((l, &rest[colon + 1..]))
}

fn trim_blank_lines(lines: &[String]) -> String {
    let start = lines.iter().position(|l| !l.trim().is_empty()).unwrap_or(lines.len());
    let end = lines.iter().rposition(|l| !l.trim().is_empty()).map_or(start, |e| e + 1);
    lines[start..end].join("\n")
}

/// An attacked screenshot with its paired perturbed text.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialPair {
    pub image: NormalizedImage,
    pub text: String,
    pub tier: PerturbationTier,
    pub origin_id: String,
    pub label: usize,
}

/// Runs PGD with the tier's default settings and the perturbed text held fixed, then
/// quantizes to 8 bits. Clean pixels are multiples of 1/255 and so are
/// the tier budgets, so rounding keeps the L-infinity bound.
pub fn make_adversarial_pair(
    params: &ModelParams,
    vocab: &Vocabulary,
    origin_id: &str,
    clean: &NormalizedImage,
    perturbed_text: &str,
    label: usize,
    tier: PerturbationTier,
) -> Result<AdversarialPair> {
    let tokens = tokenize(perturbed_text, vocab);
    let target = DualBranchTarget::new(params, &tokens);
    let out = pgd_attack(&target, &FloatImage::from_normalized(clean), label, &PgdConfig::for_tier(tier))?;
    let image = clean.with_pixels(out.image.to_rgb8())?;
    Ok(AdversarialPair {
        image,
        text: perturbed_text.to_string(),
        tier,
        origin_id: origin_id.to_string(),
        label,
    })
}

/// Clean : per-tier adversarial mix, 10 : 2 by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumRatio {
    pub clean: usize,
    pub per_tier: usize,
}

impl Default for CurriculumRatio {
    fn default() -> Self {
        Self { clean: 10, per_tier: 2 }
    }
}

/// Which clean samples seed each tier's adversarial pairs for one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub clean: usize,
    /// Origin indices into the clean set, per tier 1..=5.
    pub tiers: BTreeMap<PerturbationTier, Vec<usize>>,
}

impl CurriculumPlan {
    pub fn adversarial_len(&self) -> usize {
        self.tiers.values().map(Vec::len).sum()
    }

    pub fn epoch_len(&self) -> usize {
        self.clean + self.adversarial_len()
    }
}

/// `n_clean * per_tier / clean` origins per tier (floor), drawn without
/// replacement while the clean set allows it.
pub fn plan_curriculum(n_clean: usize, ratio: CurriculumRatio, seed: u64) -> Result<CurriculumPlan> {
    if n_clean == 0 {
        return Err(Error::invalid("clean set is empty"));
    }
    if ratio.clean == 0 {
        return Err(Error::invalid("ratio clean part must be positive"));
    }
    let per_tier = n_clean * ratio.per_tier / ratio.clean;
    let mut tiers = BTreeMap::new();
    for tier in PerturbationTier::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (tier.level() as u64) << 56);
        let picks = if per_tier <= n_clean {
            index::sample(&mut rng, n_clean, per_tier).into_vec()
        } else {
            (0..per_tier).map(|_| rng.gen_range(0..n_clean)).collect()
        };
        tiers.insert(tier, picks);
    }
    if per_tier == 0 {
        tiers.clear();
    }
    Ok(CurriculumPlan {
        clean: n_clean,
        tiers,
    })
}

/// Builds one epoch's adversarial pairs from a plan with `generate(origin, tier)`.
pub fn build_adv_curriculum<F>(plan: &CurriculumPlan, mut generate: F) -> Result<Vec<AdversarialPair>>
where
    F: FnMut(usize, PerturbationTier) -> Result<AdversarialPair>,
{
    let mut out = Vec::with_capacity(plan.adversarial_len());
    for (&tier, origins) in &plan.tiers {
        for &o in origins {
            let pair = generate(o, tier)?;
            if pair.tier != tier {
                return Err(Error::invalid("generator returned a pair for the wrong tier"));
            }
            out.push(pair);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMetrics {
    pub levenshtein: usize,
    /// Cosine similarity of this model's text embeddings.
    pub semantic_similarity: f64,
    pub rouge_l_f1: f64,
}

pub fn perturbation_metrics(
    original: &str,
    perturbed: &str,
    params: &ModelParams,
    vocab: &Vocabulary,
) -> Result<PerturbationMetrics> {
    let a = text_embedding(params, &tokenize(original, vocab));
    let b = text_embedding(params, &tokenize(perturbed, vocab));
    let semantic_similarity = cosine_similarity(&a, &b)?;
    Ok(PerturbationMetrics {
        levenshtein: levenshtein(original, perturbed),
        semantic_similarity,
        rouge_l_f1: rouge_l_f1(original, perturbed),
    })
}

/// Distinct tiers present in a batch of pairs.
pub fn tiers_present(pairs: &[AdversarialPair]) -> BTreeSet<PerturbationTier> {
    pairs.iter().map(|p| p.tier).collect()
}
