//! Acceptance run: one PASS/FAIL line per criterion.

use std::sync::Arc;
use std::time::{Duration, Instant};

use bmaguard_core::adversarial::*;
use bmaguard_core::corpus::*;
use bmaguard_core::imaging::{normalize_screenshot, FloatImage, NormalizedImage, RawScreenshot};
use bmaguard_core::metrics::*;
use bmaguard_core::model::gradcheck::{gradient_check, GradCheckConfig};
use bmaguard_core::model::*;
use bmaguard_core::ocr::FixedTextEngine;
use bmaguard_core::phash::*;
use bmaguard_core::pipeline::*;
use chrono::{DateTime, Utc};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    println!(
        "{} {name}: {} [{:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t.elapsed().as_secs_f64()
    );
    o.pass
}

// Normalization

fn round_half_up(num: u64, den: u64) -> u64 {
    (2 * num + den) / (2 * den)
}

/// Per-pixel normalization: fit into 1920x1080 (no upscaling), centre on
/// black, then average 2x2 blocks. Each canvas pixel sums its exact source
/// footprint in units of 1/sw by 1/sh.
fn oracle_normalize(w: usize, h: usize, px: &[u8]) -> Vec<u8> {
    let (cw, ch) = (1920u64, 1080u64);
    let (w64, h64) = (w as u64, h as u64);
    let (sw, sh) = if w64 <= cw && h64 <= ch {
        (w64, h64)
    } else if cw * h64 <= ch * w64 {
        (cw, round_half_up(h64 * cw, w64).clamp(1, ch))
    } else {
        (round_half_up(w64 * ch, h64).clamp(1, cw), ch)
    };
    let (ox, oy) = ((cw - sw) / 2, (ch - sh) / 2);
    let canvas = |cx: u64, cy: u64| -> [u64; 3] {
        if cx < ox || cy < oy || cx >= ox + sw || cy >= oy + sh {
            return [0; 3];
        }
        let (x, y) = (cx - ox, cy - oy);
        let mut sum = [0u64; 3];
        for j in (y * h64) / sh..((y + 1) * h64).div_ceil(sh) {
            let wy = ((j + 1) * sh).min((y + 1) * h64) - (j * sh).max(y * h64);
            for i in (x * w64) / sw..((x + 1) * w64).div_ceil(sw) {
                let wx = ((i + 1) * sw).min((x + 1) * w64) - (i * sw).max(x * w64);
                let p = &px[(j as usize * w + i as usize) * 3..][..3];
                for c in 0..3 {
                    sum[c] += wx * wy * p[c] as u64;
                }
            }
        }
        sum.map(|v| round_half_up(v, w64 * h64))
    };
    let mut out = vec![0u8; 960 * 540 * 3];
    for y in 0..540u64 {
        for x in 0..960u64 {
            let q = [canvas(2 * x, 2 * y), canvas(2 * x + 1, 2 * y), canvas(2 * x, 2 * y + 1), canvas(2 * x + 1, 2 * y + 1)];
            for c in 0..3 {
                let s: u64 = q.iter().map(|v| v[c]).sum();
                out[((y * 960 + x) * 3) as usize + c] = round_half_up(s, 4) as u8;
            }
        }
    }
    out
}

fn normalization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sizes = vec![(16, 16), (4000, 3000), (1920, 1080), (1921, 1080), (1920, 1081), (17, 2999), (3999, 17)];
    while sizes.len() < 200 {
        sizes.push((rng.gen_range(16..=4000), rng.gen_range(16..=3000)));
    }
    let mut mismatched = Vec::new();
    for &(w, h) in &sizes {
        let mut px = vec![0u8; w * h * 3];
        rng.fill_bytes(&mut px);
        let raw = RawScreenshot::new(w, h, px).unwrap();
        let got = normalize_screenshot(&raw).unwrap();
        if (got.width(), got.height()) != (960, 540) || got.pixels() != oracle_normalize(w, h, &raw.pixels) {
            mismatched.push(format!("{w}x{h}"));
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("{} sizes, {} mismatched {:?}", sizes.len(), mismatched.len(), mismatched),
    )
}

// Perceptual hash

fn phash_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..10_000 {
        let (a, b, c) = (rng.gen::<u64>(), rng.gen::<u64>(), rng.gen::<u64>());
        let (ha, hb, hc) = (PerceptualHash::from_bits(a), PerceptualHash::from_bits(b), PerceptualHash::from_bits(c));
        let d = |x, y| hamming_distance(x, y).0;
        let ok = d(&ha, &ha) == 0
            && d(&ha, &hb) == d(&hb, &ha)
            && d(&ha, &hb) == (a ^ b).count_ones()
            && (d(&ha, &hb) == 0) == (a == b)
            && d(&ha, &hc) <= d(&ha, &hb) + d(&hb, &hc);
        violations += usize::from(!ok);
    }
    let hash_of = |f: &dyn Fn(usize, usize) -> u8| {
        let (w, h) = (1920, 1080);
        let mut px = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                px[(y * w + x) * 3..(y * w + x) * 3 + 3].fill(f(x, y));
            }
        }
        compute_phash(&normalize_screenshot(&RawScreenshot::new(w, h, px).unwrap()).unwrap())
    };
    let uniform: Vec<u64> = [0u8, 77, 255].iter().map(|&v| hash_of(&|_, _| v).bits).collect();
    let halves = [
        hash_of(&|x, _| if x < 960 { 255 } else { 0 }).bits.count_ones(),
        hash_of(&|_, y| if y < 540 { 0 } else { 200 }).bits.count_ones(),
    ];
    let base = TabState {
        last_hash: Some(PerceptualHash::from_bits(0)),
        ..TabState::new(1)
    };
    let at4 = decide(&base, false, &PerceptualHash::from_bits(0b1111 << 30));
    let at5 = decide(&base, false, &PerceptualHash::from_bits(0b11111 << 30));
    let pass = violations == 0
        && uniform.iter().all(|&b| b == 0)
        && halves == [32, 32]
        && at4 == DecisionCase::Unchanged
        && at5 == DecisionCase::Changed;
    outcome(
        pass,
        format!(
            "10000 pairs, {violations} violations; uniform {uniform:?}; half/half one-bits {halves:?}; d=4 case {}, d=5 case {}",
            at4.number(),
            at5.number()
        ),
    )
}

// Decision cases

fn decision_exhaustive() -> Outcome {
    let new = PerceptualHash::from_bits(0);
    let mut wrong = 0;
    let mut seen = std::collections::BTreeSet::new();
    for whitelisted in [false, true] {
        for prior in [false, true] {
            for far in [false, true] {
                let mut s = TabState::new(0);
                if prior {
                    s.last_hash = Some(PerceptualHash::from_bits(if far { 0x1F } else { 0x0F }));
                }
                let want = match (whitelisted, prior, far) {
                    (true, _, _) => 1,
                    (false, false, _) => 2,
                    (false, true, true) => 3,
                    (false, true, false) => 4,
                };
                let got = decide(&s, whitelisted, &new).number();
                wrong += usize::from(got != want);
                seen.insert(got);
            }
        }
    }
    let wl = WhitelistIndex::parse("99999,a.test\n100000,b.test\n100001,c.test\n", WHITELIST_CUTOFF).unwrap();
    let boundary = [wl.contains("a.test"), wl.contains("b.test"), wl.contains("c.test")];
    let pass = wrong == 0 && seen.len() == 4 && boundary == [true, true, false];
    outcome(
        pass,
        format!("8 combinations, {wrong} wrong, cases {seen:?}; ranks 99999/100000/100001 whitelisted {boundary:?}"),
    )
}

// Gradient check

fn random_batch(seed: u64, vocab: &Vocabulary, words: &[&str]) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|i| {
            let text: Vec<&str> = (0..rng.gen_range(3..12)).map(|_| words[rng.gen_range(0..words.len())]).collect();
            Example {
                id: format!("g{seed}-{i}"),
                visual: VisualInput {
                    width: 240,
                    height: 135,
                    data: (0..3 * 240 * 135).map(|_| rng.gen::<f32>()).collect(),
                },
                tokens: tokenize(&text.join(" "), vocab),
                label: i % 2,
            }
        })
        .collect()
}

fn gradient_correctness() -> Outcome {
    let words = ["click", "allow", "virus", "call", "support", "weather", "recipe", "news", "sign", "in"];
    let vocab = Vocabulary::build(words.iter().flat_map(|w| [*w, *w]), 2, 100);
    let mut worst = 0.0f64;
    let mut checked = Vec::new();
    for b in 0..3u64 {
        let params = ModelParams::init(ModelConfig::desk(vocab.len()), 100 + b).unwrap();
        let r = gradient_check(
            &params,
            &random_batch(b, &vocab, &words),
            &GradCheckConfig {
                samples: 240,
                seed: b,
                class_weights: [0.6, 3.0],
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        worst = worst.max(r.max_relative_error);
        checked.push(r.checked.len());
    }
    outcome(
        worst <= 1e-3 && checked.iter().all(|&n| n >= 200),
        format!("3 batches, parameters checked {checked:?}, max relative error {worst:.2e} (bound 1e-3)"),
    )
}

// Metric oracles

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = [0usize; 5];
    const N: usize = 200;
    for _ in 0..N {
        let n = rng.gen_range(2..30);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64 / 10.0).collect();
        let d = ScoredLabels::new(scores.clone(), labels.clone()).unwrap();
        bad[0] += usize::from((auroc(&d).unwrap() - common::pairwise_auroc(&scores, &labels)).abs() > 1e-12);
        let t = [0.0, 0.01, 0.1, 0.5, 1.0][rng.gen_range(0..5)];
        bad[1] += usize::from(dr_at_fp(&d, t).unwrap() != common::sweep_dr(&scores, &labels, t));

        let word = |rng: &mut ChaCha8Rng| -> String {
            let alphabet = ['a', 'b', 'c', 'é', ' '];
            (0..rng.gen_range(0..10)).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
        };
        let (a, b) = (word(&mut rng), word(&mut rng));
        bad[2] += usize::from(levenshtein(&a, &b) != common::dp_levenshtein(&a, &b));

        let vocab = ["click", "Allow", "now", "the", "x"];
        let sentence = |rng: &mut ChaCha8Rng| -> String {
            (0..rng.gen_range(0..9)).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
        };
        let (a, b) = (sentence(&mut rng), sentence(&mut rng));
        bad[3] += usize::from((rouge_l_f1(&a, &b) - common::oracle_rouge(&a, &b)).abs() > 1e-12);

        let items: Vec<Vec<Option<u32>>> = (0..rng.gen_range(2..12))
            .map(|_| (0..3).map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..3))).collect())
            .collect();
        if let Ok(m) = LabelMatrix::new(items.clone()) {
            match krippendorff_alpha(&m) {
                Ok(a) => bad[4] += usize::from((a - common::pairwise_alpha(&items)).abs() > 1e-9),
                Err(_) => bad[4] += usize::from(common::pairwise_alpha(&items).is_finite()),
            }
        }
    }
    let reference = ScoredLabels::new(vec![0.1, 0.4, 0.35, 0.8], vec![0, 0, 1, 1]).unwrap();
    let examples = auroc(&reference).unwrap() == 0.75
        && levenshtein("kitten", "sitting") == 3
        && rouge_l_f1("click allow to continue", "click allow to continue") == 1.0;
    outcome(
        bad.iter().all(|&b| b == 0) && examples,
        format!("{N} instances each, mismatches auroc/dr/levenshtein/rouge/alpha {bad:?}; worked examples {examples}"),
    )
}

// Pipeline

fn t0() -> DateTime<Utc> {
    DateTime::from_timestamp(1_750_000_000, 0).unwrap()
}

/// Distinct 1920x1080 page per `k`: a bright band whose position moves with k.
fn page(k: usize) -> RawScreenshot {
    let (w, h) = (1920, 1080);
    let band = (k * 131) % (h - 240);
    let mut px = vec![20u8; w * h * 3];
    for y in band..band + 240 {
        px[y * w * 3..(y + 1) * w * 3].fill(230);
    }
    RawScreenshot::new(w, h, px).unwrap().with_domain("unknown.test")
}

fn latency_report(classifier: ModelClassifier) -> Outcome {
    let clock = Arc::new(VirtualClock::new(t0()));
    let d = Defender::new(
        WhitelistIndex::new(WHITELIST_CUTOFF),
        Arc::new(FixedTextEngine::new("click allow to continue")),
        Arc::new(classifier),
        clock.clone(),
        DefenderConfig::default(),
    );
    for k in 0..50 {
        clock.advance(SCAN_INTERVAL);
        let v = d.scan(1, &page(k % 7)).unwrap();
        if d.is_paused(1) {
            d.record_override(v.id, OverrideChoice::IgnoreWarning).unwrap();
        }
    }
    let r = d.latency_report();
    let Some(total) = r.total else {
        return outcome(false, "no report");
    };
    let inferences = r.stages.get("model").map_or(0, |s| s.count);
    outcome(
        r.cycles == 50 && total.p50_ms < 1000.0,
        format!(
            "{} cycles, {inferences} inferences, P50 {:.1} ms, P95 {:.1} ms (P50 bound 1000 ms)",
            r.cycles, total.p50_ms, total.p95_ms
        ),
    )
}

/// Always benign, so no warning pauses the tab.
struct Benign;

impl Classifier for Benign {
    fn classify(&self, _: &NormalizedImage, _: &str) -> bmaguard_core::Result<Prediction> {
        Ok(Prediction {
            logits: [1.0, -1.0],
            probability: 0.1192,
            label: Classification::Benign,
        })
    }
}

fn scheduler_reuse() -> Outcome {
    let counting = Arc::new(CountingClassifier::new(Benign));
    let clock = Arc::new(VirtualClock::new(t0()));
    let d = Defender::new(
        WhitelistIndex::new(WHITELIST_CUTOFF),
        Arc::new(FixedTextEngine::new("hello")),
        counting.clone(),
        clock.clone(),
        DefenderConfig::default(),
    );
    let mut sched = Scheduler::new(SCAN_INTERVAL);
    sched.add_tab(1);
    let mut driver = DefenderDriver::new(&d, &clock, |_, at: Duration| page(usize::from(at > Duration::from_secs(15))));
    let first = sched.run_until(Duration::from_secs(15), &mut driver);
    let after_three = counting.calls();
    sched.run_until(Duration::from_secs(20), &mut driver);
    let after_change = counting.calls();
    let distance = hamming_distance(
        &compute_phash(&normalize_screenshot(&page(0)).unwrap()),
        &compute_phash(&normalize_screenshot(&page(1)).unwrap()),
    );
    let cases: Vec<u8> = driver
        .results
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().map(|v| v.decision_case.number()))
        .collect();
    outcome(
        first.len() == 3 && after_three == 1 && after_change == 2 && distance.0 >= 5,
        format!(
            "3 unchanged cycles -> {after_three} inference; change (distance {}) -> {} more; cases {cases:?}",
            distance.0,
            after_change - after_three
        ),
    )
}

// Toy model on the synthetic corpus

const MAX_EPOCHS: usize = 30;
const HELD_CAMPAIGNS: [&str; 5] = ["c11", "c12", "c13", "c14", "c15"];

struct Trained {
    generator: CorpusGenerator,
    split: Split,
    vocab: Vocabulary,
    params: ModelParams,
    train: Vec<Example>,
    train_config: TrainConfig,
}

fn train_config(counts: ClassCounts, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 32,
        class_weights: class_weights_from_counts(counts.as_array()).unwrap(),
        optimizer: OptimizerKind::adam(),
        seed,
        ..TrainConfig::default()
    }
}

fn score(params: &ModelParams, test: &[(SampleRecord, NormalizedImage, TokenSequence)]) -> ScoredLabels {
    let (scores, labels) = test
        .iter()
        .map(|(r, img, toks)| (predict(params, img, toks).probability, r.label.index() as u8))
        .unzip();
    ScoredLabels::new(scores, labels).unwrap()
}

/// 1,000 benign / 200 BMA train, 200 / 100 test on five held-out campaigns.
fn learnability(slot: &mut Option<Trained>) -> Outcome {
    let generator = CorpusGenerator::new(CorpusSpec::new(1200, 300, 15, 42)).unwrap();
    let split = hold_out(
        &generator.plan(),
        SplitAxis::Campaign,
        &HELD_CAMPAIGNS,
        &SplitOptions { benign_test: 200, per_campaign_cap: 10, seed: 1 },
    )
    .unwrap();
    let texts: Vec<String> = split.train.records.iter().map(|r| generator.render(r).unwrap().1).collect();
    let vocab = Vocabulary::build(texts.iter().map(String::as_str), 2, 8192);
    let config = ModelConfig::desk(vocab.len());
    let train: Vec<Example> = split.train.records.iter().map(|r| generator.example(r, &vocab, &config).unwrap()).collect();
    let test: Vec<_> = split
        .test
        .records
        .iter()
        .map(|r| {
            let (shot, text) = generator.render(r).unwrap();
            (r.clone(), normalize_screenshot(&shot).unwrap(), tokenize(&text, &vocab))
        })
        .collect();
    let tc = train_config(split.train.counts(), 3);
    let mut state = TrainState::new(ModelParams::init(config, 7).unwrap());
    let mut reached = None;
    let mut last = (0.0, 0.0);
    for epoch in 1..=MAX_EPOCHS {
        train_epoch(&mut state, &train, &tc).unwrap();
        let d = score(&state.params, &test);
        last = (auroc(&d).unwrap(), dr_at_fp(&d, 0.01).unwrap());
        if last.0 >= 0.95 && last.1 >= 0.80 {
            reached = Some(epoch);
            break;
        }
    }
    let detail = format!(
        "train {}/{} test {}/{}; {} at AUROC {:.3} DR@1%FP {:.3} (bounds 0.95, 0.80)",
        split.train.counts().benign,
        split.train.counts().bma,
        split.test.counts().benign,
        split.test.counts().bma,
        reached.map_or(format!("not reached in {MAX_EPOCHS} epochs"), |e| format!("epoch {e}")),
        last.0,
        last.1
    );
    *slot = Some(Trained { generator, split, vocab, params: state.params, train, train_config: tc });
    outcome(reached.is_some(), detail)
}

/// Accuracy of `params` on `eval`, with every image attacked first when `epsilon > 0`.
fn attacked_accuracy(params: &ModelParams, vocab: &Vocabulary, g: &CorpusGenerator, eval: &[SampleRecord], epsilon: f64) -> f64 {
    let mut correct = 0;
    for r in eval {
        let (shot, text) = g.render(r).unwrap();
        let img = normalize_screenshot(&shot).unwrap();
        let toks = tokenize(&text, vocab);
        let img = if epsilon > 0.0 {
            let target = DualBranchTarget::new(params, &toks);
            let out = pgd_attack(&target, &FloatImage::from_normalized(&img), r.label.index(), &PgdConfig::new(epsilon)).unwrap();
            img.with_pixels(out.image.to_rgb8()).unwrap()
        } else {
            img
        };
        correct += usize::from(predict(params, &img, &toks).label.index() == r.label.index());
    }
    correct as f64 / eval.len() as f64
}

const CURRICULUM_CLEAN: usize = 400;
const CURRICULUM_EPOCHS: usize = 4;

fn pgd_contract(trained: Option<&Trained>) -> Outcome {
    let Some(t) = trained else {
        return outcome(false, "no trained model");
    };
    let eps8 = 8.0 / 255.0;
    let g = &t.generator;

    // Budget and range for every tier, before and after 8-bit rounding.
    let mut budget_violations = 0;
    for r in t.split.test.records.iter().step_by(60) {
        let (shot, text) = g.render(r).unwrap();
        let img = normalize_screenshot(&shot).unwrap();
        let clean = FloatImage::from_normalized(&img);
        let toks = tokenize(&text, &t.vocab);
        for tier in PerturbationTier::ALL {
            let target = DualBranchTarget::new(&t.params, &toks);
            let adv = pgd_attack(&target, &clean, r.label.index(), &PgdConfig::for_tier(tier)).unwrap().image;
            let in_range = adv.data.iter().all(|v| (0.0..=1.0).contains(v));
            let pair = make_adversarial_pair(&t.params, &t.vocab, &r.id, &img, &text, r.label.index(), tier).unwrap();
            let max_step = pair.image.pixels().iter().zip(img.pixels()).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
            let ok = adv.linf_distance(&clean) <= tier.epsilon() && in_range && max_step as f64 <= tier.epsilon() * 255.0;
            budget_violations += usize::from(!ok);
        }
    }

    let eval: Vec<SampleRecord> = t.split.test.records.iter().step_by(2).cloned().collect();
    let clean_acc = attacked_accuracy(&t.params, &t.vocab, g, &eval, 0.0);
    let attacked = attacked_accuracy(&t.params, &t.vocab, g, &eval, eps8);
    let drop = clean_acc - attacked;

    // Fine-tune on fresh pairs against the current weights each epoch.
    let table = SynonymTable::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut state = TrainState::new(t.params.clone());
    for epoch in 0..CURRICULUM_EPOCHS {
        let picks = rand::seq::index::sample(&mut rng, t.train.len(), CURRICULUM_CLEAN).into_vec();
        let plan = plan_curriculum(picks.len(), CurriculumRatio::default(), epoch as u64).unwrap();
        let params = state.params.clone();
        let pairs = build_adv_curriculum(&plan, |o, tier| {
            let r = &t.split.train.records[picks[o]];
            let (shot, text) = g.render(r)?;
            let img = normalize_screenshot(&shot)?;
            let perturbed = stand_in_levels(&text, &table, r.seed)[tier.level() as usize - 1].clone();
            make_adversarial_pair(&params, &t.vocab, &r.id, &img, &perturbed, r.label.index(), tier)
        })
        .unwrap();
        let mut epoch_set: Vec<&Example> = picks.iter().map(|&i| &t.train[i]).collect();
        let adv: Vec<Example> = pairs
            .iter()
            .map(|p| make_example(&p.origin_id, &p.image, &p.text, p.label, &t.vocab, &params.config))
            .collect();
        epoch_set.extend(adv.iter());
        train_epoch(&mut state, &epoch_set, &t.train_config).unwrap();
    }
    let robust_clean = attacked_accuracy(&state.params, &t.vocab, g, &eval, 0.0);
    let robust = attacked_accuracy(&state.params, &t.vocab, g, &eval, eps8);
    let recovered = robust - attacked;
    outcome(
        budget_violations == 0 && drop >= 0.20 && recovered >= drop / 2.0,
        format!(
            "budget violations {budget_violations}; {} samples: clean {clean_acc:.3}, PGD 8/255 {attacked:.3} (drop {:.1} pp, bound 20); \
             after curriculum clean {robust_clean:.3}, PGD 8/255 {robust:.3} (recovered {:.1} pp, bound {:.1})",
            eval.len(),
            drop * 100.0,
            recovered * 100.0,
            drop * 50.0
        ),
    )
}

fn main() {
    let mut all = true;
    all &= run("normalization oracle", normalization_oracle);
    all &= run("phash invariants", phash_invariants);
    all &= run("decision-case exhaustiveness", decision_exhaustive);
    all &= run("gradient correctness", gradient_correctness);
    all &= run("metric oracles", metric_oracles);
    let mut trained = None;
    all &= run("toy learnability", || learnability(&mut trained));
    all &= run("PGD contract", || pgd_contract(trained.as_ref()));

    let model = match trained {
        Some(t) => ModelClassifier::new(t.params, t.vocab),
        None => {
            let vocab = Vocabulary::build(["click allow to continue"; 2], 2, 100);
            ModelClassifier::new(ModelParams::init(ModelConfig::desk(vocab.len()), 5).unwrap(), vocab)
        }
    };
    all &= run("pipeline latency report", || latency_report(model));
    all &= run("scheduler reuse", scheduler_reuse);
    if !all {
        std::process::exit(1);
    }
}
