use std::collections::{BTreeMap, BTreeSet};

use bmaguard_core::corpus::*;
use bmaguard_core::imaging::AugmentationSpec;
use proptest::prelude::*;

mod common;

fn small_spec(n_benign: usize, n_bma: usize, campaigns: usize, seed: u64) -> CorpusSpec {
    CorpusSpec {
        resolutions: vec![Resolution::new(320, 180), Resolution::new(200, 300)],
        ..CorpusSpec::new(n_benign, n_bma, campaigns, seed)
    }
}

/// Pairwise AUROC, ties count one half.
fn pairwise_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Naive-Bayes word-presence scorer fitted on `train`, AUROC on `test`.
fn bag_of_words_auroc(train: &[(String, usize)], test: &[(String, usize)]) -> f64 {
    let mut df = [BTreeMap::<String, f64>::new(), BTreeMap::new()];
    let mut n = [0.0f64; 2];
    for (t, y) in train {
        n[*y] += 1.0;
        for w in words(t) {
            *df[*y].entry(w).or_default() += 1.0;
        }
    }
    let score = |t: &str| -> f64 {
        words(t)
            .iter()
            .map(|w| {
                let p1 = (df[1].get(w).copied().unwrap_or(0.0) + 1.0) / (n[1] + 2.0);
                let p0 = (df[0].get(w).copied().unwrap_or(0.0) + 1.0) / (n[0] + 2.0);
                (p1 / p0).ln()
            })
            .sum()
    };
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (t, y) in test {
        if *y == 1 { pos.push(score(t)) } else { neg.push(score(t)) }
    }
    pairwise_auroc(&pos, &neg)
}

#[test]
fn plan_counts_and_determinism() {
    let g = CorpusGenerator::new(small_spec(50, 20, 4, 9)).unwrap();
    let m = g.plan();
    assert_eq!(m.counts(), ClassCounts { benign: 50, bma: 20 });
    assert_eq!(m.campaigns().values().copied().collect::<Vec<_>>(), vec![5, 5, 5, 5]);
    assert_eq!(m, CorpusGenerator::new(small_spec(50, 20, 4, 9)).unwrap().plan());
    assert_ne!(m, CorpusGenerator::new(small_spec(50, 20, 4, 10)).unwrap().plan());
    let r = &m.records[55];
    let (a, ta) = g.render(r).unwrap();
    let (b, tb) = g.render(r).unwrap();
    assert_eq!((&a.pixels, ta), (&b.pixels, tb));
    assert_eq!((a.width, a.height), (r.resolution.width, r.resolution.height));
}

#[test]
fn manifest_round_trips_and_reports_bad_lines() {
    let m = CorpusGenerator::new(small_spec(5, 4, 2, 1)).unwrap().plan();
    assert_eq!(Manifest::parse_jsonl(&m.to_jsonl()).unwrap().records, m.records);
    let mut bad = m.to_jsonl();
    bad.push_str("{not json}\n");
    match Manifest::parse_jsonl(&bad) {
        Err(bmaguard_core::Error::Parse { line, .. }) => assert_eq!(line, m.len() + 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn plain_text_separates_and_decoy_text_does_not() {
    let g = CorpusGenerator::new(CorpusSpec { decoy_rate: 0.5, ..small_spec(240, 240, 6, 4) }).unwrap();
    let m = g.plan();
    let mut by_decoy: [Vec<(String, usize)>; 2] = [Vec::new(), Vec::new()];
    for r in &m.records {
        by_decoy[usize::from(r.decoy)].push((g.render(r).unwrap().1, r.label.index()));
    }
    for (decoy, set) in by_decoy.iter().enumerate() {
        let (train, test): (Vec<_>, Vec<_>) = set.iter().cloned().enumerate().partition(|(i, _)| i % 2 == 0);
        let strip = |v: Vec<(usize, (String, usize))>| v.into_iter().map(|(_, x)| x).collect::<Vec<_>>();
        let auc = bag_of_words_auroc(&strip(train), &strip(test));
        if decoy == 1 {
            assert!((auc - 0.5).abs() < 0.15, "decoy text auroc {auc}");
        } else {
            assert!(auc > 0.95, "plain text auroc {auc}");
        }
    }
}

#[test]
fn stand_in_levels_grow_in_edit_distance() {
    let table = SynonymTable::builtin();
    let g = CorpusGenerator::new(small_spec(0, 30, 3, 2)).unwrap();
    let (mut d1, mut d5) = (0usize, 0usize);
    for r in &g.plan().records {
        let text = g.render(r).unwrap().1;
        let levels = stand_in_levels(&text, &table, r.seed);
        d1 += common::dp_levenshtein(&text, &levels[0]);
        d5 += common::dp_levenshtein(&text, &levels[4]);
    }
    assert!(d1 < d5, "{d1} !< {d5}");
}

#[test]
fn augmentation_multiplies_bma_only() {
    let dir = tempfile::tempdir().unwrap();
    let g = CorpusGenerator::new(small_spec(6, 4, 2, 3)).unwrap();
    let m = g.write(dir.path()).unwrap();
    let table = SynonymTable::builtin();
    let spec = AugmentationSpec::new(1);
    assert!(augment_dataset(&m, dir.path(), &spec, &table, 0).is_err());
    assert_eq!(augment_dataset(&m, dir.path(), &spec, &table, 1).unwrap(), m);
    let a = augment_dataset(&m, dir.path(), &spec, &table, 3).unwrap();
    assert_eq!(a.counts(), ClassCounts { benign: 6, bma: 12 });
    for r in a.records.iter().filter(|r| r.augmented_from.is_some()) {
        let (img, _) = load_sample(dir.path(), r).unwrap();
        assert_eq!((img.width(), img.height()), (960, 540));
    }
}

fn ids(m: &Manifest) -> Vec<String> {
    m.records.iter().map(|r| r.id.clone()).collect()
}

#[test]
fn resolution_split_caps_per_campaign() {
    let m = CorpusGenerator::new(small_spec(40, 60, 3, 5)).unwrap().plan();
    let opts = SplitOptions { benign_test: 5, per_campaign_cap: 4, seed: 1 };
    let s = leave_one_out_split(&m, SplitAxis::Resolution, "200x300", &opts).unwrap();
    assert!(s.train.records.iter().all(|r| r.resolution != Resolution::new(200, 300)));
    assert!(s.test.records.iter().all(|r| r.resolution == Resolution::new(200, 300)));
    assert!(s.test.campaigns().values().all(|&n| n <= 4));
    assert_eq!(s.test.counts().benign, 5);
    assert!(leave_one_out_split(&m, SplitAxis::Resolution, "1x1", &opts).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synonym_replace_keeps_token_count(text in "[A-Za-z ,.!\n]{0,120}", seed in any::<u64>()) {
        let table = SynonymTable::builtin();
        let out = synonym_replace(&text, &table, seed);
        prop_assert_eq!(out.split_whitespace().count(), text.split_whitespace().count());
        prop_assert_eq!(synonym_replace_with(&text, &table, seed, 0.0), text);
    }

    #[test]
    fn splits_partition_the_manifest(
        seed in 0u64..1000,
        held in prop::collection::btree_set(0usize..5, 1..3),
        benign_test in 0usize..30,
        axis_campaign in any::<bool>(),
    ) {
        let m = CorpusGenerator::new(small_spec(25, 20, 5, seed)).unwrap().plan();
        let opts = SplitOptions { benign_test, per_campaign_cap: 3, seed };
        let (axis, held): (SplitAxis, Vec<String>) = if axis_campaign {
            (SplitAxis::Campaign, held.iter().map(|&i| campaign_id(i)).collect())
        } else {
            (SplitAxis::Resolution, vec!["320x180".into()])
        };
        let held_ref: Vec<&str> = held.iter().map(String::as_str).collect();
        let s = hold_out(&m, axis, &held_ref, &opts).unwrap();
        let mut all: Vec<String> = [ids(&s.train), ids(&s.test), ids(&s.excluded)].concat();
        prop_assert_eq!(all.len(), m.len());
        all.sort();
        let mut want = ids(&m);
        want.sort();
        prop_assert_eq!(all, want);
        if axis_campaign {
            for r in &s.train.records {
                prop_assert!(!held.contains(&r.campaign_id));
            }
            prop_assert_eq!(s.test.counts().benign, benign_test.min(25));
        }
    }
}
