use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use bmaguard_core::imaging::{NormalizedImage, RawScreenshot};
use bmaguard_core::model::{Classification, Prediction};
use bmaguard_core::ocr::{FixedTextEngine, OcrEngine, Strip};
use bmaguard_core::phash::PerceptualHash;
use bmaguard_core::pipeline::*;
use bmaguard_core::{Error, Result};
use chrono::{DateTime, Utc};
use proptest::prelude::*;

struct Fixed(Classification);

impl Classifier for Fixed {
    fn classify(&self, _: &NormalizedImage, _: &str) -> Result<Prediction> {
        let (logits, p) = match self.0 {
            Classification::Benign => ([1.0, -1.0], 0.1192),
            Classification::Malicious => ([-1.0, 1.0], 0.8808),
        };
        Ok(Prediction { logits, probability: p, label: self.0 })
    }
}

/// Fails while the switch is on.
struct Flaky(AtomicBool);

impl OcrEngine for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }
    fn recognize(&self, _: &Strip) -> std::result::Result<String, String> {
        if self.0.load(Ordering::SeqCst) {
            Err("engine crashed".into())
        } else {
            Ok("text".into())
        }
    }
}

fn t0() -> DateTime<Utc> {
    DateTime::from_timestamp(1_750_000_000, 0).unwrap()
}

/// Page `k`: a white band at a k-dependent vertical offset on black.
fn page(k: usize, domain: &str) -> RawScreenshot {
    let (w, h) = (1280, 720);
    let band = (k * 97) % (h - 160);
    let mut px = vec![0u8; w * h * 3];
    for y in band..band + 160 {
        px[y * w * 3..(y + 1) * w * 3].fill(255);
    }
    RawScreenshot::new(w, h, px).unwrap().with_domain(domain)
}

fn whitelist() -> WhitelistIndex {
    WhitelistIndex::parse("50,example.com\n100000,edge.org\n100001,over.org\n", WHITELIST_CUTOFF).unwrap()
}

fn defender(label: Classification) -> (Defender, Arc<CountingClassifier<Fixed>>, Arc<VirtualClock>) {
    let clf = Arc::new(CountingClassifier::new(Fixed(label)));
    let clock = Arc::new(VirtualClock::new(t0()));
    let d = Defender::new(
        whitelist(),
        Arc::new(FixedTextEngine::new("hello")),
        clf.clone(),
        clock.clone(),
        DefenderConfig {
            retain_screenshots: true,
            ..Default::default()
        },
    );
    (d, clf, clock)
}

fn oracle_case(whitelisted: bool, has_prior: bool, far: bool) -> u8 {
    match (whitelisted, has_prior, far) {
        (true, _, _) => 1,
        (false, false, _) => 2,
        (false, true, true) => 3,
        (false, true, false) => 4,
    }
}

#[test]
fn all_eight_combinations_map_to_one_case() {
    let new = PerceptualHash::from_bits(0);
    let mut seen = std::collections::BTreeSet::new();
    for whitelisted in [false, true] {
        for has_prior in [false, true] {
            for far in [false, true] {
                let mut s = TabState::new(0);
                if has_prior {
                    s.last_hash = Some(PerceptualHash::from_bits(if far { 0b11111 } else { 0b1111 }));
                }
                let c = decide(&s, whitelisted, &new);
                assert_eq!(c.number(), oracle_case(whitelisted, has_prior, far));
                seen.insert(c.number());
            }
        }
    }
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
}

proptest! {
    #[test]
    fn decide_matches_oracle(w in any::<bool>(), prior in prop::option::of(any::<u64>()), new in any::<u64>()) {
        let mut s = TabState::new(0);
        s.last_hash = prior.map(PerceptualHash::from_bits);
        let far = prior.is_some_and(|p| (p ^ new).count_ones() >= 5);
        prop_assert_eq!(decide(&s, w, &PerceptualHash::from_bits(new)).number(), oracle_case(w, prior.is_some(), far));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn inference_count_equals_case_two_and_three(pages in prop::collection::vec(0usize..4, 1..12)) {
        let (d, clf, clock) = defender(Classification::Benign);
        let mut inferred = 0;
        for k in pages {
            clock.advance(Duration::from_secs(5));
            let v = d.scan(1, &page(k, "unknown.test")).unwrap();
            inferred += usize::from(v.decision_case.runs_inference());
            prop_assert_eq!(v.source == VerdictSource::Reused, v.decision_case == DecisionCase::Unchanged);
        }
        prop_assert_eq!(clf.calls(), inferred);
    }
}

#[test]
fn whitelist_hit_skips_every_stage() {
    let (d, clf, _) = defender(Classification::Malicious);
    for domain in ["example.com", "edge.org"] {
        let v = d.scan(1, &page(0, domain)).unwrap();
        assert_eq!(v.source, VerdictSource::Whitelist);
        assert_eq!(v.decision_case, DecisionCase::Whitelisted);
        assert_eq!(v.label, Classification::Benign);
        let l = v.latency;
        assert!(l.normalize_ms.is_none() && l.phash_ms.is_none() && l.ocr_ms.is_none() && l.model_ms.is_none());
        assert!(d.screenshot_png(v.id).is_none());
    }
    assert_eq!(clf.calls(), 0);
    assert_eq!(d.tab_state(1).unwrap().last_hash, None);
    let v = d.scan(1, &page(0, "over.org")).unwrap();
    assert_eq!(v.decision_case, DecisionCase::FirstScan);
}

#[test]
fn first_scan_then_reuse() {
    let (d, clf, clock) = defender(Classification::Benign);
    let first = d.scan(7, &page(1, "a.test")).unwrap();
    assert_eq!(first.decision_case, DecisionCase::FirstScan);
    assert_eq!(first.source, VerdictSource::Inference);
    let state = d.tab_state(7).unwrap();
    assert!(state.last_hash.is_some());
    assert_eq!(state.last_verdict.as_ref(), Some(&first));

    clock.advance(Duration::from_secs(5));
    let again = d.scan(7, &page(1, "a.test")).unwrap();
    assert_eq!(clf.calls(), 1);
    assert_eq!(again.decision_case, DecisionCase::Unchanged);
    assert_eq!(again.reused_from, Some(first.id));
    assert!(again.latency.ocr_ms.is_none() && again.latency.model_ms.is_none());
    assert!(again.latency.phash_ms.is_some());
    // Identical apart from identity, source, case, time and this cycle's latency.
    let normalized = Verdict {
        id: first.id,
        source: first.source,
        decision_case: first.decision_case,
        created_at: first.created_at,
        latency: first.latency,
        reused_from: None,
        ..again.clone()
    };
    assert_eq!(normalized, first);

    clock.advance(Duration::from_secs(5));
    let changed = d.scan(7, &page(3, "a.test")).unwrap();
    assert_eq!(changed.decision_case, DecisionCase::Changed);
    assert_eq!(clf.calls(), 2);
    assert!(d.screenshot_png(changed.id).is_some());
}

#[test]
fn engine_failure_leaves_state_untouched() {
    let flaky = Arc::new(Flaky(AtomicBool::new(false)));
    let clf = Arc::new(CountingClassifier::new(Fixed(Classification::Benign)));
    let d = Defender::new(whitelist(), flaky.clone(), clf.clone(), Arc::new(VirtualClock::new(t0())), DefenderConfig::default());
    d.scan(1, &page(0, "x.test")).unwrap();
    let before = d.tab_state(1).unwrap();
    flaky.0.store(true, Ordering::SeqCst);
    let err = d.scan(1, &page(2, "x.test")).unwrap_err();
    assert!(matches!(err, Error::Engine { .. }));
    assert_eq!(d.tab_state(1).unwrap(), before);
    assert_eq!(clf.calls(), 1);
    assert_eq!(d.verdicts_since(None).len(), 1);
    let line = error_log_line(t0(), 1, "x.test", &err);
    assert_eq!(line.split('\t').count(), 5);
}

#[test]
fn malicious_verdict_pauses_until_override() {
    let (d, clf, clock) = defender(Classification::Malicious);
    let v = d.scan(3, &page(0, "bad.test")).unwrap();
    assert_eq!(v.label, Classification::Malicious);
    assert!(d.is_paused(3));
    assert!(matches!(d.scan(3, &page(0, "bad.test")), Err(Error::TabPaused(_))));
    assert!(matches!(d.record_override(999, OverrideChoice::IgnoreWarning), Err(Error::NotFound(_))));

    clock.advance(Duration::from_secs(1));
    let rec = d.record_override(v.id, OverrideChoice::NotMalicious).unwrap();
    assert_eq!(rec.user_choice, OverrideChoice::NotMalicious);
    assert_eq!(rec.timestamp, t0() + chrono::Duration::seconds(1));
    assert!(!d.is_paused(3));
    let listed = d.verdicts_since(None);
    assert_eq!(listed[0].override_record.as_ref(), Some(&rec));

    // Unchanged page: the answered verdict is reused without a new warning.
    let r = d.scan(3, &page(0, "bad.test")).unwrap();
    assert_eq!(r.source, VerdictSource::Reused);
    assert!(!d.is_paused(3));
    // A changed malicious page warns again.
    d.scan(3, &page(2, "bad.test")).unwrap();
    assert!(d.is_paused(3));
    assert_eq!(clf.calls(), 2);
}

#[test]
fn every_choice_unpauses() {
    for choice in OverrideChoice::ALL {
        let (d, _, _) = defender(Classification::Malicious);
        let v = d.scan(1, &page(0, "bad.test")).unwrap();
        assert!(d.is_paused(1));
        d.record_override(v.id, choice).unwrap();
        assert!(!d.is_paused(1));
        assert_eq!(d.overrides().len(), 1);
    }
}

#[test]
fn verdicts_since_is_inclusive_and_ordered() {
    let (d, _, clock) = defender(Classification::Benign);
    for k in 0..4 {
        d.scan(1, &page(k, "a.test")).unwrap();
        clock.advance(Duration::from_secs(5));
    }
    let all = d.verdicts_since(None);
    assert_eq!(all.len(), 4);
    let cut = all[2].verdict.created_at;
    let tail = d.verdicts_since(Some(cut));
    assert_eq!(tail.iter().map(|e| e.verdict.id).collect::<Vec<_>>(), vec![all[2].verdict.id, all[3].verdict.id]);
    let json = serde_json::to_value(&all[0]).unwrap();
    assert!(json.get("override").unwrap().is_null());
    assert_eq!(json["decision_case"], 2);
    assert_eq!(json["source"], "inference");
}

#[test]
fn log_line_fields() {
    let (d, _, _) = defender(Classification::Benign);
    let v = d.scan(4, &page(0, "a.test")).unwrap();
    let line = v.log_line();
    let f: Vec<&str> = line.split('\t').collect();
    assert_eq!(f.len(), 11);
    assert!(DateTime::parse_from_rfc3339(f[0]).is_ok());
    assert_eq!(&f[1..5], &["4", "a.test", "2", "benign"]);
    let w = d.scan(4, &page(0, "example.com")).unwrap().log_line();
    assert!(w.contains("\tmodel_ms=-\t"));
}

#[test]
fn scheduler_reuses_until_page_changes() {
    let (d, clf, clock) = defender(Classification::Benign);
    let mut sched = Scheduler::new(SCAN_INTERVAL);
    sched.add_tab(1);
    let mut driver = DefenderDriver::new(&d, &clock, |_, at: Duration| page(usize::from(at > Duration::from_secs(15)), "a.test"));
    let ev = sched.run_until(Duration::from_secs(15), &mut driver);
    assert_eq!(completed_cycles(&ev, 1, Duration::from_secs(16)), 3);
    assert_eq!(clf.calls(), 1);
    let ev = sched.run_until(Duration::from_secs(20), &mut driver);
    assert_eq!(ev.len(), 1);
    assert_eq!(clf.calls(), 2);
    let cases: Vec<u8> = driver.results.iter().map(|(_, r)| r.as_ref().unwrap().decision_case.number()).collect();
    assert_eq!(cases, vec![2, 4, 4, 3]);
    assert_eq!(d.verdicts_since(None)[3].verdict.created_at, t0() + chrono::Duration::seconds(20));
}

#[test]
fn latency_report_covers_cycles() {
    let (d, _, _) = defender(Classification::Benign);
    for k in 0..6 {
        d.scan(1, &page(k, "a.test")).unwrap();
    }
    d.scan(1, &page(0, "example.com")).unwrap();
    let r = d.latency_report();
    assert_eq!(r.cycles, 7);
    let total = r.total.unwrap();
    assert!(total.p50_ms <= total.p95_ms);
    assert_eq!(r.stages["normalize"].count, 6);
    assert!(r.stages["model"].count <= 6);
}
