//! Per-tab defend loop: whitelist short-circuit, hash-gated inference,
//! verdict store and user overrides.

mod latency;
mod scheduler;
mod whitelist;

pub use latency::{percentile, LatencyLog, LatencyReport, StageLatency, StageSummary};
pub use scheduler::{
    completed_cycles, Clock, ScanDriver, ScanEvent, Scheduler, SkipReason, SystemClock, VirtualClock,
    SCAN_INTERVAL,
};
pub use whitelist::{WhitelistIndex, WHITELIST_CUTOFF};

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{normalize_screenshot, NormalizedImage, RawScreenshot};
use crate::model::{predict, tokenize, Classification, ModelParams, Prediction, Vocabulary};
use crate::ocr::{extract_text_with, OcrEngine, DEFAULT_STRIPS};
use crate::phash::{compute_phash, hamming_distance, PerceptualHash, CHANGE_THRESHOLD};
use crate::pngio;

pub type TabId = u64;
pub type VerdictId = u64;

/// Which of the four mutually exclusive paths a cycle took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum DecisionCase {
    /// Domain is whitelisted; nothing else runs.
    Whitelisted = 1,
    /// No previous hash for the tab.
    FirstScan = 2,
    /// Hash moved by at least the threshold.
    Changed = 3,
    /// Hash within the threshold; the stored verdict is reused.
    Unchanged = 4,
}

impl DecisionCase {
    pub const ALL: [DecisionCase; 4] = [
        DecisionCase::Whitelisted,
        DecisionCase::FirstScan,
        DecisionCase::Changed,
        DecisionCase::Unchanged,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn runs_inference(self) -> bool {
        matches!(self, DecisionCase::FirstScan | DecisionCase::Changed)
    }
}

impl From<DecisionCase> for u8 {
    fn from(c: DecisionCase) -> u8 {
        c.number()
    }
}

impl TryFrom<u8> for DecisionCase {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        DecisionCase::ALL
            .get((v as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::invalid(format!("decision case {v} outside 1..=4")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Whitelist,
    Inference,
    Reused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: VerdictId,
    pub tab_id: TabId,
    pub domain: String,
    pub label: Classification,
    /// Probability of the malicious class; 0 for whitelist verdicts.
    pub probability: f64,
    pub source: VerdictSource,
    pub decision_case: DecisionCase,
    pub latency: StageLatency,
    pub created_at: DateTime<Utc>,
    /// Hex hash of the screenshot, absent for whitelist verdicts.
    pub phash: Option<String>,
    /// Verdict whose result this one repeats.
    pub reused_from: Option<VerdictId>,
}

fn ms(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

impl Verdict {
    /// Tab-separated log record.
    pub fn log_line(&self) -> String {
        let l = &self.latency;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6}\tnormalize_ms={}\tphash_ms={}\tocr_ms={}\tmodel_ms={}\ttotal_ms={:.3}",
            self.created_at.to_rfc3339_opts(SecondsFormat::Millis, true),
            self.tab_id,
            self.domain,
            self.decision_case.number(),
            self.label,
            self.probability,
            ms(l.normalize_ms),
            ms(l.phash_ms),
            ms(l.ocr_ms),
            ms(l.model_ms),
            l.total_ms,
        )
    }
}

/// Log record for a cycle that failed.
pub fn error_log_line(at: DateTime<Utc>, tab: TabId, domain: &str, err: &Error) -> String {
    let msg = err.to_string().replace(['\t', '\n'], " ");
    format!(
        "{}\t{tab}\t{domain}\terror\t{msg}",
        at.to_rfc3339_opts(SecondsFormat::Millis, true)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideChoice {
    ReturnToSafety,
    IgnoreWarning,
    NotMalicious,
}

impl OverrideChoice {
    pub const ALL: [OverrideChoice; 3] = [
        OverrideChoice::ReturnToSafety,
        OverrideChoice::IgnoreWarning,
        OverrideChoice::NotMalicious,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OverrideChoice::ReturnToSafety => "return_to_safety",
            OverrideChoice::IgnoreWarning => "ignore_warning",
            OverrideChoice::NotMalicious => "not_malicious",
        }
    }
}

impl fmt::Display for OverrideChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OverrideChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OverrideChoice::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "choice {s:?} must be one of return_to_safety, ignore_warning, not_malicious"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRecord {
    pub verdict_id: VerdictId,
    pub tab_id: TabId,
    pub user_choice: OverrideChoice,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabState {
    pub tab_id: TabId,
    pub last_hash: Option<PerceptualHash>,
    /// Last verdict produced by inference; reused verdicts are not stored.
    pub last_verdict: Option<Verdict>,
    pub last_scan_at: Option<DateTime<Utc>>,
    /// A warning is pending; no scans until the user answers it.
    pub paused: bool,
    /// Verdict the user already answered. Reusing it does not warn again.
    pub acknowledged: Option<VerdictId>,
}

impl TabState {
    pub fn new(tab_id: TabId) -> Self {
        Self {
            tab_id,
            last_hash: None,
            last_verdict: None,
            last_scan_at: None,
            paused: false,
            acknowledged: None,
        }
    }
}

pub fn decide(state: &TabState, whitelisted: bool, new_hash: &PerceptualHash) -> DecisionCase {
    decide_with_threshold(state, whitelisted, new_hash, CHANGE_THRESHOLD)
}

pub fn decide_with_threshold(
    state: &TabState,
    whitelisted: bool,
    new_hash: &PerceptualHash,
    threshold: u32,
) -> DecisionCase {
    if whitelisted {
        return DecisionCase::Whitelisted;
    }
    match &state.last_hash {
        None => DecisionCase::FirstScan,
        Some(prev) if hamming_distance(prev, new_hash).0 >= threshold => DecisionCase::Changed,
        Some(_) => DecisionCase::Unchanged,
    }
}

/// Screenshot + OCR text classifier used by the scan cycle.
pub trait Classifier: Send + Sync {
    fn classify(&self, image: &NormalizedImage, text: &str) -> Result<Prediction>;
}

/// The dual-branch network with its vocabulary.
#[derive(Debug, Clone)]
pub struct ModelClassifier {
    pub params: Arc<ModelParams>,
    pub vocab: Arc<Vocabulary>,
}

impl ModelClassifier {
    pub fn new(params: ModelParams, vocab: Vocabulary) -> Self {
        Self {
            params: Arc::new(params),
            vocab: Arc::new(vocab),
        }
    }
}

impl Classifier for ModelClassifier {
    fn classify(&self, image: &NormalizedImage, text: &str) -> Result<Prediction> {
        Ok(predict(&self.params, image, &tokenize(text, &self.vocab)))
    }
}

/// Wraps a classifier and counts calls.
#[derive(Debug, Default)]
pub struct CountingClassifier<C> {
    pub inner: C,
    calls: AtomicUsize,
}

impl<C> CountingClassifier<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: Classifier> Classifier for CountingClassifier<C> {
    fn classify(&self, image: &NormalizedImage, text: &str) -> Result<Prediction> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.classify(image, text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub hamming_threshold: u32,
    pub ocr_strips: usize,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            hamming_threshold: CHANGE_THRESHOLD,
            ocr_strips: DEFAULT_STRIPS,
        }
    }
}

pub struct ScanDeps<'a> {
    pub whitelist: &'a WhitelistIndex,
    pub ocr: &'a dyn OcrEngine,
    pub classifier: &'a dyn Classifier,
    pub config: DecisionConfig,
}

#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub verdict: Verdict,
    /// Normalized screenshot, absent for whitelist hits.
    pub image: Option<NormalizedImage>,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// One scan of `tab`. On error the tab state is left untouched.
pub fn run_scan_cycle(
    tab: &mut TabState,
    screenshot: &RawScreenshot,
    deps: &ScanDeps<'_>,
    now: DateTime<Utc>,
    id: VerdictId,
) -> Result<CycleOutcome> {
    if tab.paused {
        return Err(Error::TabPaused(tab.tab_id.to_string()));
    }
    let start = Instant::now();
    let domain = screenshot.source_domain.clone();
    if deps.whitelist.contains(&domain) {
        tab.last_scan_at = Some(now);
        let verdict = Verdict {
            id,
            tab_id: tab.tab_id,
            domain,
            label: Classification::Benign,
            probability: 0.0,
            source: VerdictSource::Whitelist,
            decision_case: DecisionCase::Whitelisted,
            latency: StageLatency {
                total_ms: elapsed_ms(start),
                ..StageLatency::default()
            },
            created_at: now,
            phash: None,
            reused_from: None,
        };
        return Ok(CycleOutcome { verdict, image: None });
    }

    let mut latency = StageLatency::default();
    let t = Instant::now();
    let image = normalize_screenshot(screenshot)?;
    latency.normalize_ms = Some(elapsed_ms(t));
    let t = Instant::now();
    let hash = compute_phash(&image);
    latency.phash_ms = Some(elapsed_ms(t));
    let case = decide_with_threshold(tab, false, &hash, deps.config.hamming_threshold);

    let verdict = if case == DecisionCase::Unchanged {
        let stored = tab.last_verdict.as_ref().ok_or_else(|| {
            Error::invalid(format!("tab {} has a hash but no stored verdict", tab.tab_id))
        })?;
        latency.total_ms = elapsed_ms(start);
        Verdict {
            id,
            source: VerdictSource::Reused,
            decision_case: case,
            latency,
            created_at: now,
            reused_from: Some(stored.id),
            tab_id: tab.tab_id,
            ..stored.clone()
        }
    } else {
        let t = Instant::now();
        let text = extract_text_with(&image, deps.ocr, deps.config.ocr_strips)?;
        latency.ocr_ms = Some(elapsed_ms(t));
        let t = Instant::now();
        let pred = deps.classifier.classify(&image, &text.text)?;
        latency.model_ms = Some(elapsed_ms(t));
        latency.total_ms = elapsed_ms(start);
        Verdict {
            id,
            tab_id: tab.tab_id,
            domain,
            label: pred.label,
            probability: pred.probability,
            source: VerdictSource::Inference,
            decision_case: case,
            latency,
            created_at: now,
            phash: Some(hash.to_hex()),
            reused_from: None,
        }
    };

    tab.last_scan_at = Some(now);
    if verdict.source == VerdictSource::Inference {
        tab.last_hash = Some(hash);
        tab.last_verdict = Some(verdict.clone());
    }
    let answered = verdict.reused_from.is_some() && verdict.reused_from == tab.acknowledged;
    if verdict.label == Classification::Malicious && !answered {
        tab.paused = true;
    }
    Ok(CycleOutcome {
        verdict,
        image: Some(image),
    })
}

/// A stored verdict with the latest override for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    #[serde(flatten)]
    pub verdict: Verdict,
    #[serde(rename = "override")]
    pub override_record: Option<OverrideRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenderConfig {
    pub decision: DecisionConfig,
    /// Keep PNG copies of scanned screenshots.
    pub retain_screenshots: bool,
    /// Oldest screenshots are dropped beyond this many.
    pub max_screenshots: usize,
}

impl Default for DefenderConfig {
    fn default() -> Self {
        Self {
            decision: DecisionConfig::default(),
            retain_screenshots: false,
            max_screenshots: 256,
        }
    }
}

#[derive(Default)]
struct Store {
    verdicts: Vec<Verdict>,
    by_id: HashMap<VerdictId, usize>,
    overrides: Vec<OverrideRecord>,
    latest_override: HashMap<VerdictId, usize>,
}

/// Shared defend engine: one state per tab, an append-only verdict store
/// and the override log. Cycles on one tab are serialized; different tabs
/// may scan concurrently.
pub struct Defender {
    config: DefenderConfig,
    whitelist: WhitelistIndex,
    ocr: Arc<dyn OcrEngine>,
    classifier: RwLock<Arc<dyn Classifier>>,
    clock: Arc<dyn Clock>,
    tabs: Mutex<HashMap<TabId, Arc<Mutex<TabState>>>>,
    store: RwLock<Store>,
    screenshots: Mutex<VecDeque<(VerdictId, Vec<u8>)>>,
    latency: Mutex<LatencyLog>,
    next_id: AtomicU64,
}

impl Defender {
    pub fn new(
        whitelist: WhitelistIndex,
        ocr: Arc<dyn OcrEngine>,
        classifier: Arc<dyn Classifier>,
        clock: Arc<dyn Clock>,
        config: DefenderConfig,
    ) -> Self {
        Self {
            config,
            whitelist,
            ocr,
            classifier: RwLock::new(classifier),
            clock,
            tabs: Mutex::new(HashMap::new()),
            store: RwLock::new(Store::default()),
            screenshots: Mutex::new(VecDeque::new()),
            latency: Mutex::new(LatencyLog::default()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &DefenderConfig {
        &self.config
    }

    pub fn whitelist(&self) -> &WhitelistIndex {
        &self.whitelist
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Replaces the classifier. Cycles already running keep the old one.
    pub fn set_classifier(&self, classifier: Arc<dyn Classifier>) {
        *self.classifier.write().expect("classifier lock") = classifier;
    }

    fn tab(&self, tab: TabId) -> Arc<Mutex<TabState>> {
        self.tabs
            .lock()
            .expect("tabs lock")
            .entry(tab)
            .or_insert_with(|| Arc::new(Mutex::new(TabState::new(tab))))
            .clone()
    }

    pub fn tab_state(&self, tab: TabId) -> Option<TabState> {
        let t = self.tabs.lock().expect("tabs lock").get(&tab).cloned()?;
        let s = t.lock().expect("tab lock").clone();
        Some(s)
    }

    pub fn is_paused(&self, tab: TabId) -> bool {
        self.tab_state(tab).is_some_and(|s| s.paused)
    }

    pub fn scan(&self, tab: TabId, screenshot: &RawScreenshot) -> Result<Verdict> {
        let classifier = self.classifier.read().expect("classifier lock").clone();
        let deps = ScanDeps {
            whitelist: &self.whitelist,
            ocr: self.ocr.as_ref(),
            classifier: classifier.as_ref(),
            config: self.config.decision,
        };
        let state = self.tab(tab);
        let mut state = state.lock().expect("tab lock");
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let outcome = run_scan_cycle(&mut state, screenshot, &deps, self.clock.now(), id)?;
        drop(state);

        let verdict = outcome.verdict;
        if let (true, Some(img)) = (self.config.retain_screenshots, &outcome.image) {
            let png = pngio::encode_png(img.width(), img.height(), img.pixels())?;
            let mut shots = self.screenshots.lock().expect("screenshot lock");
            shots.push_back((verdict.id, png));
            while shots.len() > self.config.max_screenshots {
                shots.pop_front();
            }
        }
        self.latency.lock().expect("latency lock").record(&verdict.latency);
        let mut store = self.store.write().expect("store lock");
        let at = store.verdicts.len();
        store.by_id.insert(verdict.id, at);
        store.verdicts.push(verdict.clone());
        Ok(verdict)
    }

    pub fn record_override(&self, verdict_id: VerdictId, choice: OverrideChoice) -> Result<OverrideRecord> {
        let tab_id = {
            let store = self.store.read().expect("store lock");
            let &i = store
                .by_id
                .get(&verdict_id)
                .ok_or_else(|| Error::NotFound(format!("verdict {verdict_id}")))?;
            store.verdicts[i].tab_id
        };
        let record = OverrideRecord {
            verdict_id,
            tab_id,
            user_choice: choice,
            timestamp: self.clock.now(),
        };
        {
            let mut store = self.store.write().expect("store lock");
            let at = store.overrides.len();
            store.overrides.push(record.clone());
            store.latest_override.insert(verdict_id, at);
        }
        let state = self.tab(tab_id);
        let mut state = state.lock().expect("tab lock");
        state.paused = false;
        let answered = self.verdict(verdict_id).and_then(|v| v.reused_from).unwrap_or(verdict_id);
        state.acknowledged = Some(answered);
        Ok(record)
    }

    pub fn verdict(&self, id: VerdictId) -> Option<Verdict> {
        let store = self.store.read().expect("store lock");
        store.by_id.get(&id).map(|&i| store.verdicts[i].clone())
    }

    /// Verdicts created at or after `since`, oldest first.
    pub fn verdicts_since(&self, since: Option<DateTime<Utc>>) -> Vec<VerdictEntry> {
        let store = self.store.read().expect("store lock");
        store
            .verdicts
            .iter()
            .filter(|v| since.map_or(true, |s| v.created_at >= s))
            .map(|v| VerdictEntry {
                verdict: v.clone(),
                override_record: store.latest_override.get(&v.id).map(|&i| store.overrides[i].clone()),
            })
            .collect()
    }

    pub fn overrides(&self) -> Vec<OverrideRecord> {
        self.store.read().expect("store lock").overrides.clone()
    }

    pub fn screenshot_png(&self, id: VerdictId) -> Option<Vec<u8>> {
        let shots = self.screenshots.lock().expect("screenshot lock");
        shots.iter().find(|(v, _)| *v == id).map(|(_, png)| png.clone())
    }

    pub fn latency_report(&self) -> LatencyReport {
        self.latency.lock().expect("latency lock").report()
    }
}

/// Drives a [`Defender`] from a [`Scheduler`] on virtual time: each cycle
/// sets the clock to `epoch + at`, captures a screenshot and scans it. The
/// cycle is charged `cycle_cost` of virtual time.
pub struct DefenderDriver<'a, F> {
    pub defender: &'a Defender,
    pub clock: &'a VirtualClock,
    pub epoch: DateTime<Utc>,
    pub capture: F,
    pub cycle_cost: std::time::Duration,
    pub results: Vec<(TabId, Result<Verdict>)>,
}

impl<'a, F> DefenderDriver<'a, F>
where
    F: FnMut(TabId, std::time::Duration) -> RawScreenshot,
{
    pub fn new(defender: &'a Defender, clock: &'a VirtualClock, capture: F) -> Self {
        Self {
            defender,
            clock,
            epoch: clock.now(),
            capture,
            cycle_cost: std::time::Duration::from_millis(100),
            results: Vec::new(),
        }
    }
}

impl<F> ScanDriver for DefenderDriver<'_, F>
where
    F: FnMut(TabId, std::time::Duration) -> RawScreenshot,
{
    fn is_paused(&self, tab: TabId) -> bool {
        self.defender.is_paused(tab)
    }

    fn run_cycle(&mut self, tab: TabId, at: std::time::Duration) -> std::time::Duration {
        self.clock
            .set(self.epoch + chrono::Duration::from_std(at).expect("duration in range"));
        let shot = (self.capture)(tab, at);
        let r = self.defender.scan(tab, &shot);
        self.results.push((tab, r));
        self.cycle_cost
    }
}
