//! Fixed-interval scan timer over a virtual clock.
//!
//! Every tab has its own timer firing at `k * interval` (k >= 1) after it
//! is added. A tick starts a cycle unless the tab is paused or its previous
//! cycle is still running; skipped ticks are not replayed.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::TabId;

/// Default scan period.
pub const SCAN_INTERVAL: Duration = Duration::from_secs(5);

/// Source of "now" for verdict timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Manually advanced clock.
#[derive(Debug)]
pub struct VirtualClock {
    now: Mutex<DateTime<Utc>>,
}

impl VirtualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self { now: Mutex::new(start) }
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.now.lock().expect("clock lock") = at;
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.now.lock().expect("clock lock");
        *now += chrono::Duration::from_std(by).expect("duration in range");
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().expect("clock lock")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Paused,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanEvent {
    Cycle {
        tab: TabId,
        started: Duration,
        finished: Duration,
    },
    Skipped {
        tab: TabId,
        at: Duration,
        reason: SkipReason,
    },
}

/// What the scheduler drives.
pub trait ScanDriver {
    fn is_paused(&self, tab: TabId) -> bool;
    /// Runs one cycle starting at `at` and returns its duration.
    fn run_cycle(&mut self, tab: TabId, at: Duration) -> Duration;
}

#[derive(Debug, Clone)]
struct TabTimer {
    next_tick: Duration,
    busy_until: Duration,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    interval: Duration,
    now: Duration,
    tabs: BTreeMap<TabId, TabTimer>,
}

impl Scheduler {
    /// Panics on a zero interval.
    pub fn new(interval: Duration) -> Self {
        assert!(!interval.is_zero(), "scan interval must be positive");
        Self {
            interval,
            now: Duration::ZERO,
            tabs: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    pub fn add_tab(&mut self, tab: TabId) {
        let next_tick = self.now + self.interval;
        self.tabs.entry(tab).or_insert(TabTimer {
            next_tick,
            busy_until: self.now,
        });
    }

    pub fn remove_tab(&mut self, tab: TabId) -> bool {
        self.tabs.remove(&tab).is_some()
    }

    /// Processes every tick up to and including `end`. Ticks are handled in
    /// time order, ties by tab id. A cycle that started by `end` is reported
    /// even if it finishes later.
    pub fn run_until(&mut self, end: Duration, driver: &mut dyn ScanDriver) -> Vec<ScanEvent> {
        let mut events = Vec::new();
        loop {
            let Some((&tab, timer)) = self
                .tabs
                .iter()
                .filter(|(_, t)| t.next_tick <= end)
                .min_by_key(|(&id, t)| (t.next_tick, id))
            else {
                break;
            };
            let at = timer.next_tick;
            let busy = timer.busy_until > at;
            self.now = at;
            if driver.is_paused(tab) {
                events.push(ScanEvent::Skipped {
                    tab,
                    at,
                    reason: SkipReason::Paused,
                });
            } else if busy {
                events.push(ScanEvent::Skipped {
                    tab,
                    at,
                    reason: SkipReason::Busy,
                });
            } else {
                let took = driver.run_cycle(tab, at);
                let finished = at + took;
                self.tabs.get_mut(&tab).expect("tab").busy_until = finished;
                events.push(ScanEvent::Cycle {
                    tab,
                    started: at,
                    finished,
                });
            }
            self.tabs.get_mut(&tab).expect("tab").next_tick = at + self.interval;
        }
        self.now = self.now.max(end);
        events
    }
}

/// Cycles that finished by `end`.
pub fn completed_cycles(events: &[ScanEvent], tab: TabId, end: Duration) -> usize {
    events
        .iter()
        .filter(|e| matches!(e, ScanEvent::Cycle { tab: t, finished, .. } if *t == tab && *finished <= end))
        .count()
}
