//! Per-stage latency samples and percentile summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Stage durations of one scan cycle in milliseconds. A stage that did not
/// run is `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub normalize_ms: Option<f64>,
    pub phash_ms: Option<f64>,
    pub ocr_ms: Option<f64>,
    pub model_ms: Option<f64>,
    pub total_ms: f64,
}

impl StageLatency {
    pub fn stages(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("normalize", self.normalize_ms),
            ("phash", self.phash_ms),
            ("ocr", self.ocr_ms),
            ("model", self.model_ms),
        ]
    }
}

/// Nearest-rank percentile of sorted data: the smallest value with at
/// least `p` percent of samples at or below it.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.max(1) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub count: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
    /// Raw samples in recording order.
    pub samples_ms: Vec<f64>,
}

impl StageSummary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            count: samples.len(),
            p50_ms: percentile(&sorted, 50.0)?,
            p95_ms: percentile(&sorted, 95.0)?,
            mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
            max_ms: *sorted.last()?,
            samples_ms: samples.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub cycles: usize,
    /// Whole-cycle latency; `None` before the first cycle.
    pub total: Option<StageSummary>,
    /// Only stages that ran at least once appear.
    pub stages: BTreeMap<String, StageSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct LatencyLog {
    total: Vec<f64>,
    stages: BTreeMap<&'static str, Vec<f64>>,
}

impl LatencyLog {
    pub fn record(&mut self, l: &StageLatency) {
        self.total.push(l.total_ms);
        for (name, v) in l.stages() {
            if let Some(v) = v {
                self.stages.entry(name).or_default().push(v);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn report(&self) -> LatencyReport {
        LatencyReport {
            cycles: self.total.len(),
            total: StageSummary::from_samples(&self.total),
            stages: self
                .stages
                .iter()
                .filter_map(|(k, v)| Some((k.to_string(), StageSummary::from_samples(v)?)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&s, 50.0), Some(10.0));
        assert_eq!(percentile(&s, 95.0), Some(19.0));
        assert_eq!(percentile(&s, 100.0), Some(20.0));
        assert_eq!(percentile(&s, 0.0), Some(1.0));
        assert_eq!(percentile(&[3.0], 95.0), Some(3.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn absent_stages_are_not_summarized() {
        let mut log = LatencyLog::default();
        assert_eq!(log.report().total, None);
        log.record(&StageLatency {
            total_ms: 0.1,
            ..Default::default()
        });
        log.record(&StageLatency {
            normalize_ms: Some(2.0),
            phash_ms: Some(1.0),
            total_ms: 3.0,
            ..Default::default()
        });
        let r = log.report();
        assert_eq!(r.cycles, 2);
        assert_eq!(r.stages.len(), 2);
        assert_eq!(r.stages["normalize"].count, 1);
        assert!(!r.stages.contains_key("model"));
    }
}
