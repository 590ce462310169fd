//! Run report (JSON) and latency histogram (CSV).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClockKind, RunConfig};
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub at_us: u64,
    pub snapshot_t: u64,
    pub staleness_ms: f64,
    /// Planner stub output for the snapshot's soft prompt.
    pub decision: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Inclusive lower edge.
    pub lower_us: u64,
    pub count: u64,
}

/// Fixed-width buckets; only non-empty buckets are listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    pub bucket_us: u64,
    pub buckets: Vec<HistogramBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub clock: ClockKind,
    pub fast_hz: f64,
    pub slow_hz: f64,
    pub duration_s: f64,
    pub steps: u64,
    pub deadline_misses: u64,
    /// Tick start of every missed step.
    pub miss_times_us: Vec<u64>,
    pub slow_queries: u64,
    /// Queries issued before the first publication.
    pub empty_queries: u64,
    pub torn_reads: u64,
    pub latency_median_us: u64,
    pub latency_p99_us: u64,
    pub latency_max_us: u64,
    pub max_staleness_ms: f64,
    pub histogram: LatencyHistogram,
    pub queries: Vec<QueryRecord>,
    #[serde(skip)]
    latencies: Vec<u64>,
    #[serde(skip)]
    counts: BTreeMap<u64, u64>,
}

impl RunReport {
    pub(super) fn new(config: &RunConfig) -> Self {
        Self {
            version: REPORT_VERSION,
            clock: config.clock,
            fast_hz: config.fast_hz,
            slow_hz: config.slow_hz,
            duration_s: config.duration_s,
            steps: 0,
            deadline_misses: 0,
            miss_times_us: Vec::new(),
            slow_queries: 0,
            empty_queries: 0,
            torn_reads: 0,
            latency_median_us: 0,
            latency_p99_us: 0,
            latency_max_us: 0,
            max_staleness_ms: 0.0,
            histogram: LatencyHistogram {
                bucket_us: config.histogram_bucket_us,
                buckets: Vec::new(),
            },
            queries: Vec::new(),
            latencies: Vec::with_capacity(config.fast_ticks() as usize),
            counts: BTreeMap::new(),
        }
    }

    pub(super) fn record_step(&mut self, latency_us: u64) {
        self.steps += 1;
        self.latencies.push(latency_us);
        let w = self.histogram.bucket_us;
        *self.counts.entry(latency_us / w * w).or_default() += 1;
    }

    pub(super) fn record_miss(&mut self, at_us: u64) {
        self.deadline_misses += 1;
        self.miss_times_us.push(at_us);
    }

    pub(super) fn record_query(&mut self, (rec, torn): (Option<QueryRecord>, bool)) {
        self.slow_queries += 1;
        self.torn_reads += torn as u64;
        match rec {
            Some(r) => {
                self.max_staleness_ms = self.max_staleness_ms.max(r.staleness_ms);
                self.queries.push(r);
            }
            None => self.empty_queries += 1,
        }
    }

    pub(super) fn finish(&mut self) {
        let mut l = self.latencies.clone();
        l.sort_unstable();
        let pick = |q: f64| {
            if l.is_empty() {
                0
            } else {
                l[((q * (l.len() - 1) as f64).round() as usize).min(l.len() - 1)]
            }
        };
        self.latency_median_us = pick(0.5);
        self.latency_p99_us = pick(0.99);
        self.latency_max_us = l.last().copied().unwrap_or(0);
        self.histogram.buckets = self
            .counts
            .iter()
            .map(|(&lower_us, &count)| HistogramBucket { lower_us, count })
            .collect();
    }

    /// Fraction of steps that missed their deadline.
    pub fn miss_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.deadline_misses as f64 / self.steps as f64
        }
    }
}

pub fn write_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let r: RunReport = serde_json::from_slice(&std::fs::read(path)?)?;
    if r.version != REPORT_VERSION {
        return Err(Error::Version {
            found: r.version,
            expected: REPORT_VERSION,
        });
    }
    Ok(r)
}

/// `bucket_us,count` rows, one per non-empty bucket.
pub fn write_histogram_csv(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "bucket_us,count")?;
    for b in &report.histogram.buckets {
        writeln!(f, "{},{}", b.lower_us, b.count)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_and_buckets() {
        let mut r = RunReport::new(&RunConfig::default());
        for v in [5, 12, 14, 30, 1000] {
            r.record_step(v);
        }
        r.finish();
        assert_eq!(r.latency_median_us, 14);
        assert_eq!(r.latency_max_us, 1000);
        let b: Vec<_> = r.histogram.buckets.iter().map(|b| (b.lower_us, b.count)).collect();
        assert_eq!(b, vec![(0, 1), (10, 2), (30, 1), (1000, 1)]);
    }

    #[test]
    fn json_and_csv_roundtrip() {
        let mut r = RunReport::new(&RunConfig::default());
        r.record_step(7);
        r.record_query((None, false));
        r.finish();
        let dir = tempfile::tempdir().unwrap();
        write_report(&r, dir.path().join("r.json")).unwrap();
        let back = read_report(dir.path().join("r.json")).unwrap();
        assert_eq!(back.histogram, r.histogram);
        assert_eq!(back.empty_queries, 1);
        write_histogram_csv(&r, dir.path().join("h.csv")).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("h.csv")).unwrap(), "bucket_us,count\n0,1\n");
    }
}
