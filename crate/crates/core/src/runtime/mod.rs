//! Dual-rate harness: a fast encoder loop publishing snapshots and a slow
//! planner loop consuming them.
//!
//! The simulated clock drives both loops from one logical timeline with
//! seeded synthetic step latencies, so its reports are bit-deterministic. The
//! wall clock runs the loops on two threads and measures real latencies.
//!
//! Overrun policy: a step that finishes after its tick deadline is logged as a
//! miss and the loop resumes at the next tick boundary. No sample is dropped.

mod cell;
mod report;

pub use cell::{snapshot_cell, stress_cell, CellRead, SnapshotReader, SnapshotWriter, StressReport};
pub use report::{read_report, write_histogram_csv, write_report, HistogramBucket, LatencyHistogram, QueryRecord, RunReport, REPORT_VERSION};

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encoder_step, snapshot, EncoderStreamState, EncoderWeights};
use crate::sim::{generate, LabeledTrajectory, ScenarioConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    Simulated,
    Wall,
}

impl std::str::FromStr for ClockKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulated" => Ok(Self::Simulated),
            "wall" => Ok(Self::Wall),
            _ => Err(Error::Config(format!("unknown clock {s} (simulated|wall)"))),
        }
    }
}

/// Step cost charged by the simulated clock: `base ± jitter`, uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticLatency {
    pub base_us: f64,
    pub jitter_us: f64,
    pub seed: u64,
}

impl Default for SyntheticLatency {
    fn default() -> Self {
        Self {
            base_us: 450.0,
            jitter_us: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub fast_hz: f64,
    pub slow_hz: f64,
    pub duration_s: f64,
    pub clock: ClockKind,
    pub latency: SyntheticLatency,
    /// Simulated runs abort once this many consecutive deadlines are exceeded.
    pub max_consecutive_misses: u32,
    pub histogram_bucket_us: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fast_hz: 100.0,
            slow_hz: 1.0,
            duration_s: 60.0,
            clock: ClockKind::Simulated,
            latency: SyntheticLatency::default(),
            max_consecutive_misses: 10,
            histogram_bucket_us: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.slow_hz > 0.0 && self.fast_hz > self.slow_hz && self.fast_hz.is_finite()) {
            return Err(Error::Config(format!(
                "rates must satisfy fast_hz > slow_hz > 0 (got {} / {})",
                self.fast_hz, self.slow_hz
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config("duration_s must be > 0".into()));
        }
        if !(self.latency.base_us >= 0.0 && self.latency.jitter_us >= 0.0 && self.latency.jitter_us <= self.latency.base_us) {
            return Err(Error::Config("synthetic latency needs 0 <= jitter_us <= base_us".into()));
        }
        if self.histogram_bucket_us == 0 {
            return Err(Error::Config("histogram_bucket_us must be >= 1".into()));
        }
        Ok(())
    }

    fn fast_ticks(&self) -> u64 {
        (self.duration_s * self.fast_hz).round() as u64
    }

    fn tick_ns(&self, k: u64) -> u64 {
        (k as f64 * 1e9 / self.fast_hz).round() as u64
    }

    fn period_ns(&self) -> u64 {
        (1e9 / self.fast_hz).round() as u64
    }

    /// First tick index starting at or after `ns`.
    fn tick_at_or_after(&self, ns: u64) -> u64 {
        let mut k = (ns as f64 * self.fast_hz / 1e9).floor() as u64;
        while self.tick_ns(k) < ns {
            k += 1;
        }
        k
    }

    /// Slow query `j` fires at the end of its planning period.
    fn query_ns(&self, j: u64) -> u64 {
        ((j + 1) as f64 * 1e9 / self.slow_hz).round() as u64
    }

    fn slow_queries(&self) -> u64 {
        (self.duration_s * self.slow_hz).round() as u64
    }
}

/// Where the fast loop's samples come from.
#[derive(Debug, Clone)]
pub enum SampleSource {
    /// Replays a recorded trajectory, wrapping around at the end.
    Trajectory { traj: LabeledTrajectory, pos: usize },
    /// Generates episodes on demand, bumping the seed after each one.
    Live {
        config: ScenarioConfig,
        current: LabeledTrajectory,
        pos: usize,
    },
}

impl SampleSource {
    pub fn trajectory(traj: LabeledTrajectory) -> Result<Self> {
        if traj.is_empty() {
            return Err(Error::Empty("source trajectory"));
        }
        Ok(Self::Trajectory { traj, pos: 0 })
    }

    pub fn live(config: ScenarioConfig) -> Result<Self> {
        let current = generate(&config)?;
        Ok(Self::Live { config, current, pos: 0 })
    }

    pub fn channels(&self) -> usize {
        match self {
            Self::Trajectory { traj, .. } => traj.channels,
            Self::Live { current, .. } => current.channels,
        }
    }

    fn next_into(&mut self, out: &mut [f32]) -> Result<()> {
        match self {
            Self::Trajectory { traj, pos } => {
                if *pos == traj.len() {
                    *pos = 0;
                }
                out.copy_from_slice(traj.sample(*pos));
                *pos += 1;
            }
            Self::Live { config, current, pos } => {
                if *pos == current.len() {
                    config.seed = config.seed.wrapping_add(1);
                    *current = generate(config)?;
                    *pos = 0;
                }
                out.copy_from_slice(current.sample(*pos));
                *pos += 1;
            }
        }
        Ok(())
    }
}

/// Stand-in for the planner: consumes `z_tac` and returns a scalar decision.
pub fn planner_stub(z: &[f32]) -> f32 {
    z.iter().map(|v| v * v).sum::<f32>().sqrt()
}

/// Runs both loops for `config.duration_s` and reports what happened.
pub fn run_dual_rate(weights: &EncoderWeights<f32>, source: SampleSource, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let ec = weights.config();
    if source.channels() != ec.channels {
        return Err(Error::shape("source channels", ec.channels, source.channels()));
    }
    match config.clock {
        ClockKind::Simulated => run_simulated(weights, source, config),
        ClockKind::Wall => run_wall(weights, source, config),
    }
}

struct FastLoop<'w> {
    weights: &'w EncoderWeights<f32>,
    state: EncoderStreamState<f32>,
    source: SampleSource,
    x: Vec<f32>,
    writer: SnapshotWriter,
}

impl FastLoop<'_> {
    fn tick(&mut self, stamp: impl FnOnce() -> u64) -> Result<()> {
        self.source.next_into(&mut self.x)?;
        encoder_step(&mut self.state, &self.x, self.weights)?;
        let snap = snapshot(&self.state, self.weights)?;
        self.writer.publish(&snap, stamp())
    }
}

fn setup(weights: &EncoderWeights<f32>, source: SampleSource) -> (FastLoop<'_>, SnapshotReader) {
    let ec = weights.config();
    let (writer, reader) = snapshot_cell(ec.hidden_dim(), ec.d_z);
    let fast = FastLoop {
        weights,
        state: EncoderStreamState::new(ec),
        x: vec![0.0; ec.channels],
        source,
        writer,
    };
    (fast, reader)
}

fn query(reader: &SnapshotReader, at_ns: u64) -> (Option<QueryRecord>, bool) {
    match reader.read_latest() {
        Ok(read) => {
            let torn = !read.snapshot.verify();
            let rec = QueryRecord {
                at_us: at_ns / 1000,
                snapshot_t: read.snapshot.t,
                staleness_ms: at_ns.saturating_sub(read.stamp_ns) as f64 / 1e6,
                decision: planner_stub(&read.snapshot.z),
            };
            (Some(rec), torn)
        }
        Err(_) => (None, false),
    }
}

fn run_simulated(weights: &EncoderWeights<f32>, source: SampleSource, config: &RunConfig) -> Result<RunReport> {
    let (mut fast, reader) = setup(weights, source);
    let mut rng = ChaCha8Rng::seed_from_u64(config.latency.seed);
    let mut report = RunReport::new(config);
    let ticks = config.fast_ticks();
    let period = config.period_ns();
    let (n_queries, mut next_query) = (config.slow_queries(), 0u64);
    let mut consecutive = 0u32;
    let mut k = 0u64;
    while k < ticks {
        let start = config.tick_ns(k);
        let lat = &config.latency;
        let cost_us = if lat.jitter_us > 0.0 {
            lat.base_us + rng.random_range(-lat.jitter_us..=lat.jitter_us)
        } else {
            lat.base_us
        };
        let end = start + (cost_us * 1000.0).round() as u64;
        // queries that fire before this step publishes see the previous snapshot
        while next_query < n_queries && config.query_ns(next_query) < end {
            report.record_query(query(&reader, config.query_ns(next_query)));
            next_query += 1;
        }
        fast.tick(|| end)?;
        report.record_step((end - start) / 1000);
        if end > start + period {
            report.record_miss(start / 1000);
            consecutive += 1;
            if consecutive > config.max_consecutive_misses {
                return Err(Error::DeadlineAbort(format!(
                    "{consecutive} consecutive misses ending at step {} (t = {:.1} ms): step latency {cost_us:.0} us exceeds the {} us period",
                    report.steps,
                    start as f64 / 1e6,
                    period / 1000
                )));
            }
        } else {
            consecutive = 0;
        }
        k = config.tick_at_or_after(end).max(k + 1);
    }
    while next_query < n_queries {
        report.record_query(query(&reader, config.query_ns(next_query)));
        next_query += 1;
    }
    report.finish();
    Ok(report)
}

fn sleep_until(base: Instant, ns: u64) {
    let target = base + Duration::from_nanos(ns);
    let now = Instant::now();
    if target > now {
        std::thread::sleep(target - now);
    }
}

fn run_wall(weights: &EncoderWeights<f32>, source: SampleSource, config: &RunConfig) -> Result<RunReport> {
    let (mut fast, reader) = setup(weights, source);
    let mut report = RunReport::new(config);
    let ticks = config.fast_ticks();
    let period = config.period_ns();
    let base = Instant::now();
    let since = move || base.elapsed().as_nanos() as u64;
    let queries = std::thread::scope(|scope| -> Result<Vec<(Option<QueryRecord>, bool)>> {
        let slow = scope.spawn(|| {
            (0..config.slow_queries())
                .map(|j| {
                    sleep_until(base, config.query_ns(j));
                    query(&reader, since())
                })
                .collect::<Vec<_>>()
        });
        let mut k = 0u64;
        while k < ticks {
            let start = config.tick_ns(k);
            sleep_until(base, start);
            let began = since();
            fast.tick(since)?;
            let end = since();
            report.record_step((end - began) / 1000);
            if end > start + period {
                report.record_miss(start / 1000);
            }
            k = config.tick_at_or_after(end).max(k + 1);
        }
        Ok(slow.join().expect("planner thread panicked"))
    })?;
    for q in queries {
        report.record_query(q);
    }
    report.finish();
    Ok(report)
}
