//! Latency, memory and accuracy comparisons against the reference encoders.
//!
//! Streaming kinds are warmed to history length `L` and then timed one step
//! at a time. Full-history kinds are timed per query over `L` samples, with a
//! repetition count bounded by a time budget since a single long attention
//! query takes seconds.

mod alloc;

pub use alloc::{live_bytes, peak_since, reset_peak, tracking_active, CountingAlloc};

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_query_full, baseline_step, Baseline, BaselineKind, BaselineState};
use crate::encoder::{encoder_step, EncoderConfig, EncoderStreamState, EncoderWeights};
use crate::sim::{generate_batch, ScenarioConfig};
use crate::train::{pretrain_stage1, PairEncoder, Stage1Config};
use crate::{Error, Result};

pub const LATENCY_CSV_HEADER: &str = "kind,length,median_us,p99_us,peak_bytes";
pub const DEFAULT_LENGTHS: [usize; 5] = [100, 500, 1000, 2000, 5000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Tacmamba,
    Cnn1d,
    LstmSingle,
    LstmBiFull,
    AttnFull,
}

impl BenchKind {
    pub const ALL: [BenchKind; 5] = [Self::Tacmamba, Self::Cnn1d, Self::LstmSingle, Self::LstmBiFull, Self::AttnFull];

    pub fn tag(self) -> &'static str {
        match self.baseline() {
            None => "tacmamba",
            Some(b) => b.tag(),
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Self::Tacmamba => None,
            Self::Cnn1d => Some(BaselineKind::Cnn1d),
            Self::LstmSingle => Some(BaselineKind::LstmSingle),
            Self::LstmBiFull => Some(BaselineKind::LstmBiFull),
            Self::AttnFull => Some(BaselineKind::AttnFull),
        }
    }

    pub fn is_streaming(self) -> bool {
        self.baseline().is_none_or(BaselineKind::is_streaming)
    }
}

impl std::str::FromStr for BenchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown benchmark kind {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    pub kinds: Vec<BenchKind>,
    pub lengths: Vec<usize>,
    /// Timed steps per streaming cell.
    pub streaming_reps: usize,
    pub full_min_reps: usize,
    pub full_max_reps: usize,
    /// Stop adding full-history repetitions after this much time per cell.
    pub full_budget_s: f64,
    pub channels: usize,
    pub seed: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            kinds: BenchKind::ALL.to_vec(),
            lengths: DEFAULT_LENGTHS.to_vec(),
            streaming_reps: 1000,
            full_min_reps: 3,
            full_max_reps: 200,
            full_budget_s: 2.0,
            channels: 1,
            seed: 0,
        }
    }
}

impl LatencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() || self.lengths.is_empty() {
            return Err(Error::Config("benchmark grid is empty".into()));
        }
        if self.lengths.contains(&0) {
            return Err(Error::Config("history lengths must be >= 1".into()));
        }
        if self.streaming_reps == 0 || self.full_min_reps == 0 || self.full_max_reps < self.full_min_reps {
            return Err(Error::Config("need streaming_reps >= 1 and 1 <= full_min_reps <= full_max_reps".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub kind: BenchKind,
    pub length: usize,
    pub median_us: f64,
    pub p99_us: f64,
    /// Peak heap growth while building the state and running the timed calls.
    pub peak_bytes: usize,
}

/// Value at quantile `q` of `v`, nearest rank.
pub fn quantile(v: &mut [f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)]
}

fn signal(len: usize, channels: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len * channels)
        .map(|i| (i as f32 * 0.05).sin() * 2.0 + rng.random_range(-0.1..0.1))
        .collect()
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

enum Streamer<'m> {
    Tac(&'m EncoderWeights<f32>, EncoderStreamState<f32>),
    Base(&'m Baseline, BaselineState),
}

impl Streamer<'_> {
    fn step(&mut self, x: &[f32]) -> Result<()> {
        match self {
            Self::Tac(w, s) => encoder_step(s, x, w).map(|_| ()),
            Self::Base(m, s) => baseline_step(m, s, x).map(|_| ()),
        }
    }
}

/// One row per `(kind, length)` of the grid, kinds one at a time.
pub fn bench_latency(cfg: &LatencyConfig) -> Result<Vec<LatencyRow>> {
    cfg.validate()?;
    let c = cfg.channels;
    let max_len = *cfg.lengths.iter().max().expect("validated");
    let x = signal(max_len + cfg.streaming_reps, c, cfg.seed);
    let enc = EncoderWeights::<f32>::init(&EncoderConfig {
        channels: c,
        seed: cfg.seed,
        ..EncoderConfig::default()
    })?;
    let mut rows = Vec::new();
    for &kind in &cfg.kinds {
        let model = kind.baseline().map(|b| Baseline::init(b, c, cfg.seed)).transpose()?;
        if kind.is_streaming() {
            rows.extend(bench_streaming(kind, model.as_ref(), &enc, &x, cfg)?);
            continue;
        }
        let m = model.as_ref().expect("full kinds are baselines");
        for &len in &cfg.lengths {
            let base = reset_peak();
            let mut times = Vec::new();
            let hist = &x[..len * c];
            let budget = Duration::from_secs_f64(cfg.full_budget_s);
            let started = Instant::now();
            while times.len() < cfg.full_min_reps || (times.len() < cfg.full_max_reps && started.elapsed() < budget) {
                let t0 = Instant::now();
                std::hint::black_box(baseline_query_full(m, hist)?);
                times.push(micros(t0.elapsed()));
            }
            rows.push(finish_row(kind, len, times, peak_since(base)));
        }
    }
    Ok(rows)
}

fn finish_row(kind: BenchKind, length: usize, mut times: Vec<f64>, peak_bytes: usize) -> LatencyRow {
    let row = LatencyRow {
        kind,
        length,
        median_us: quantile(&mut times, 0.5),
        p99_us: quantile(&mut times, 0.99),
        peak_bytes,
    };
    log::info!("{} L={} median {:.1} us over {} reps", kind.tag(), length, row.median_us, times.len());
    row
}

/// Warms one state per length, then times steps in rounds across all lengths
/// so slow periods of the machine spread evenly over the grid.
fn bench_streaming(
    kind: BenchKind,
    model: Option<&Baseline>,
    enc: &EncoderWeights<f32>,
    x: &[f32],
    cfg: &LatencyConfig,
) -> Result<Vec<LatencyRow>> {
    const ROUNDS: usize = 10;
    let c = cfg.channels;
    let mut cells = Vec::with_capacity(cfg.lengths.len());
    for &len in &cfg.lengths {
        let base = reset_peak();
        let mut s = match model {
            None => Streamer::Tac(enc, EncoderStreamState::new(enc.config())),
            Some(m) => Streamer::Base(m, BaselineState::new(m)?),
        };
        for t in 0..len {
            s.step(&x[t * c..(t + 1) * c])?;
        }
        let peak = peak_since(base);
        cells.push((len, s, len, Vec::with_capacity(cfg.streaming_reps), peak));
    }
    for round in 0..ROUNDS {
        let quota = cfg.streaming_reps * (round + 1) / ROUNDS - cfg.streaming_reps * round / ROUNDS;
        for (_, s, t, times, peak) in cells.iter_mut() {
            let base = reset_peak();
            for _ in 0..quota {
                let xt = &x[*t * c..(*t + 1) * c];
                let t0 = Instant::now();
                s.step(xt)?;
                times.push(micros(t0.elapsed()));
                *t += 1;
            }
            *peak = (*peak).max(peak_since(base));
        }
    }
    Ok(cells
        .into_iter()
        .map(|(len, _, _, times, peak)| finish_row(kind, len, times, peak))
        .collect())
}

/// `median(kind @ num) / median(kind @ den)` when both cells exist.
pub fn latency_ratio(rows: &[LatencyRow], kind: BenchKind, num: usize, den: usize) -> Option<f64> {
    let get = |l| rows.iter().find(|r| r.kind == kind && r.length == l).map(|r| r.median_us);
    Some(get(num)? / get(den)?)
}

/// True when the medians of `kind` strictly increase with length.
pub fn strictly_increasing(rows: &[LatencyRow], kind: BenchKind) -> bool {
    let mut v: Vec<(usize, f64)> = rows.iter().filter(|r| r.kind == kind).map(|r| (r.length, r.median_us)).collect();
    v.sort_by_key(|p| p.0);
    v.windows(2).all(|w| w[1].1 > w[0].1)
}

pub fn write_latency_csv(rows: &[LatencyRow], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(latency_csv(rows).as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn latency_csv(rows: &[LatencyRow]) -> String {
    let mut s = format!("{LATENCY_CSV_HEADER}\n");
    for r in rows {
        s += &format!("{},{},{:.3},{:.3},{}\n", r.kind.tag(), r.length, r.median_us, r.p99_us, r.peak_bytes);
    }
    s
}

pub fn read_latency_csv(path: impl AsRef<Path>) -> Result<Vec<LatencyRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut offset = 0u64;
    match lines.next() {
        Some(h) if h == LATENCY_CSV_HEADER => offset += h.len() as u64 + 1,
        _ => {
            return Err(Error::Parse {
                offset: 0,
                msg: format!("expected header {LATENCY_CSV_HEADER}"),
            })
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        let bad = |msg: &str| Error::Parse {
            offset,
            msg: format!("{msg}: {line}"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        rows.push(LatencyRow {
            kind: f[0].parse()?,
            length: f[1].parse().map_err(|_| bad("bad length"))?,
            median_us: f[2].parse().map_err(|_| bad("bad median"))?,
            p99_us: f[3].parse().map_err(|_| bad("bad p99"))?,
            peak_bytes: f[4].parse().map_err(|_| bad("bad peak"))?,
        });
        offset += line.len() as u64 + 1;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccuracyConfig {
    pub trajectories: usize,
    pub scenario: ScenarioConfig,
    pub encoder: EncoderConfig,
    pub stage1: Stage1Config,
    pub seed: u64,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        Self {
            trajectories: 60,
            scenario: ScenarioConfig::default(),
            encoder: EncoderConfig::default(),
            stage1: Stage1Config {
                steps: 300,
                trajectories_per_step: 1,
                eval_every: 50,
                ..Stage1Config::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub kind: BenchKind,
    pub params: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub heldout_accuracy: f64,
    pub train_seconds: f64,
}

fn accuracy_row<E: PairEncoder>(kind: BenchKind, model: E, data: &[crate::sim::LabeledTrajectory], cfg: &Stage1Config) -> Result<AccuracyRow> {
    let params = model.params().len();
    let t0 = Instant::now();
    let out = pretrain_stage1(data, model, cfg)?;
    Ok(AccuracyRow {
        kind,
        params,
        steps: out.steps,
        initial_loss: out.initial_loss,
        final_loss: out.log.last().map_or(f64::NAN, |r| r.loss),
        heldout_accuracy: out.heldout_accuracy,
        train_seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Trains TacMamba and `lstm_single` on identical data and pair schedules.
pub fn bench_accuracy(cfg: &AccuracyConfig) -> Result<Vec<AccuracyRow>> {
    if cfg.trajectories < 2 {
        return Err(Error::Config("bench-accuracy needs at least 2 trajectories".into()));
    }
    let scenario = ScenarioConfig {
        seed: cfg.seed,
        channels: cfg.encoder.channels,
        ..cfg.scenario.clone()
    };
    let data = generate_batch(&scenario, cfg.trajectories)?;
    let stage1 = Stage1Config {
        seed: cfg.seed,
        ..cfg.stage1.clone()
    };
    let enc = EncoderWeights::<f32>::init(&EncoderConfig {
        seed: cfg.seed,
        ..cfg.encoder
    })?;
    let lstm = Baseline::init(BaselineKind::LstmSingle, cfg.encoder.channels, cfg.seed)?;
    Ok(vec![
        accuracy_row(BenchKind::Tacmamba, enc, &data, &stage1)?,
        accuracy_row(BenchKind::LstmSingle, lstm, &data, &stage1)?,
    ])
}
