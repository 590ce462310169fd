//! Synthetic single-axis tactile trajectories.
//!
//! A scenario is rendered as a timeline of phases (idle, approach, ramp, snap,
//! hold, transport, release). The contact force of each phase follows a simple
//! parametric template; the sensor reading is the region gain times the force,
//! plus white Gaussian noise and a linear drift. Button clicks appear as an
//! instantaneous force drop followed by a damped vibration.

mod io;

pub use io::{read_trajectory, sidecar_path, write_trajectory, Sidecar, TRAJECTORY_MAGIC, TRAJECTORY_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Upper end of the characterized load range (N).
pub const MAX_LOAD_N: f32 = 10.0;

/// Minimum idle lead-in, long enough for noise-floor estimation.
pub const MIN_LEAD_IN_S: f32 = 0.6;
const MIN_TAIL_S: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ButtonPress,
    SequentialButtons,
    PickPlaceCounting,
    IdleHold,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "button_press" => Ok(Self::ButtonPress),
            "sequential_buttons" => Ok(Self::SequentialButtons),
            "pick_place_counting" => Ok(Self::PickPlaceCounting),
            "idle_hold" => Ok(Self::IdleHold),
            other => Err(Error::Config(format!("unknown scenario {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    #[default]
    Fingertip,
    Fingerpad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Number of presses for `sequential_buttons`.
    pub presses: usize,
    /// Number of grasp/transport/release cycles for `pick_place_counting`.
    pub cycles: usize,
    pub channels: usize,
    pub rate_hz: f32,
    pub duration_s: f32,
    pub peak_force: f32,
    pub snap_drop: f32,
    pub vibration_amp: f32,
    pub vibration_hz: f32,
    pub vibration_tau_s: f32,
    pub noise_std: f32,
    pub drift_per_s: f32,
    pub region: Region,
    pub gain_tip: f32,
    pub gain_pad: f32,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::ButtonPress,
            presses: 3,
            cycles: 3,
            channels: 1,
            rate_hz: 100.0,
            duration_s: 10.0,
            peak_force: 4.0,
            snap_drop: 1.5,
            vibration_amp: 0.4,
            vibration_hz: 15.0,
            vibration_tau_s: 0.05,
            noise_std: 0.02,
            drift_per_s: 0.002,
            region: Region::Fingertip,
            gain_tip: 1.0,
            gain_pad: 1.6,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.rate_hz > 0.0) {
            return bad("rate_hz must be > 0");
        }
        if !(self.duration_s > 0.0) {
            return bad("duration_s must be > 0");
        }
        if self.channels == 0 {
            return bad("channels must be >= 1");
        }
        if !(self.peak_force > self.snap_drop && self.snap_drop >= 0.0) {
            return bad("require peak_force > snap_drop >= 0");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be >= 0");
        }
        if !(self.gain_pad > self.gain_tip && self.gain_tip > 0.0) {
            return bad("require gain_pad > gain_tip > 0");
        }
        if self.kind == ScenarioKind::SequentialButtons && self.presses == 0 {
            return bad("presses must be >= 1");
        }
        if self.kind == ScenarioKind::PickPlaceCounting && self.cycles == 0 {
            return bad("cycles must be >= 1");
        }
        Ok(())
    }

    pub fn gain(&self, region: Region) -> f32 {
        match region {
            Region::Fingertip => self.gain_tip,
            Region::Fingerpad => self.gain_pad,
        }
    }

    pub fn samples(&self) -> usize {
        (self.rate_hz * self.duration_s).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Idle,
    Approach,
    Ramp,
    Snap,
    Hold,
    Transport,
    Release,
    /// Produced by segmentation: a stretch of large force gradient.
    Contact,
}

impl PhaseKind {
    pub const GROUND_TRUTH: [PhaseKind; 7] = [
        PhaseKind::Idle,
        PhaseKind::Approach,
        PhaseKind::Ramp,
        PhaseKind::Snap,
        PhaseKind::Hold,
        PhaseKind::Transport,
        PhaseKind::Release,
    ];

    /// Class index among [`Self::GROUND_TRUTH`].
    pub fn class_index(self) -> Option<usize> {
        Self::GROUND_TRUTH.iter().position(|&k| k == self)
    }

    /// Phases in which the contact force changes quickly.
    pub fn is_dynamic(self) -> bool {
        matches!(self, PhaseKind::Ramp | PhaseKind::Snap | PhaseKind::Release | PhaseKind::Contact)
    }

    /// Transient phases that carry the task-critical information.
    pub fn is_critical(self) -> bool {
        matches!(self, PhaseKind::Snap | PhaseKind::Release)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub kind: PhaseKind,
}

impl PhaseSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Click,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t: usize,
    pub kind: EventKind,
}

/// Force samples with ground-truth phases and event markers.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    /// (T, C) channel-interleaved readings.
    pub samples: Vec<f32>,
    pub channels: usize,
    pub rate_hz: f32,
    /// Contiguous phases covering `[0, T)`; empty for unlabeled data.
    pub phases: Vec<PhaseSpan>,
    pub events: Vec<Event>,
}

impl LabeledTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    /// All channels at timestep `t`.
    pub fn sample(&self, t: usize) -> &[f32] {
        &self.samples[t * self.channels..(t + 1) * self.channels]
    }

    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.samples.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Phase kind and phase index of every sample.
    pub fn labels(&self) -> Vec<(PhaseKind, usize)> {
        let mut out = Vec::with_capacity(self.len());
        for (i, p) in self.phases.iter().enumerate() {
            out.extend(std::iter::repeat_n((p.kind, i), p.len()));
        }
        out
    }

    /// Number of events strictly before `t`.
    pub fn events_before(&self, t: usize) -> usize {
        self.events.iter().filter(|e| e.t < t).count()
    }

    /// Start indices of ground-truth dynamic stretches that follow a quiet one.
    pub fn contact_onsets(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev_dynamic = false;
        for p in &self.phases {
            let d = p.kind.is_dynamic();
            if d && !prev_dynamic {
                out.push(p.start);
            }
            prev_dynamic = d;
        }
        out
    }

    /// Fraction of samples that lie in critical phases.
    pub fn critical_fraction(&self) -> f64 {
        let n: usize = self.phases.iter().filter(|p| p.kind.is_critical()).map(PhaseSpan::len).sum();
        n as f64 / self.len().max(1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.samples.len().is_multiple_of(self.channels) {
            return Err(Error::Config("sample count not a multiple of channels".into()));
        }
        if self.phases.is_empty() {
            return Ok(());
        }
        let mut at = 0;
        for p in &self.phases {
            if p.start != at || p.end <= p.start {
                return Err(Error::Config(format!("phase labels not contiguous at {at}")));
            }
            at = p.end;
        }
        if at != self.len() {
            return Err(Error::Config(format!("phase labels cover {at} of {} samples", self.len())));
        }
        Ok(())
    }
}

/// Output of the linear pressure–load map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub value: f32,
    /// Set when the applied force was outside `[0, MAX_LOAD_N]` and was clamped.
    pub clamped: bool,
}

/// `reading = gain(region) · force` over the characterized load range.
pub fn pressure_map(force: f32, region: Region, config: &ScenarioConfig) -> SensorReading {
    let clamped_force = force.clamp(0.0, MAX_LOAD_N);
    SensorReading {
        value: config.gain(region) * clamped_force,
        clamped: clamped_force != force,
    }
}

struct Timeline {
    segs: Vec<(PhaseKind, usize)>,
}

impl Timeline {
    fn len(&self) -> usize {
        self.segs.iter().map(|s| s.1).sum()
    }
}

fn secs(rate: f32, s: f32) -> usize {
    ((s * rate).round() as usize).max(1)
}

fn jitter(rng: &mut ChaCha8Rng) -> f32 {
    rng.random_range(0.8..1.2)
}

fn press_block(rng: &mut ChaCha8Rng, rate: f32) -> Vec<(PhaseKind, usize)> {
    vec![
        (PhaseKind::Approach, secs(rate, 0.3 * jitter(rng))),
        (PhaseKind::Ramp, secs(rate, 0.25 * jitter(rng))),
        (PhaseKind::Snap, secs(rate, 0.1)),
        (PhaseKind::Hold, secs(rate, 0.6 * jitter(rng))),
        (PhaseKind::Release, secs(rate, 0.15 * jitter(rng))),
    ]
}

fn pick_block(rng: &mut ChaCha8Rng, rate: f32) -> Vec<(PhaseKind, usize)> {
    vec![
        (PhaseKind::Approach, secs(rate, 0.4 * jitter(rng))),
        (PhaseKind::Ramp, secs(rate, 0.2 * jitter(rng))),
        (PhaseKind::Transport, secs(rate, 1.0 * jitter(rng))),
        (PhaseKind::Release, secs(rate, 0.15 * jitter(rng))),
    ]
}

/// Phases of one press or cycle with their lengths in samples.
type Block = Vec<(PhaseKind, usize)>;

fn build_timeline(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Timeline> {
    let rate = cfg.rate_hz;
    let total = cfg.samples();
    let (blocks, gap): (Vec<Block>, (f32, f32)) = match cfg.kind {
        ScenarioKind::IdleHold => {
            return Ok(Timeline {
                segs: vec![(PhaseKind::Idle, total)],
            })
        }
        ScenarioKind::ButtonPress => (vec![press_block(rng, rate)], (0.0, 0.0)),
        ScenarioKind::SequentialButtons => ((0..cfg.presses).map(|_| press_block(rng, rate)).collect(), (0.5, 1.5)),
        ScenarioKind::PickPlaceCounting => ((0..cfg.cycles).map(|_| pick_block(rng, rate)).collect(), (0.5, 1.0)),
    };
    let gaps: Vec<usize> = (1..blocks.len()).map(|_| secs(rate, rng.random_range(gap.0..=gap.1))).collect();
    let lead_min = secs(rate, MIN_LEAD_IN_S);
    let tail_min = secs(rate, MIN_TAIL_S);
    let body: usize = blocks.iter().flatten().map(|s| s.1).sum::<usize>() + gaps.iter().sum::<usize>();
    let needed = lead_min + body + tail_min;
    if total < needed {
        return Err(Error::Config(format!(
            "duration {:.2} s is shorter than the {:.2} s phase template",
            cfg.duration_s,
            needed as f32 / rate
        )));
    }
    let slack = total - needed;
    let lead = lead_min + rng.random_range(0..=slack);
    let mut segs = vec![(PhaseKind::Idle, lead)];
    for (i, b) in blocks.into_iter().enumerate() {
        if i > 0 {
            segs.push((PhaseKind::Idle, gaps[i - 1]));
        }
        segs.extend(b);
    }
    let used: usize = segs.iter().map(|s| s.1).sum();
    segs.push((PhaseKind::Idle, total - used));
    Ok(Timeline { segs })
}

/// Renders a scenario. Deterministic for a fixed config (including its seed).
pub fn generate(cfg: &ScenarioConfig) -> Result<LabeledTrajectory> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let timeline = build_timeline(cfg, &mut rng)?;
    let total = timeline.len();
    let rate = cfg.rate_hz;
    let mut force = vec![0.0f32; total];
    let mut phases = Vec::with_capacity(timeline.segs.len());
    let mut events = Vec::new();
    let mut level = 0.0f32;
    let mut peak = cfg.peak_force;
    let mut snap_at: Option<usize> = None;
    let mut at = 0;
    for &(kind, len) in &timeline.segs {
        match kind {
            PhaseKind::Idle | PhaseKind::Approach => level = 0.0,
            PhaseKind::Ramp => {
                peak = cfg.peak_force * rng.random_range(0.9..1.1);
                if cfg.kind == ScenarioKind::PickPlaceCounting {
                    peak *= 0.6;
                }
            }
            PhaseKind::Snap => {
                snap_at = Some(at);
                events.push(Event {
                    t: at,
                    kind: EventKind::Click,
                });
            }
            PhaseKind::Release if cfg.kind == ScenarioKind::PickPlaceCounting => events.push(Event {
                t: at,
                kind: EventKind::Release,
            }),
            _ => {}
        }
        let start_level = level;
        for k in 0..len {
            let frac = (k + 1) as f32 / len as f32;
            level = match kind {
                PhaseKind::Idle | PhaseKind::Approach | PhaseKind::Contact => 0.0,
                PhaseKind::Ramp => peak * frac,
                PhaseKind::Snap | PhaseKind::Hold => peak - cfg.snap_drop,
                PhaseKind::Transport => {
                    let ts = k as f32 / rate;
                    peak + 0.05 * peak * (2.0 * std::f32::consts::PI * 1.5 * ts).sin()
                }
                PhaseKind::Release => start_level * (1.0 - frac),
            };
            force[at + k] = level;
        }
        phases.push(PhaseSpan {
            start: at,
            end: at + len,
            kind,
        });
        at += len;
        if kind == PhaseKind::Release {
            snap_at = None;
        }
        // damped vibration rides on top of the post-snap plateau until release
        if let (Some(s), PhaseKind::Snap | PhaseKind::Hold) = (snap_at, kind) {
            for (i, f) in force.iter_mut().enumerate().take(at).skip(at - len) {
                let ts = (i - s) as f32 / rate;
                *f += cfg.vibration_amp
                    * (-ts / cfg.vibration_tau_s).exp()
                    * (2.0 * std::f32::consts::PI * cfg.vibration_hz * ts).sin();
            }
        }
    }

    let noise = Normal::new(0.0f32, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let c_n = cfg.channels;
    let mut samples = vec![0.0f32; total * c_n];
    for (t, &f) in force.iter().enumerate() {
        let drift = cfg.drift_per_s * t as f32 / rate;
        for c in 0..c_n {
            let reading = pressure_map(f.max(0.0), cfg.region, cfg).value * (1.0 + 0.1 * c as f32);
            let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            samples[t * c_n + c] = reading + n + drift;
        }
    }
    let traj = LabeledTrajectory {
        samples,
        channels: c_n,
        rate_hz: rate,
        phases,
        events,
    };
    traj.validate()?;
    Ok(traj)
}

/// `n` trajectories with consecutive seeds starting at `cfg.seed`.
pub fn generate_batch(cfg: &ScenarioConfig, n: usize) -> Result<Vec<LabeledTrajectory>> {
    (0..n)
        .map(|i| {
            generate(&ScenarioConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_count_is_rate_times_duration() {
        let t = generate(&ScenarioConfig::default()).unwrap();
        assert_eq!(t.len(), 1000);
        assert_eq!(t.labels().len(), 1000);
    }

    #[test]
    fn idle_hold_noise_free_is_zero() {
        let t = generate(&ScenarioConfig {
            kind: ScenarioKind::IdleHold,
            noise_std: 0.0,
            drift_per_s: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert!(t.samples.iter().all(|&v| v == 0.0));
        assert_eq!(t.phases.len(), 1);
    }

    #[test]
    fn sequential_buttons_emit_clicks() {
        let t = generate(&ScenarioConfig {
            kind: ScenarioKind::SequentialButtons,
            presses: 3,
            duration_s: 12.0,
            seed: 7,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(t.event_count(), 3);
        assert!(t.events.iter().all(|e| e.kind == EventKind::Click));
        let snaps = t.phases.iter().filter(|p| p.kind == PhaseKind::Snap).count();
        assert_eq!(snaps, 3);
    }

    #[test]
    fn pick_place_counts_releases() {
        let t = generate(&ScenarioConfig {
            kind: ScenarioKind::PickPlaceCounting,
            cycles: 3,
            duration_s: 12.0,
            region: Region::Fingerpad,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(t.event_count(), 3);
        assert!(t.events.iter().all(|e| e.kind == EventKind::Release));
    }

    #[test]
    fn too_short_duration_rejected() {
        let r = generate(&ScenarioConfig {
            duration_s: 1.0,
            ..Default::default()
        });
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let c = ScenarioConfig {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let d = ScenarioConfig { seed: 43, ..c };
        assert_ne!(generate(&d).unwrap().samples, generate(&ScenarioConfig { seed: 42, ..d.clone() }).unwrap().samples);
    }

    #[test]
    fn snap_jump_exceeds_noise() {
        for seed in 0..50 {
            let cfg = ScenarioConfig { seed, ..Default::default() };
            let t = generate(&cfg).unwrap();
            for e in &t.events {
                let jump = (t.samples[e.t] - t.samples[e.t - 1]).abs();
                assert!(jump > 5.0 * cfg.noise_std, "seed {seed}: {jump}");
            }
        }
    }

    #[test]
    fn critical_phases_are_sparse() {
        for seed in 0..20 {
            let t = generate(&ScenarioConfig { seed, ..Default::default() }).unwrap();
            assert!(t.critical_fraction() < 0.05);
        }
    }

    #[test]
    fn pressure_map_properties() {
        let cfg = ScenarioConfig::default();
        assert_eq!(pressure_map(0.0, Region::Fingertip, &cfg).value, 0.0);
        assert_eq!(pressure_map(0.0, Region::Fingerpad, &cfg).value, 0.0);
        for f in [0.5f32, 1.0, 3.3, 5.0] {
            let tip = pressure_map(f, Region::Fingertip, &cfg).value;
            let pad = pressure_map(f, Region::Fingerpad, &cfg).value;
            assert!(pad > tip);
            let twice = pressure_map(2.0 * f, Region::Fingertip, &cfg).value;
            assert!((twice - 2.0 * tip).abs() <= 1e-6);
        }
        let r = pressure_map(12.0, Region::Fingertip, &cfg);
        assert!(r.clamped);
        assert_eq!(r.value, cfg.gain_tip * MAX_LOAD_N);
        assert!(pressure_map(-1.0, Region::Fingertip, &cfg).clamped);
    }

    #[test]
    fn contact_onsets_button() {
        let t = generate(&ScenarioConfig::default()).unwrap();
        let onsets = t.contact_onsets();
        assert_eq!(onsets.len(), 2);
        let ramp = t.phases.iter().find(|p| p.kind == PhaseKind::Ramp).unwrap();
        assert_eq!(onsets[0], ramp.start);
    }
}
