//! Phase segmentation and timestep/pair samplers.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{LabeledTrajectory, PhaseKind, PhaseSpan, Sidecar};
use crate::{Error, Result};

/// Ordered phases partitioning `[0, T)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub phases: Vec<PhaseSpan>,
}

impl Segmentation {
    pub fn new(phases: Vec<PhaseSpan>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Empty("segmentation"));
        }
        let mut at = 0;
        for p in &phases {
            if p.start != at || p.end <= p.start {
                return Err(Error::Config(format!("segments not contiguous at {at}")));
            }
            at = p.end;
        }
        Ok(Self { phases })
    }

    /// Ground-truth phases of a labeled trajectory.
    pub fn from_labels(traj: &LabeledTrajectory) -> Result<Self> {
        Self::new(traj.phases.clone())
    }

    pub fn k(&self) -> usize {
        self.phases.len()
    }

    pub fn len(&self) -> usize {
        self.phases.last().map_or(0, |p| p.end)
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Index of the phase containing `t`.
    pub fn phase_of(&self, t: usize) -> usize {
        self.phases.partition_point(|p| p.end <= t).min(self.phases.len() - 1)
    }

    /// Start indices of contact segments.
    pub fn contact_onsets(&self) -> Vec<usize> {
        self.phases.iter().filter(|p| p.kind == PhaseKind::Contact).map(|p| p.start).collect()
    }

    pub fn to_sidecar(&self) -> Sidecar {
        Sidecar::new(self.phases.clone(), Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentParams {
    pub theta_hi: f32,
    pub theta_lo: f32,
    pub min_len: usize,
    pub window: usize,
}

impl SegmentParams {
    /// Thresholds at 5σ / 2σ of the idle noise estimated from the first 0.5 s.
    pub fn from_idle(x: &[f32], channels: usize, rate_hz: f32) -> Self {
        let sigma = idle_sigma(x, channels, rate_hz);
        Self {
            theta_hi: 5.0 * sigma,
            theta_lo: 2.0 * sigma,
            min_len: 10,
            window: 5,
        }
    }
}

/// Sum over channels of the sample standard deviation in the first 0.5 s,
/// floored at 1e-3.
pub fn idle_sigma(x: &[f32], channels: usize, rate_hz: f32) -> f32 {
    let t_len = x.len() / channels;
    let n = ((0.5 * rate_hz).round() as usize).clamp(2, t_len.max(2)).min(t_len);
    let mut total = 0.0f64;
    if n >= 2 {
        for c in 0..channels {
            let vals = (0..n).map(|t| x[t * channels + c] as f64);
            let mean = vals.clone().sum::<f64>() / n as f64;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            total += var.sqrt();
        }
    }
    (total as f32).max(1e-3)
}

/// Centered moving average (odd width `window`) of the channel-summed
/// absolute first difference; `g[0] = g[1]`.
pub fn gradient_magnitude(x: &[f32], channels: usize, window: usize) -> Result<Vec<f32>> {
    let t_len = x.len() / channels.max(1);
    if channels == 0 || t_len < 2 {
        return Err(Error::Config(format!("gradient needs T >= 2, got {t_len}")));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Config(format!("smoothing window must be odd, got {window}")));
    }
    let mut d = vec![0.0f32; t_len];
    for t in 1..t_len {
        d[t] = (0..channels).map(|c| (x[t * channels + c] - x[(t - 1) * channels + c]).abs()).sum();
    }
    d[0] = d[1];
    let half = window / 2;
    let mut prefix = vec![0.0f64; t_len + 1];
    for t in 0..t_len {
        prefix[t + 1] = prefix[t] + d[t] as f64;
    }
    // the window shrinks at the ends
    Ok((0..t_len)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(t_len);
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64) as f32
        })
        .collect())
}

/// Hysteresis segmentation into idle/contact phases.
pub fn segment_phases(x: &[f32], channels: usize, params: &SegmentParams) -> Result<Segmentation> {
    if !(params.theta_lo > 0.0 && params.theta_hi >= params.theta_lo) {
        return Err(Error::Config("require theta_hi >= theta_lo > 0".into()));
    }
    let min_len = params.min_len.max(1);
    let g = gradient_magnitude(x, channels, params.window)?;
    let t_len = g.len();
    let mut bounds = vec![(0usize, PhaseKind::Idle)];
    let mut in_contact = false;
    let mut quiet_start = None;
    for (t, &gt) in g.iter().enumerate() {
        if !in_contact {
            if gt >= params.theta_hi {
                in_contact = true;
                quiet_start = None;
                bounds.push((t, PhaseKind::Contact));
            }
        } else if gt < params.theta_lo {
            let s = *quiet_start.get_or_insert(t);
            if t + 1 - s >= min_len {
                in_contact = false;
                quiet_start = None;
                bounds.push((s, PhaseKind::Idle));
            }
        } else {
            quiet_start = None;
        }
    }
    let mut raw: Vec<PhaseSpan> = Vec::with_capacity(bounds.len());
    for (i, &(start, kind)) in bounds.iter().enumerate() {
        let end = bounds.get(i + 1).map_or(t_len, |b| b.0);
        if end > start {
            raw.push(PhaseSpan { start, end, kind });
        }
    }
    let mut out: Vec<PhaseSpan> = Vec::with_capacity(raw.len());
    for p in raw {
        match out.last_mut() {
            Some(last) if p.len() < min_len || last.kind == p.kind => last.end = p.end,
            _ => out.push(p),
        }
    }
    // a short leading segment has no predecessor and joins its successor
    if out.len() > 1 && out[0].len() < min_len {
        let first = out.remove(0);
        out[0].start = first.start;
    }
    let mut merged: Vec<PhaseSpan> = Vec::with_capacity(out.len());
    for p in out {
        match merged.last_mut() {
            Some(last) if last.kind == p.kind => last.end = p.end,
            _ => merged.push(p),
        }
    }
    Segmentation::new(merged)
}

/// Segmentation with defaults derived from the idle noise floor.
pub fn segment_default(traj: &LabeledTrajectory) -> Result<Segmentation> {
    let params = SegmentParams::from_idle(&traj.samples, traj.channels, traj.rate_hz);
    segment_phases(&traj.samples, traj.channels, &params)
}

/// Fraction of `truth` onsets that have a detected onset within `tol` samples.
pub fn boundary_recall(detected: &[usize], truth: &[usize], tol: usize) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hit = truth
        .iter()
        .filter(|&&t| detected.iter().any(|&d| d.abs_diff(t) <= tol))
        .count();
    hit as f64 / truth.len() as f64
}

/// Picks a phase uniformly, then a timestep uniformly inside it.
pub fn phase_uniform_sample<R: Rng + ?Sized>(seg: &Segmentation, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if seg.is_empty() {
        return Err(Error::Empty("segmentation"));
    }
    Ok((0..n)
        .map(|_| {
            let p = &seg.phases[rng.random_range(0..seg.k())];
            rng.random_range(p.start..p.end)
        })
        .collect())
}

/// I.i.d. uniform timesteps over `[0, t_len)`.
pub fn uniform_sample<R: Rng + ?Sized>(t_len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if t_len == 0 {
        return Err(Error::Empty("trajectory"));
    }
    Ok((0..n).map(|_| rng.random_range(0..t_len)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    /// 0: phase(i) < phase(j), 1: same phase, 2: phase(i) > phase(j).
    pub label: u8,
}

impl PairSample {
    pub fn swapped(self) -> Self {
        Self {
            i: self.j,
            j: self.i,
            label: 2 - self.label,
        }
    }
}

/// Label of a pair under the phase-order rule.
pub fn relation_label(seg: &Segmentation, i: usize, j: usize) -> u8 {
    match seg.phase_of(i).cmp(&seg.phase_of(j)) {
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => 1,
        std::cmp::Ordering::Greater => 2,
    }
}

/// Exactly `n / 3` pairs of each relation class, shuffled.
pub fn relation_balanced_pairs<R: Rng + ?Sized>(seg: &Segmentation, n: usize, rng: &mut R) -> Result<Vec<PairSample>> {
    if n == 0 || !n.is_multiple_of(3) {
        return Err(Error::Config(format!("pair count must be a positive multiple of 3, got {n}")));
    }
    let k = seg.k();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 phases for ordered pairs, got {k}")));
    }
    let draw = |p: usize, rng: &mut R| {
        let s = &seg.phases[p];
        rng.random_range(s.start..s.end)
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n / 3 {
        let p = rng.random_range(0..k);
        let (i, j) = (draw(p, rng), draw(p, rng));
        out.push(PairSample { i, j, label: 1 });
        for label in [0u8, 2] {
            let a = rng.random_range(0..k - 1);
            let b = rng.random_range(a + 1..k);
            let (i, j) = (draw(a, rng), draw(b, rng));
            out.push(if label == 0 {
                PairSample { i, j, label }
            } else {
                PairSample { i: j, j: i, label }
            });
        }
    }
    out.shuffle(rng);
    Ok(out)
}
