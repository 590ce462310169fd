//! Frozen-encoder planner fine-tuning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamConfig, AdamState};
use super::metrics::MetricRecord;
use super::stage1::argmax;
use crate::autodiff::Tape;
use crate::encoder::{encoder_encode, make_soft_prompt, names, EncoderWeights, RevinMode};
use crate::kernels::matvec;
use crate::params::ParamStore;
use crate::phase::{phase_uniform_sample, uniform_sample, Segmentation};
use crate::sim::{LabeledTrajectory, PhaseKind};
use crate::{Error, Result};

/// Mean and max per channel.
pub const COARSE_PER_CHANNEL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    #[default]
    PhaseUniform,
    Uniform,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "phase-uniform" => Ok(Self::PhaseUniform),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Config(format!("unknown sampler {other}"))),
        }
    }
}

/// Per-channel mean and max force over the last complete 1 s window, held
/// constant between window boundaries (a 1 Hz observation). Zero before the
/// first window completes. Returns `(T, COARSE_PER_CHANNEL·C)`.
pub fn coarse_features(x: &[f32], channels: usize, rate_hz: f32) -> Vec<f32> {
    let t_len = x.len() / channels;
    let win = (rate_hz.round() as usize).max(1);
    let width = COARSE_PER_CHANNEL * channels;
    let mut out = vec![0.0f32; t_len * width];
    let mut current = vec![0.0f32; width];
    for t in 0..t_len {
        if (t + 1) % win == 0 {
            let lo = t + 1 - win;
            for c in 0..channels {
                let vals = (lo..=t).map(|s| x[s * channels + c]);
                current[2 * c] = vals.clone().sum::<f32>() / win as f32;
                current[2 * c + 1] = vals.fold(f32::NEG_INFINITY, f32::max);
            }
        }
        out[t * width..(t + 1) * width].copy_from_slice(&current);
    }
    out
}

/// Linear heads over `[z_tac ⊕ coarse]`: phase classes and event-count classes.
pub fn planner_init(d_z: usize, channels: usize, max_events: usize, seed: u64) -> ParamStore<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_dim = d_z + COARSE_PER_CHANNEL * channels;
    let bound = 1.0 / (in_dim as f32).sqrt();
    let n_phase = PhaseKind::GROUND_TRUTH.len();
    let n_count = max_events + 1;
    let mut s = ParamStore::new();
    let mut uni = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
    s.push("phase.w", &[n_phase, in_dim], uni(n_phase * in_dim));
    s.push("phase.b", &[n_phase], vec![0.0; n_phase]);
    s.push("count.w", &[n_count, in_dim], uni(n_count * in_dim));
    s.push("count.b", &[n_count], vec![0.0; n_count]);
    s
}

/// Phase and count logits for one timestep.
pub fn planner_forward(z: &[f32], coarse: &[f32], head: &ParamStore<f32>) -> Result<(Vec<f32>, Vec<f32>)> {
    let x: Vec<f32> = z.iter().chain(coarse).copied().collect();
    let pb = head.get("phase.b");
    let cb = head.get("count.b");
    if head.get("phase.w").len() != pb.len() * x.len() {
        return Err(Error::shape("planner input", head.get("phase.w").len() / pb.len(), x.len()));
    }
    let mut phase = vec![0.0; pb.len()];
    let mut count = vec![0.0; cb.len()];
    matvec(head.get("phase.w"), &x, Some(pb), &mut phase);
    matvec(head.get("count.w"), &x, Some(cb), &mut count);
    Ok((phase, count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub steps: usize,
    pub batch: usize,
    pub sampler: SamplerKind,
    pub adam: AdamConfig,
    pub eval_every: usize,
    pub heldout_fraction: f64,
    /// Stop once held-out accuracy on the critical class reaches this value.
    pub target_critical_accuracy: Option<f64>,
    pub critical: PhaseKind,
    pub max_events: usize,
    /// Non-critical held-out timesteps per trajectory in each evaluation.
    pub eval_samples_per_trajectory: usize,
    pub revin_mode: RevinMode,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 32,
            sampler: SamplerKind::PhaseUniform,
            adam: AdamConfig::default(),
            eval_every: 20,
            heldout_fraction: 0.2,
            target_critical_accuracy: None,
            critical: PhaseKind::Snap,
            max_events: 3,
            eval_samples_per_trajectory: 200,
            revin_mode: RevinMode::Streaming,
            seed: 0,
        }
    }
}

/// Held-out accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEval {
    /// Accuracy per ground-truth class present in the evaluation set.
    pub per_class: Vec<(PhaseKind, f64)>,
    pub critical_accuracy: f64,
    pub overall_accuracy: f64,
    pub count_accuracy: f64,
}

impl PhaseEval {
    pub fn class(&self, kind: PhaseKind) -> Option<f64> {
        self.per_class.iter().find(|c| c.0 == kind).map(|c| c.1)
    }
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub head: ParamStore<f32>,
    /// The encoder with its fine-tuned soft-prompt projection; the backbone is unchanged.
    pub encoder: EncoderWeights<f32>,
    pub log: Vec<MetricRecord>,
    pub eval: PhaseEval,
    pub steps: usize,
    /// First optimizer step count at which the critical-class target was met.
    pub steps_to_target: Option<usize>,
}

/// First `step + 1` whose logged critical accuracy reaches `threshold`.
pub fn steps_to_accuracy(log: &[MetricRecord], threshold: f64) -> Option<usize> {
    log.iter()
        .find(|r| r.critical_accuracy.is_some_and(|a| a >= threshold))
        .map(|r| r.step + 1)
}

struct Prepared<'a> {
    traj: &'a LabeledTrajectory,
    seg: Segmentation,
    h: Vec<f32>,
    coarse: Vec<f32>,
    class: Vec<usize>,
    count: Vec<usize>,
}

fn prepare<'a>(traj: &'a LabeledTrajectory, encoder: &EncoderWeights<f32>, cfg: &Stage2Config) -> Result<Prepared<'a>> {
    if traj.phases.is_empty() {
        return Err(Error::Config("fine-tuning needs phase labels".into()));
    }
    let seg = Segmentation::from_labels(traj)?;
    if seg.len() != traj.len() {
        return Err(Error::Config(format!(
            "segmentation covers {} of {} samples",
            seg.len(),
            traj.len()
        )));
    }
    let h = encoder_encode(&traj.samples, encoder, cfg.revin_mode)?;
    let coarse = coarse_features(&traj.samples, traj.channels, traj.rate_hz);
    let class = traj
        .labels()
        .iter()
        .map(|(k, _)| k.class_index().ok_or_else(|| Error::Config(format!("{k:?} is not a ground-truth class"))))
        .collect::<Result<_>>()?;
    let mut count = Vec::with_capacity(traj.len());
    let mut seen = 0;
    let mut ev = traj.events.iter().map(|e| e.t).collect::<Vec<_>>();
    ev.sort_unstable();
    for t in 0..traj.len() {
        while seen < ev.len() && ev[seen] <= t {
            seen += 1;
        }
        count.push(seen.min(cfg.max_events));
    }
    Ok(Prepared {
        traj,
        seg,
        h,
        coarse,
        class,
        count,
    })
}

fn evaluate(
    set: &[(&Prepared<'_>, Vec<usize>)],
    prompt: &ParamStore<f32>,
    head: &ParamStore<f32>,
    critical: usize,
    hd: usize,
    cw: usize,
) -> Result<PhaseEval> {
    let n_class = PhaseKind::GROUND_TRUTH.len();
    let mut hit = vec![0usize; n_class];
    let mut tot = vec![0usize; n_class];
    let (mut count_hit, mut n) = (0usize, 0usize);
    let (pw, pb) = (prompt.get(names::PROMPT_W), prompt.get(names::PROMPT_B));
    for (p, ts) in set {
        for &t in ts {
            let z = make_soft_prompt(&p.h[t * hd..(t + 1) * hd], pw, pb)?;
            let (phase, count) = planner_forward(&z, &p.coarse[t * cw..(t + 1) * cw], head)?;
            let y = p.class[t];
            tot[y] += 1;
            hit[y] += (argmax(&phase) == y) as usize;
            count_hit += (argmax(&count) == p.count[t]) as usize;
            n += 1;
        }
    }
    let per_class = (0..n_class)
        .filter(|&k| tot[k] > 0)
        .map(|k| (PhaseKind::GROUND_TRUTH[k], hit[k] as f64 / tot[k] as f64))
        .collect();
    Ok(PhaseEval {
        per_class,
        critical_accuracy: if tot[critical] > 0 { hit[critical] as f64 / tot[critical] as f64 } else { 0.0 },
        overall_accuracy: hit.iter().sum::<usize>() as f64 / n.max(1) as f64,
        count_accuracy: count_hit as f64 / n.max(1) as f64,
    })
}

/// Fits the planner head and soft-prompt projection on a frozen backbone.
pub fn finetune_stage2(
    trajectories: &[LabeledTrajectory],
    encoder: &EncoderWeights<f32>,
    cfg: &Stage2Config,
) -> Result<Stage2Output> {
    if cfg.batch == 0 || cfg.eval_every == 0 {
        return Err(Error::Config("batch and eval_every must be >= 1".into()));
    }
    if trajectories.len() < 2 {
        return Err(Error::Config("fine-tuning needs at least two trajectories".into()));
    }
    let critical = cfg
        .critical
        .class_index()
        .ok_or_else(|| Error::Config("critical phase must be a ground-truth class".into()))?;
    let enc_cfg = *encoder.config();
    let hd = enc_cfg.hidden_dim();
    let cw = COARSE_PER_CHANNEL * enc_cfg.channels;
    let prepared: Vec<Prepared> = trajectories.iter().map(|t| prepare(t, encoder, cfg)).collect::<Result<_>>()?;
    let n_hold = ((prepared.len() as f64 * cfg.heldout_fraction).round() as usize).clamp(1, prepared.len() - 1);
    let (train, hold) = prepared.split_at(prepared.len() - n_hold);

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xE7A1_5EED);
    let eval_set: Vec<(&Prepared, Vec<usize>)> = hold
        .iter()
        .map(|p| {
            let mut ts: Vec<usize> = (0..p.traj.len()).filter(|&t| p.class[t] == critical).collect();
            ts.extend(uniform_sample(p.traj.len(), cfg.eval_samples_per_trajectory, &mut eval_rng)?);
            Ok((p, ts))
        })
        .collect::<Result<_>>()?;

    // only the soft-prompt projection of the encoder store may move
    let mut enc_store = encoder.store().clone();
    enc_store.set_all_trainable(false);
    enc_store.set_trainable(names::PROMPT_PREFIX, true);
    let mut head = planner_init(enc_cfg.d_z, enc_cfg.channels, cfg.max_events, cfg.seed.wrapping_add(2));
    let mut enc_adam = AdamState::new(enc_store.len(), cfg.adam);
    let mut head_adam = AdamState::new(head.len(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut log = Vec::new();
    let mut eval = None;
    let mut steps = 0;
    let mut steps_to_target = None;
    for step in 0..cfg.steps {
        let p = &train[rng.random_range(0..train.len())];
        let ts = match cfg.sampler {
            SamplerKind::PhaseUniform => phase_uniform_sample(&p.seg, cfg.batch, &mut rng)?,
            SamplerKind::Uniform => uniform_sample(p.traj.len(), cfg.batch, &mut rng)?,
        };
        let mut hrows = Vec::with_capacity(cfg.batch * hd);
        let mut crows = Vec::with_capacity(cfg.batch * cw);
        for &t in &ts {
            hrows.extend_from_slice(&p.h[t * hd..(t + 1) * hd]);
            crows.extend_from_slice(&p.coarse[t * cw..(t + 1) * cw]);
        }
        let y_phase: Vec<usize> = ts.iter().map(|&t| p.class[t]).collect();
        let y_count: Vec<usize> = ts.iter().map(|&t| p.count[t]).collect();

        let mut tape = Tape::new(&[&enc_store, &head]);
        let h = tape.constant(hrows, cfg.batch, hd)?;
        let coarse = tape.constant(crows, cfg.batch, cw)?;
        let pw = tape.param(0, names::PROMPT_W)?;
        let pb = tape.param(0, names::PROMPT_B)?;
        let z = tape.linear(h, pw, Some(pb))?;
        let x = tape.concat_cols(&[z, coarse])?;
        let (w, b) = (tape.param(1, "phase.w")?, tape.param(1, "phase.b")?);
        let phase_logits = tape.linear(x, w, Some(b))?;
        let (w, b) = (tape.param(1, "count.w")?, tape.param(1, "count.b")?);
        let count_logits = tape.linear(x, w, Some(b))?;
        let l_phase = tape.softmax_ce(phase_logits, &y_phase)?;
        let l_count = tape.softmax_ce(count_logits, &y_count)?;
        let loss = tape.add(l_phase, l_count)?;
        let loss_value = tape.value(loss)[0] as f64;
        let lv = tape.value(phase_logits);
        let n_cls = PhaseKind::GROUND_TRUTH.len();
        let train_hit = y_phase.iter().enumerate().filter(|&(r, &y)| argmax(&lv[r * n_cls..(r + 1) * n_cls]) == y).count();
        let grads = tape.backward(loss)?;
        adam_update(&mut enc_store, grads.store(0), &mut enc_adam)?;
        adam_update(&mut head, grads.store(1), &mut head_adam)?;
        steps = step + 1;

        let mut rec = MetricRecord::new(2, step, loss_value);
        rec.train_accuracy = Some(train_hit as f64 / cfg.batch as f64);
        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps {
            let prompt = enc_store.extract_prefixed(names::PROMPT_PREFIX);
            let prompt = with_prefix(&prompt);
            let e = evaluate(&eval_set, &prompt, &head, critical, hd, cw)?;
            rec.heldout_accuracy = Some(e.overall_accuracy);
            rec.critical_accuracy = Some(e.critical_accuracy);
            rec.count_accuracy = Some(e.count_accuracy);
            if steps_to_target.is_none() && cfg.target_critical_accuracy.is_some_and(|th| e.critical_accuracy >= th) {
                steps_to_target = Some(step + 1);
            }
            eval = Some(e);
        }
        log.push(rec);
        if steps_to_target.is_some() {
            break;
        }
    }
    let mut out_encoder = encoder.clone();
    let tuned = enc_store.extract_prefixed(names::PROMPT_PREFIX);
    out_encoder.update(|s| {
        s.get_mut(names::PROMPT_W).copy_from_slice(tuned.get("w"));
        s.get_mut(names::PROMPT_B).copy_from_slice(tuned.get("b"));
    })?;
    Ok(Stage2Output {
        head,
        encoder: out_encoder,
        log,
        eval: eval.ok_or_else(|| Error::Config("fine-tuning ran zero steps".into()))?,
        steps,
        steps_to_target,
    })
}

fn with_prefix(stripped: &ParamStore<f32>) -> ParamStore<f32> {
    let mut s = ParamStore::new();
    s.extend_prefixed(names::PROMPT_PREFIX, stripped);
    s
}
