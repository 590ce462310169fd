//! Ternary temporal discrimination pretraining.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamConfig, AdamState};
use super::graph::discriminator_tape;
use super::metrics::MetricRecord;
use super::model::PairEncoder;
use crate::autodiff::{softmax_rows, Tape};
use crate::encoder::{EncoderWeights, RevinMode};
use crate::kernels::matvec;
use crate::params::ParamStore;
use crate::phase::{relation_balanced_pairs, segment_default, PairSample, Segmentation};
use crate::sim::LabeledTrajectory;
use crate::{silu, Error, Result, Scalar};

pub const DISC_HIDDEN: usize = 128;

/// Two-layer perceptron `(2·h_dim → 128, SiLU) → 3`.
///
/// The output layer starts small so the initial prediction is close to uniform.
pub fn discriminator_init(h_dim: usize, seed: u64) -> ParamStore<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let in_dim = 2 * h_dim;
    let b1 = 1.0 / (in_dim as f32).sqrt();
    let b2 = 0.1 / (DISC_HIDDEN as f32).sqrt();
    s.push(
        "l1.w",
        &[DISC_HIDDEN, in_dim],
        (0..DISC_HIDDEN * in_dim).map(|_| rng.random_range(-b1..b1)).collect(),
    );
    s.push("l1.b", &[DISC_HIDDEN], vec![0.0; DISC_HIDDEN]);
    s.push("l2.w", &[3, DISC_HIDDEN], (0..3 * DISC_HIDDEN).map(|_| rng.random_range(-b2..b2)).collect());
    s.push("l2.b", &[3], vec![0.0; 3]);
    s
}

/// Logits for one pair.
pub fn discriminator_forward<F: Scalar>(h_i: &[F], h_j: &[F], w: &ParamStore<F>) -> Result<[F; 3]> {
    let w1 = w.get("l1.w");
    let in_dim = h_i.len() + h_j.len();
    if h_i.len() != h_j.len() || w1.len() != DISC_HIDDEN * in_dim {
        return Err(Error::shape("discriminator input", w1.len() / DISC_HIDDEN, in_dim));
    }
    let x: Vec<F> = h_i.iter().chain(h_j).copied().collect();
    let mut hidden = vec![F::zero(); DISC_HIDDEN];
    matvec(w1, &x, Some(w.get("l1.b")), &mut hidden);
    hidden.iter_mut().for_each(|v| *v = silu(*v));
    let mut out = [F::zero(); 3];
    matvec(w.get("l2.w"), &hidden, Some(w.get("l2.b")), &mut out);
    Ok(out)
}

/// Mean cross-entropy of `[n, 3]` logits against pair labels.
pub fn loss_pre<F: Scalar>(logits: &[F], labels: &[u8]) -> Result<F> {
    if labels.is_empty() {
        return Err(Error::Empty("pair batch"));
    }
    if logits.len() != 3 * labels.len() {
        return Err(Error::shape("pair logits", 3 * labels.len(), logits.len()));
    }
    let p = softmax_rows(logits, 3);
    let mut total = F::zero();
    for (r, &y) in labels.iter().enumerate() {
        total -= p[r * 3 + y as usize].max(F::min_positive_value()).ln();
    }
    Ok(total / F::lit(labels.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub steps: usize,
    /// Pairs per optimizer step, split evenly over `trajectories_per_step`.
    pub pairs_per_step: usize,
    pub trajectories_per_step: usize,
    pub adam: AdamConfig,
    pub eval_every: usize,
    pub eval_pairs_per_trajectory: usize,
    pub heldout_fraction: f64,
    /// Stop as soon as held-out accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub revin_mode: RevinMode,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            steps: 2000,
            pairs_per_step: 66,
            trajectories_per_step: 2,
            adam: AdamConfig::default(),
            eval_every: 50,
            eval_pairs_per_trajectory: 30,
            heldout_fraction: 0.2,
            target_accuracy: None,
            revin_mode: RevinMode::Streaming,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        let per = self.pairs_per_step / self.trajectories_per_step.max(1);
        if self.trajectories_per_step == 0 || per * self.trajectories_per_step != self.pairs_per_step || !per.is_multiple_of(3) || per == 0
        {
            return Err(Error::Config(format!(
                "pairs_per_step ({}) must split into multiples of 3 over {} trajectories",
                self.pairs_per_step, self.trajectories_per_step
            )));
        }
        if self.eval_pairs_per_trajectory == 0 || !self.eval_pairs_per_trajectory.is_multiple_of(3) {
            return Err(Error::Config("eval_pairs_per_trajectory must be a positive multiple of 3".into()));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::Config("heldout_fraction must lie in [0, 1)".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Output<E = EncoderWeights<f32>> {
    pub encoder: E,
    pub discriminator: ParamStore<f32>,
    pub log: Vec<MetricRecord>,
    pub initial_loss: f64,
    pub heldout_accuracy: f64,
    pub steps: usize,
}

/// Fraction of pairs whose argmax logit matches the label.
pub fn heldout_accuracy<E: PairEncoder>(
    encoder: &E,
    disc: &ParamStore<f32>,
    set: &[(&LabeledTrajectory, Vec<PairSample>)],
    mode: RevinMode,
) -> Result<f64> {
    let hd = encoder.hidden_dim();
    let (mut hit, mut total) = (0usize, 0usize);
    for (traj, pairs) in set {
        let h = encoder.encode(&traj.samples, mode)?;
        for p in pairs {
            let logits = discriminator_forward(&h[p.i * hd..(p.i + 1) * hd], &h[p.j * hd..(p.j + 1) * hd], disc)?;
            hit += (argmax(&logits) == p.label as usize) as usize;
            total += 1;
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

pub(crate) fn argmax<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Joint encoder + discriminator training on relation-balanced pairs.
pub fn pretrain_stage1<E: PairEncoder>(
    trajectories: &[LabeledTrajectory],
    encoder: E,
    cfg: &Stage1Config,
) -> Result<Stage1Output<E>> {
    cfg.validate()?;
    let mut usable: Vec<(&LabeledTrajectory, Segmentation)> = Vec::new();
    for t in trajectories {
        let seg = segment_default(t)?;
        if seg.k() >= 2 {
            usable.push((t, seg));
        }
    }
    if usable.is_empty() {
        return Err(Error::Config("no trajectory segments into two or more phases".into()));
    }
    let n_hold = if usable.len() >= 2 {
        ((usable.len() as f64 * cfg.heldout_fraction).round() as usize).clamp(1, usable.len() - 1)
    } else {
        0
    };
    let split = usable.len() - n_hold;
    let (train, hold) = usable.split_at(split);
    let hold = if hold.is_empty() { train } else { hold };

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_E7A1);
    let eval_set: Vec<(&LabeledTrajectory, Vec<PairSample>)> = hold
        .iter()
        .map(|(t, s)| Ok((*t, relation_balanced_pairs(s, cfg.eval_pairs_per_trajectory, &mut eval_rng)?)))
        .collect::<Result<_>>()?;

    let mut encoder = encoder;
    let mut disc = discriminator_init(encoder.hidden_dim(), cfg.seed.wrapping_add(1));
    let mut enc_adam = AdamState::new(encoder.params().len(), cfg.adam);
    let mut disc_adam = AdamState::new(disc.len(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per = cfg.pairs_per_step / cfg.trajectories_per_step;
    let scale = 1.0 / cfg.trajectories_per_step as f32;

    let mut log = Vec::with_capacity(cfg.steps);
    let mut initial_loss = f64::NAN;
    let mut heldout = 0.0;
    let mut steps = 0;
    for step in 0..cfg.steps {
        let mut g_enc = vec![0.0f32; encoder.params().len()];
        let mut g_disc = vec![0.0f32; disc.len()];
        let (mut loss_sum, mut hit) = (0.0f64, 0usize);
        for _ in 0..cfg.trajectories_per_step {
            let (traj, seg) = &train[rng.random_range(0..train.len())];
            let pairs = relation_balanced_pairs(seg, per, &mut rng)?;
            let is: Vec<usize> = pairs.iter().map(|p| p.i).collect();
            let js: Vec<usize> = pairs.iter().map(|p| p.j).collect();
            let labels: Vec<usize> = pairs.iter().map(|p| p.label as usize).collect();
            let mut tape = Tape::new(&[encoder.params(), &disc]);
            let h = encoder.encode_tape(&mut tape, 0, &traj.samples, cfg.revin_mode)?;
            let hi = tape.gather_rows(h, &is)?;
            let hj = tape.gather_rows(h, &js)?;
            let logits = discriminator_tape(&mut tape, 1, hi, hj)?;
            let loss = tape.softmax_ce(logits, &labels)?;
            loss_sum += tape.value(loss)[0] as f64;
            let lv = tape.value(logits);
            hit += labels.iter().enumerate().filter(|&(r, &y)| argmax(&lv[r * 3..r * 3 + 3]) == y).count();
            let grads = tape.backward(loss)?;
            for (a, &b) in g_enc.iter_mut().zip(grads.store(0)) {
                *a += scale * b;
            }
            for (a, &b) in g_disc.iter_mut().zip(grads.store(1)) {
                *a += scale * b;
            }
        }
        let loss = loss_sum / cfg.trajectories_per_step as f64;
        if step == 0 {
            initial_loss = loss;
        }
        if !loss.is_finite() || g_enc.iter().chain(&g_disc).any(|g| !g.is_finite()) {
            return Err(Error::NumericDomain("stage-1 loss or gradient"));
        }
        encoder.update_params(|s| adam_update(s, &g_enc, &mut enc_adam))??;
        adam_update(&mut disc, &g_disc, &mut disc_adam)?;
        steps = step + 1;
        let mut rec = MetricRecord::new(1, step, loss);
        rec.train_accuracy = Some(hit as f64 / cfg.pairs_per_step as f64);
        let last = step + 1 == cfg.steps;
        if (step + 1) % cfg.eval_every == 0 || last {
            heldout = heldout_accuracy(&encoder, &disc, &eval_set, cfg.revin_mode)?;
            rec.heldout_accuracy = Some(heldout);
            log::info!("stage1 step {} loss {loss:.4} heldout {heldout:.3}", step + 1);
        }
        let done = rec.heldout_accuracy.is_some() && cfg.target_accuracy.is_some_and(|t| heldout >= t);
        log.push(rec);
        if done {
            break;
        }
    }
    Ok(Stage1Output {
        encoder,
        discriminator: disc,
        log,
        initial_loss,
        heldout_accuracy: heldout,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::sim::{generate_batch, ScenarioConfig};

    #[test]
    fn zero_weights_give_bias_logits() {
        let mut w = discriminator_init(4, 0);
        w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        w.get_mut("l2.b").copy_from_slice(&[0.5, -1.0, 2.0]);
        let l = discriminator_forward(&[1.0; 4], &[2.0; 4], &w).unwrap();
        assert_eq!(l, [0.5, -1.0, 2.0]);
        let p = softmax_rows(&l, 3);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn loss_hand_computed() {
        let logits = [2.0f64, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 3.0];
        let labels = [0u8, 2, 2];
        let e = std::f64::consts::E;
        let expect = (-(e * e / (e * e + 2.0)).ln() - (1.0 / (e + 2.0)).ln() - (e.powi(3) / (e.powi(3) + 2.0)).ln()) / 3.0;
        assert!((loss_pre(&logits, &labels).unwrap() - expect).abs() < 1e-12);
        assert!((loss_pre(&[0.3f64; 9], &labels).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!(loss_pre(&[100.0f64, 0.0, 0.0], &[0]).unwrap() < 1e-30);
        assert!(loss_pre::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn short_run_is_deterministic() {
        let trajs = generate_batch(
            &ScenarioConfig {
                duration_s: 3.0,
                ..Default::default()
            },
            4,
        )
        .unwrap();
        let cfg = Stage1Config {
            steps: 3,
            pairs_per_step: 12,
            eval_every: 2,
            eval_pairs_per_trajectory: 6,
            heldout_fraction: 0.25,
            ..Default::default()
        };
        let enc = crate::encoder::encoder_init(&EncoderConfig::tiny()).unwrap();
        let a = pretrain_stage1(&trajs, enc.clone(), &cfg).unwrap();
        let b = pretrain_stage1(&trajs, enc, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 3);
        assert!((a.initial_loss - 3f64.ln()).abs() < 0.1);
    }

    #[test]
    fn unsegmentable_data_is_rejected() {
        let trajs = generate_batch(
            &ScenarioConfig {
                kind: crate::sim::ScenarioKind::IdleHold,
                duration_s: 2.0,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let enc = crate::encoder::encoder_init(&EncoderConfig::tiny()).unwrap();
        assert!(matches!(
            pretrain_stage1(&trajs, enc, &Stage1Config::default()),
            Err(Error::Config(_))
        ));
    }
}
