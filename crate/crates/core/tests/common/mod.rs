//! Property checks shared by the integration tests and the acceptance runner.
//! Each returns a verdict plus a one-line measurement summary.

#![allow(dead_code)]

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tacmamba::autodiff::Tape;
use tacmamba::encoder::{
    encoder_encode, encoder_step, make_soft_prompt, names, revin_denormalize, revin_normalize, EncoderConfig,
    EncoderStreamState, EncoderWeights, RevinMode, RevinState,
};
use tacmamba::params::ParamStore;
use tacmamba::phase::{
    boundary_recall, phase_uniform_sample, relation_balanced_pairs, relation_label, segment_default, Segmentation,
};
use tacmamba::sim::{generate, LabeledTrajectory, PhaseKind, PhaseSpan, ScenarioConfig, ScenarioKind};
use tacmamba::ssm::{discretize_a, discretize_b, ssm_scan, ssm_step, SelectiveParams, SsmState, StateMatrix};
use tacmamba::train::{coarse_features, discriminator_forward, discriminator_init, discriminator_tape, encode_tape, planner_init};

#[derive(Debug, Clone)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    pub fn all(parts: Vec<Check>) -> Check {
        Check {
            pass: parts.iter().all(|c| c.pass),
            detail: parts.iter().map(|c| c.detail.as_str()).collect::<Vec<_>>().join("; "),
        }
    }
}

pub fn random_signal(len: usize, channels: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = vec![0.0f32; channels];
    let mut out = Vec::with_capacity(len * channels);
    for _ in 0..len {
        for l in level.iter_mut() {
            *l += rng.random_range(-0.3..0.3);
            out.push(*l + rng.random_range(-1.0..1.0));
        }
    }
    out
}

/// Iterated `encoder_step` against the batch encode, which runs the scan.
pub fn step_scan_max_diff(config: &EncoderConfig, len: usize, seed: u64) -> f64 {
    let w = EncoderWeights::<f32>::init(&EncoderConfig { seed, ..*config }).unwrap();
    let c = config.channels;
    let x = random_signal(len, c, seed.wrapping_mul(31).wrapping_add(7));
    let batch = encoder_encode(&x, &w, RevinMode::Streaming).unwrap();
    let mut st = EncoderStreamState::new(w.config());
    let hd = config.hidden_dim();
    let mut worst = 0.0f64;
    for t in 0..len {
        let h = encoder_step(&mut st, &x[t * c..(t + 1) * c], &w).unwrap();
        for (a, b) in h.iter().zip(&batch[t * hd..(t + 1) * hd]) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    worst
}

/// Bare recurrence: `ssm_step` iterated vs `ssm_scan` on random selective parameters.
pub fn ssm_step_scan_max_diff(d_inner: usize, d_state: usize, len: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_log: Vec<f32> = (0..d_inner * d_state).map(|_| rng.random_range(-1.0..2.0)).collect();
    let a = StateMatrix::from_log(&a_log, d_inner, d_state).unwrap();
    let params: Vec<SelectiveParams<f32>> = (0..len)
        .map(|_| SelectiveParams {
            delta: (0..d_inner).map(|_| rng.random_range(0.001..0.5)).collect(),
            b: (0..d_state).map(|_| rng.random_range(-1.0..1.0)).collect(),
            c: (0..d_state).map(|_| rng.random_range(-1.0..1.0)).collect(),
            d_skip: (0..d_inner).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let u: Vec<f32> = (0..len * d_inner).map(|_| rng.random_range(-2.0..2.0)).collect();
    let scan = ssm_scan(&u, &params, &a).unwrap();
    let mut st = SsmState::zeros(d_inner, d_state);
    let mut y = vec![0.0f32; d_inner];
    let mut worst = 0.0f64;
    for (t, p) in params.iter().enumerate() {
        ssm_step(&mut st, &u[t * d_inner..(t + 1) * d_inner], p, &a, &mut y).unwrap();
        for (a, b) in y.iter().zip(&scan[t * d_inner..(t + 1) * d_inner]) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    worst
}

pub fn step_scan_equivalence(seeds: u64, len: usize) -> Check {
    let cfg = EncoderConfig::default();
    let enc = (0..seeds).map(|s| step_scan_max_diff(&cfg, len, s)).fold(0.0, f64::max);
    let raw = (0..seeds).map(|s| ssm_step_scan_max_diff(8, 16, len, s)).fold(0.0, f64::max);
    Check::new(
        enc <= 1e-5 && raw <= 1e-5,
        format!("{seeds} seeds x {len} steps: encoder max |diff| {enc:.2e}, bare ssm {raw:.2e} (limit 1e-5)"),
    )
}

/// Tiny-model pieces for the finite-difference check.
pub struct TinyModel {
    pub config: EncoderConfig,
    pub stores: [ParamStore<f64>; 3],
    pub x: Vec<f64>,
    pub coarse: Vec<f64>,
    pub pairs: Vec<(usize, usize, usize)>,
    pub steps: Vec<(usize, usize, usize)>,
}

pub fn tiny_model(seed: u64) -> TinyModel {
    let config = EncoderConfig {
        seed,
        ..EncoderConfig::tiny()
    };
    let t_len = 32;
    let enc = EncoderWeights::<f64>::init(&config).unwrap();
    let disc = discriminator_init(config.hidden_dim(), seed + 1).cast::<f64>();
    let mut head = planner_init(config.d_z, 1, 3, seed + 2).cast::<f64>();
    // non-zero head biases so no gradient vanishes by construction
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    for name in ["phase.b", "count.b"] {
        head.get_mut(name).iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let x32 = random_signal(t_len, 1, seed + 4);
    let coarse = coarse_features(&x32, 1, 10.0).iter().map(|&v| v as f64).collect();
    let pairs = (0..6)
        .map(|_| (rng.random_range(0..t_len), rng.random_range(0..t_len), rng.random_range(0..3)))
        .collect();
    let steps = (0..5)
        .map(|_| (rng.random_range(0..t_len), rng.random_range(0..7), rng.random_range(0..4)))
        .collect();
    TinyModel {
        config,
        stores: [enc.into_store(), disc, head],
        x: x32.iter().map(|&v| v as f64).collect(),
        coarse,
        pairs,
        steps,
    }
}

fn ce(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[y]
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * x.len()..(o + 1) * x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Loss through the inference code paths only; the oracle for the tape.
pub fn tiny_loss_reference(m: &TinyModel, stores: &[ParamStore<f64>; 3]) -> f64 {
    let enc = EncoderWeights::from_store(m.config, stores[0].clone()).unwrap();
    let hd = m.config.hidden_dim();
    let h = encoder_encode(&m.x, &enc, RevinMode::Streaming).unwrap();
    let row = |t: usize| &h[t * hd..(t + 1) * hd];
    let mut l_pre = 0.0;
    for &(i, j, y) in &m.pairs {
        l_pre += ce(&discriminator_forward(row(i), row(j), &stores[1]).unwrap(), y);
    }
    let (mut l_phase, mut l_count) = (0.0, 0.0);
    let cw = 2;
    for &(t, yp, yc) in &m.steps {
        let z = make_soft_prompt(row(t), stores[0].get(names::PROMPT_W), stores[0].get(names::PROMPT_B)).unwrap();
        let x: Vec<f64> = z.iter().chain(&m.coarse[t * cw..(t + 1) * cw]).copied().collect();
        l_phase += ce(&dense(stores[2].get("phase.w"), stores[2].get("phase.b"), &x), yp);
        l_count += ce(&dense(stores[2].get("count.w"), stores[2].get("count.b"), &x), yc);
    }
    l_pre / m.pairs.len() as f64 + l_phase / m.steps.len() as f64 + l_count / m.steps.len() as f64
}

/// Loss value and gradients from the tape.
pub fn tiny_loss_tape(m: &TinyModel) -> (f64, Vec<Vec<f64>>) {
    let s = &m.stores;
    let mut tape = Tape::new(&[&s[0], &s[1], &s[2]]);
    let h = encode_tape(&mut tape, 0, &m.config, &m.x, RevinMode::Streaming).unwrap();
    let is: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
    let js: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
    let ys: Vec<usize> = m.pairs.iter().map(|p| p.2).collect();
    let hi = tape.gather_rows(h, &is).unwrap();
    let hj = tape.gather_rows(h, &js).unwrap();
    let logits = discriminator_tape(&mut tape, 1, hi, hj).unwrap();
    let l_pre = tape.softmax_ce(logits, &ys).unwrap();

    let ts: Vec<usize> = m.steps.iter().map(|s| s.0).collect();
    let hs = tape.gather_rows(h, &ts).unwrap();
    let pw = tape.param(0, names::PROMPT_W).unwrap();
    let pb = tape.param(0, names::PROMPT_B).unwrap();
    let z = tape.linear(hs, pw, Some(pb)).unwrap();
    let coarse: Vec<f64> = ts.iter().flat_map(|&t| m.coarse[t * 2..t * 2 + 2].to_vec()).collect();
    let coarse = tape.constant(coarse, ts.len(), 2).unwrap();
    let x = tape.concat_cols(&[z, coarse]).unwrap();
    let (w, b) = (tape.param(2, "phase.w").unwrap(), tape.param(2, "phase.b").unwrap());
    let lp = tape.linear(x, w, Some(b)).unwrap();
    let (w, b) = (tape.param(2, "count.w").unwrap(), tape.param(2, "count.b").unwrap());
    let lc = tape.linear(x, w, Some(b)).unwrap();
    let yp: Vec<usize> = m.steps.iter().map(|s| s.1).collect();
    let yc: Vec<usize> = m.steps.iter().map(|s| s.2).collect();
    let l_phase = tape.softmax_ce(lp, &yp).unwrap();
    let l_count = tape.softmax_ce(lc, &yc).unwrap();
    let sum = tape.add(l_pre, l_phase).unwrap();
    let loss = tape.add(sum, l_count).unwrap();
    let value = tape.value(loss)[0];
    let grads = tape.backward(loss).unwrap();
    (value, grads.per_store)
}

/// Central differences with step `h` on every scalar parameter of all three stores.
/// Relative error uses `max(|analytic|, |numeric|, floor)` as denominator.
pub fn gradient_check(seed: u64, h: f64, floor: f64) -> Check {
    let m = tiny_model(seed);
    let (value, analytic) = tiny_loss_tape(&m);
    let reference = tiny_loss_reference(&m, &m.stores);
    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    let labels = ["encoder", "discriminator", "head"];
    for s in 0..3 {
        for v in m.stores[s].views() {
            for k in v.range() {
                let mut plus = m.stores.clone();
                plus[s].data_mut()[k] += h;
                let mut minus = m.stores.clone();
                minus[s].data_mut()[k] -= h;
                let num = (tiny_loss_reference(&m, &plus) - tiny_loss_reference(&m, &minus)) / (2.0 * h);
                let ana = analytic[s][k];
                let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(floor);
                if rel > worst.0 {
                    worst = (rel, format!("{}:{}[{}]", labels[s], v.name, k - v.offset));
                }
                checked += 1;
            }
        }
    }
    let value_gap = (value - reference).abs();
    Check::new(
        worst.0 <= 1e-3 && value_gap <= 1e-10,
        format!(
            "{checked} parameters, max rel err {:.2e} at {} (limit 1e-3); tape vs reference loss gap {value_gap:.1e}",
            worst.0, worst.1
        ),
    )
}

/// Phase-uniform per-phase mass against 1/K on synthetic layouts with very unequal phase lengths.
pub fn phase_uniform_law(draws: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in [2usize, 3, 5, 10] {
        let mut phases = Vec::with_capacity(k);
        let mut start = 0;
        for p in 0..k {
            let len = if p % 2 == 0 { 3 + p } else { 400 * (p + 1) };
            phases.push(PhaseSpan {
                start,
                end: start + len,
                kind: PhaseKind::Idle,
            });
            start += len;
        }
        let seg = Segmentation::new(phases).unwrap();
        let mut counts = vec![0usize; k];
        for t in phase_uniform_sample(&seg, draws, &mut rng).unwrap() {
            counts[seg.phase_of(t)] += 1;
        }
        for c in counts {
            worst = worst.max((c as f64 / draws as f64 - 1.0 / k as f64).abs());
        }
    }
    Check::new(worst <= 0.02, format!("K in {{2,3,5,10}}, {draws} draws: max |mass - 1/K| = {worst:.4} (limit 0.02)"))
}

/// Exact n/3 per class, labels consistent with the phase order, antisymmetric under swap.
pub fn relation_balance_law(batches: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0usize;
    for b in 0..batches {
        let k = 2 + b % 9;
        let mut phases = Vec::new();
        let mut start = 0;
        for _ in 0..k {
            let len = rng.random_range(1..60);
            phases.push(PhaseSpan {
                start,
                end: start + len,
                kind: PhaseKind::Idle,
            });
            start += len;
        }
        let seg = Segmentation::new(phases).unwrap();
        let n = 3 * rng.random_range(1..40);
        let pairs = relation_balanced_pairs(&seg, n, &mut rng).unwrap();
        let mut per = [0usize; 3];
        for p in &pairs {
            per[p.label as usize] += 1;
            let s = p.swapped();
            if relation_label(&seg, p.i, p.j) != p.label || relation_label(&seg, s.i, s.j) != 2 - p.label {
                bad += 1;
            }
        }
        if per != [n / 3; 3] || pairs.len() != n {
            bad += 1;
        }
    }
    Check::new(bad == 0, format!("{batches} batches: {bad} violations of n/3 balance or antisymmetry"))
}

pub fn segmentation_recall(trajectories: u64, tol: usize) -> Check {
    let (mut hit, mut total) = (0.0f64, 0usize);
    for seed in 0..trajectories {
        let t = generate(&ScenarioConfig {
            seed,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let truth = t.contact_onsets();
        let det = segment_default(&t).unwrap().contact_onsets();
        hit += boundary_recall(&det, &truth, tol) * truth.len() as f64;
        total += truth.len();
    }
    let recall = hit / total.max(1) as f64;
    Check::new(
        recall >= 0.95,
        format!("{trajectories} trajectories, {total} onsets: recall {:.2}% within +-{tol} samples (limit 95%)", recall * 100.0),
    )
}

pub fn numerics(seeds: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // Ā stays in (0, 1) for any positive step and negative A
    let mut abar_ok = true;
    for _ in 0..2000 {
        let a_log: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..3.0)).collect();
        let a = StateMatrix::from_log(&a_log, 1, 4).unwrap();
        let d = 10f64.powf(rng.random_range(-4.0..0.5));
        abar_ok &= discretize_a(&a, &[d]).unwrap().iter().all(|&v| v > 0.0 && v < 1.0);
    }
    // zero input never grows the state
    let mut decay_ok = true;
    for s in 0..seeds {
        let mut r = ChaCha8Rng::seed_from_u64(s);
        let a_log: Vec<f64> = (0..8 * 4).map(|_| r.random_range(-2.0..1.0)).collect();
        let a = StateMatrix::from_log(&a_log, 8, 4).unwrap();
        let p = SelectiveParams {
            delta: (0..8).map(|_| r.random_range(0.01..1.0)).collect(),
            b: (0..4).map(|_| r.random_range(-1.0..1.0)).collect(),
            c: (0..4).map(|_| r.random_range(-1.0..1.0)).collect(),
            d_skip: vec![0.0; 8],
        };
        let mut st = SsmState::zeros(8, 4);
        let mut y = vec![0.0; 8];
        let u: Vec<f64> = (0..8).map(|_| r.random_range(-3.0..3.0)).collect();
        ssm_step(&mut st, &u, &p, &a, &mut y).unwrap();
        let mut prev = st.norm();
        for _ in 0..200 {
            ssm_step(&mut st, &[0.0; 8], &p, &a, &mut y).unwrap();
            decay_ok &= st.norm() <= prev;
            prev = st.norm();
        }
    }
    // Δ → 0: Ā → 1 and B̄ → 0
    let a = StateMatrix::from_log(&[0.0f64, 1.0, 2.0], 1, 3).unwrap();
    let tiny = 1e-9;
    let zoh_a = discretize_a(&a, &[tiny]).unwrap().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let zoh_b = discretize_b(&[1.0f64, -2.0, 3.0], tiny).unwrap().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let zoh_ok = zoh_a < 1e-7 && zoh_b < 1e-7;
    // RevIN roundtrip in f64
    let mut rev_err = 0.0f64;
    let mut st = RevinState::<f64>::new(3, 0.01);
    st.gamma = vec![1.5, 0.7, 2.0];
    st.beta = vec![0.1, -0.4, 0.0];
    for t in 0..5000 {
        let x: Vec<f64> = (0..3).map(|c| rng.random_range(-5.0..5.0) * (c + 1) as f64 + (t as f64 * 0.01).sin()).collect();
        let y = revin_normalize(&x, &mut st);
        let back = revin_denormalize(&y, &st);
        rev_err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(rev_err, f64::max);
    }
    // streaming vs batch encoder with several channels
    let multi = EncoderConfig {
        channels: 3,
        ..EncoderConfig::default()
    };
    let stream = (0..seeds).map(|s| step_scan_max_diff(&multi, 300, 100 + s)).fold(0.0, f64::max);
    Check::new(
        abar_ok && decay_ok && zoh_ok && rev_err <= 1e-6 && stream <= 1e-5,
        format!(
            "abar in (0,1): {abar_ok}; zero-input norm non-increasing: {decay_ok}; Δ→0 |abar-1| {zoh_a:.1e}, |bbar| {zoh_b:.1e}; \
             revin roundtrip {rev_err:.1e}; streaming/batch (3 channels) {stream:.1e}"
        ),
    )
}

/// Stage-2 dataset: default button presses, where the snap phase is the critical one.
pub fn button_dataset(n: u64, seed: u64) -> Vec<LabeledTrajectory> {
    (0..n)
        .map(|i| {
            generate(&ScenarioConfig {
                kind: ScenarioKind::ButtonPress,
                seed: seed * 100_000 + i,
                ..ScenarioConfig::default()
            })
            .unwrap()
        })
        .collect()
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}
