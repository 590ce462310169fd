//! The tactile history compressor.
//!
//! Each input channel is standardized by RevIN, lifted to `d_model` by a
//! shared linear stem and pushed through the same stack of Mamba blocks
//! (channel independence). The per-channel outputs of the last layer at the
//! current timestep are concatenated into the history vector `h_t`, which a
//! linear projection turns into the soft prompt `z_tac`.

mod revin;

pub use revin::{
    revin_denormalize, revin_normalize, standardize_sequence, RevinMode, RevinState, RevinStats, REVIN_EPS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::matvec;
use crate::params::ParamStore;
use crate::ssm::{self, BlockDims, BlockState, BlockWeights, StateMatrix};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub channels: usize,
    pub d_model: usize,
    pub d_state: usize,
    pub layers: usize,
    pub conv_width: usize,
    pub d_z: usize,
    pub revin_alpha: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            d_model: 64,
            d_state: 16,
            layers: 4,
            conv_width: 4,
            d_z: 32,
            revin_alpha: 0.01,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// The small model used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            d_state: 4,
            layers: 1,
            d_z: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("d_model", self.d_model),
            ("d_state", self.d_state),
            ("layers", self.layers),
            ("conv_width", self.conv_width),
            ("d_z", self.d_z),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.revin_alpha > 0.0 && self.revin_alpha < 1.0) {
            return Err(Error::Config(format!(
                "revin_alpha must lie in (0, 1), got {}",
                self.revin_alpha
            )));
        }
        Ok(())
    }

    pub fn block_dims(&self) -> BlockDims {
        BlockDims::new(self.d_model, self.d_state, self.conv_width)
    }

    /// Width of `h_t`.
    pub fn hidden_dim(&self) -> usize {
        self.d_model * self.channels
    }
}

pub mod names {
    pub const EMBED_W: &str = "embed.w";
    pub const EMBED_B: &str = "embed.b";
    pub const REVIN_GAMMA: &str = "revin.gamma";
    pub const REVIN_BETA: &str = "revin.beta";
    pub const PROMPT_W: &str = "prompt.w";
    pub const PROMPT_B: &str = "prompt.b";
    /// Prefix of the soft-prompt projection; everything else is backbone.
    pub const PROMPT_PREFIX: &str = "prompt.";

    pub fn layer(l: usize) -> String {
        format!("layers.{l}.")
    }
}

/// Encoder parameters plus the realized state matrices of every layer.
///
/// The parameter store is only reachable mutably through [`EncoderWeights::update`],
/// which refreshes the cached state matrices afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<F = f32> {
    config: EncoderConfig,
    store: ParamStore<F>,
    a: Vec<StateMatrix<F>>,
}

/// Deterministic initialization from `config.seed`.
pub fn encoder_init(config: &EncoderConfig) -> Result<EncoderWeights<f32>> {
    EncoderWeights::init(config)
}

impl<F: Scalar> EncoderWeights<F> {
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dm = config.d_model;
        let c = config.channels;
        let mut store = ParamStore::new();
        let embed_w = (0..dm).map(|_| F::lit(rand::Rng::random_range(&mut rng, -1.0..=1.0))).collect();
        store.push(names::EMBED_W, &[dm, 1], embed_w);
        store.push(names::EMBED_B, &[dm], vec![F::zero(); dm]);
        store.push(names::REVIN_GAMMA, &[c], vec![F::one(); c]);
        store.push(names::REVIN_BETA, &[c], vec![F::zero(); c]);
        for l in 0..config.layers {
            ssm::init_block(&mut store, &names::layer(l), config.block_dims(), &mut rng);
        }
        let hd = config.hidden_dim();
        let bound = 1.0 / (hd as f64).sqrt();
        let prompt_w = (0..config.d_z * hd)
            .map(|_| F::lit(rand::Rng::random_range(&mut rng, -bound..=bound)))
            .collect();
        store.push(names::PROMPT_W, &[config.d_z, hd], prompt_w);
        store.push(names::PROMPT_B, &[config.d_z], vec![F::zero(); config.d_z]);
        Self::from_store(*config, store)
    }

    /// Wraps an existing store (e.g. loaded from a checkpoint), validating every tensor.
    pub fn from_store(config: EncoderConfig, store: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        let mut w = Self {
            config,
            store,
            a: Vec::new(),
        };
        w.refresh()?;
        for l in 0..config.layers {
            w.block(l)?;
        }
        let dm = config.d_model;
        let checks = [
            (names::EMBED_W, dm),
            (names::EMBED_B, dm),
            (names::REVIN_GAMMA, config.channels),
            (names::REVIN_BETA, config.channels),
            (names::PROMPT_W, config.d_z * config.hidden_dim()),
            (names::PROMPT_B, config.d_z),
        ];
        for (name, len) in checks {
            let got = w.store.slice(w.store.id(name)?).len();
            if got != len {
                return Err(Error::shape("encoder weight", len, got));
            }
        }
        Ok(w)
    }

    fn refresh(&mut self) -> Result<()> {
        let dims = self.config.block_dims();
        self.a = (0..self.config.layers)
            .map(|l| {
                let id = self.store.id(&format!("{}{}", names::layer(l), ssm::names::A_LOG))?;
                StateMatrix::from_log(self.store.slice(id), dims.d_inner, dims.d_state)
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    /// Mutates the parameters and re-derives cached quantities.
    pub fn update<R>(&mut self, f: impl FnOnce(&mut ParamStore<F>) -> R) -> Result<R> {
        let r = f(&mut self.store);
        self.refresh()?;
        Ok(r)
    }

    pub fn into_store(self) -> ParamStore<F> {
        self.store
    }

    pub fn state_matrix(&self, layer: usize) -> &StateMatrix<F> {
        &self.a[layer]
    }

    pub fn block(&self, layer: usize) -> Result<BlockWeights<'_, F>> {
        BlockWeights::from_store(&self.store, &names::layer(layer), self.config.block_dims(), &self.a[layer])
    }

    pub fn cast<G: Scalar>(&self) -> EncoderWeights<G> {
        EncoderWeights::from_store(self.config, self.store.cast()).expect("cast preserves validity")
    }

    /// Projects a history vector to the soft prompt: `z = W h + b`.
    pub fn soft_prompt(&self, h: &[F]) -> Result<Vec<F>> {
        make_soft_prompt(h, self.store.get(names::PROMPT_W), self.store.get(names::PROMPT_B))
    }

    /// Number of backbone parameters (excluding the soft-prompt projection).
    pub fn backbone_param_count(&self) -> usize {
        self.store
            .views()
            .iter()
            .filter(|v| !v.name.starts_with(names::PROMPT_PREFIX))
            .map(|v| v.len())
            .sum()
    }
}

/// `z_tac = W h + b` with `W` of shape (d_z, dim h).
pub fn make_soft_prompt<F: Scalar>(h: &[F], w: &[F], b: &[F]) -> Result<Vec<F>> {
    let d_z = b.len();
    if w.len() != d_z * h.len() {
        return Err(Error::shape("soft prompt projection", d_z * h.len(), w.len()));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("history vector"));
    }
    let mut z = vec![F::zero(); d_z];
    matvec(w, h, Some(b), &mut z);
    Ok(z)
}

/// The entire memory of the fast loop. Its size is fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStreamState<F = f32> {
    config: EncoderConfig,
    /// `blocks[channel][layer]`
    blocks: Vec<Vec<BlockState<F>>>,
    stats: RevinStats<F>,
    t: u64,
    h: Vec<F>,
    std_buf: Vec<F>,
    act: Vec<F>,
    next: Vec<F>,
}

impl<F: Scalar> EncoderStreamState<F> {
    pub fn new(config: &EncoderConfig) -> Self {
        let dims = config.block_dims();
        Self {
            config: *config,
            blocks: (0..config.channels)
                .map(|_| (0..config.layers).map(|_| BlockState::new(dims)).collect())
                .collect(),
            stats: RevinStats::new(config.channels),
            t: 0,
            h: vec![F::zero(); config.hidden_dim()],
            std_buf: vec![F::zero(); config.channels],
            act: vec![F::zero(); config.d_model],
            next: vec![F::zero(); config.d_model],
        }
    }

    /// Number of steps taken since construction or the last reset.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn h(&self) -> &[F] {
        &self.h
    }

    pub fn revin_stats(&self) -> &RevinStats<F> {
        &self.stats
    }

    pub fn reset(&mut self) {
        self.blocks.iter_mut().flatten().for_each(BlockState::reset);
        self.stats.reset();
        self.t = 0;
        self.h.iter_mut().for_each(|v| *v = F::zero());
    }

    pub fn allocated_bytes(&self) -> usize {
        let f = std::mem::size_of::<F>();
        self.blocks.iter().flatten().map(BlockState::allocated_bytes).sum::<usize>()
            + f * (self.stats.mean.capacity()
                + self.stats.var.capacity()
                + self.h.capacity()
                + self.std_buf.capacity()
                + self.act.capacity()
                + self.next.capacity())
    }
}

/// Advances the stream by one multichannel sample and returns `h_t`.
pub fn encoder_step<'s, F: Scalar>(
    state: &'s mut EncoderStreamState<F>,
    x: &[F],
    weights: &EncoderWeights<F>,
) -> Result<&'s [F]> {
    let cfg = &weights.config;
    if state.config.hidden_dim() != cfg.hidden_dim() || state.config.layers != cfg.layers {
        return Err(Error::Config("stream state built for a different encoder".into()));
    }
    if x.len() != cfg.channels {
        return Err(Error::shape("encoder input channels", cfg.channels, x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("encoder input"));
    }
    let store = &weights.store;
    let gamma = store.get(names::REVIN_GAMMA);
    let beta = store.get(names::REVIN_BETA);
    let embed_w = store.get(names::EMBED_W);
    let embed_b = store.get(names::EMBED_B);
    state.stats.update(x, F::lit(cfg.revin_alpha));
    state.stats.standardize(x, &mut state.std_buf);
    let dm = cfg.d_model;
    for c in 0..cfg.channels {
        let v = gamma[c] * state.std_buf[c] + beta[c];
        for k in 0..dm {
            state.act[k] = embed_w[k] * v + embed_b[k];
        }
        for l in 0..cfg.layers {
            let w = weights.block(l)?;
            ssm::mamba_block_step(&mut state.blocks[c][l], &state.act, &w, &mut state.next)?;
            std::mem::swap(&mut state.act, &mut state.next);
        }
        state.h[c * dm..(c + 1) * dm].copy_from_slice(&state.act);
    }
    state.t += 1;
    Ok(&state.h)
}

/// Batch encode of a (T, C) sequence into (T, d_model·C) history vectors.
pub fn encoder_encode<F: Scalar>(x: &[F], weights: &EncoderWeights<F>, mode: RevinMode) -> Result<Vec<F>> {
    let cfg = &weights.config;
    let c_n = cfg.channels;
    if x.is_empty() {
        return Err(Error::Empty("encoder input sequence"));
    }
    if !x.len().is_multiple_of(c_n) {
        return Err(Error::shape("encoder input channels", c_n, x.len() % c_n));
    }
    let t_len = x.len() / c_n;
    let std = standardize_sequence(x, c_n, F::lit(cfg.revin_alpha), mode);
    let store = &weights.store;
    let gamma = store.get(names::REVIN_GAMMA);
    let beta = store.get(names::REVIN_BETA);
    let embed_w = store.get(names::EMBED_W);
    let embed_b = store.get(names::EMBED_B);
    let dm = cfg.d_model;
    let hd = cfg.hidden_dim();
    let mut out = vec![F::zero(); t_len * hd];
    for c in 0..c_n {
        let mut act = vec![F::zero(); t_len * dm];
        for t in 0..t_len {
            let v = gamma[c] * std[t * c_n + c] + beta[c];
            for k in 0..dm {
                act[t * dm + k] = embed_w[k] * v + embed_b[k];
            }
        }
        for l in 0..cfg.layers {
            act = ssm::mamba_block_forward(&act, t_len, &weights.block(l)?)?;
        }
        for t in 0..t_len {
            out[t * hd + c * dm..t * hd + (c + 1) * dm].copy_from_slice(&act[t * dm..(t + 1) * dm]);
        }
    }
    Ok(out)
}

/// The unit exchanged between the fast encoder loop and the slow planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenSnapshot {
    pub t: u64,
    pub h: Vec<f32>,
    pub z: Vec<f32>,
    pub checksum: u64,
}

impl HiddenSnapshot {
    pub fn new(t: u64, h: Vec<f32>, z: Vec<f32>) -> Self {
        let checksum = payload_checksum(t, &h, &z);
        Self { t, h, z, checksum }
    }

    /// True when the stored checksum matches the payload.
    pub fn verify(&self) -> bool {
        payload_checksum(self.t, &self.h, &self.z) == self.checksum
    }
}

/// FNV-1a over the timestep and the raw bits of both vectors.
pub fn payload_checksum(t: u64, h: &[f32], z: &[f32]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            acc ^= b as u64;
            acc = acc.wrapping_mul(PRIME);
        }
    };
    eat(&t.to_le_bytes());
    for v in h.iter().chain(z) {
        eat(&v.to_bits().to_le_bytes());
    }
    acc
}

/// Copies `(t, h_t, z_tac)` out of the stream without touching it.
pub fn snapshot<F: Scalar>(state: &EncoderStreamState<F>, weights: &EncoderWeights<F>) -> Result<HiddenSnapshot> {
    if state.t == 0 {
        return Err(Error::NoHistory);
    }
    let z = weights.soft_prompt(&state.h)?;
    Ok(HiddenSnapshot::new(
        state.t,
        state.h.iter().map(|v| v.as_f64() as f32).collect(),
        z.iter().map(|v| v.as_f64() as f32).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn signal(t_len: usize, channels: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t_len * channels).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            d_state: 4,
            layers: 2,
            d_z: 5,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = encoder_init(&small()).unwrap();
        let b = encoder_init(&small()).unwrap();
        assert_eq!(a.store().data(), b.store().data());
        let c = encoder_init(&EncoderConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.store().data(), c.store().data());
    }

    #[test]
    fn realized_a_negative() {
        let w = encoder_init(&EncoderConfig::default()).unwrap();
        for l in 0..4 {
            assert!(w.state_matrix(l).realized().iter().all(|&a| a < 0.0 && a.is_finite()));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(encoder_init(&EncoderConfig { layers: 0, ..small() }).is_err());
        assert!(encoder_init(&EncoderConfig { revin_alpha: 1.0, ..small() }).is_err());
    }

    #[test]
    fn stream_matches_batch() {
        let cfg = EncoderConfig { channels: 2, ..small() };
        let w = encoder_init(&cfg).unwrap();
        let x = signal(100, 2, 4);
        let batch = encoder_encode(&x, &w, RevinMode::Streaming).unwrap();
        let mut st = EncoderStreamState::new(&cfg);
        let hd = cfg.hidden_dim();
        for t in 0..100 {
            let h = encoder_step(&mut st, &x[2 * t..2 * t + 2], &w).unwrap();
            for (a, b) in h.iter().zip(&batch[t * hd..(t + 1) * hd]) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn single_step_equals_batch_of_one() {
        let w = encoder_init(&small()).unwrap();
        let mut st = EncoderStreamState::new(&small());
        let h = encoder_step(&mut st, &[0.7], &w).unwrap().to_vec();
        let b = encoder_encode(&[0.7], &w, RevinMode::Streaming).unwrap();
        assert_eq!(h, b);
    }

    #[test]
    fn zero_blocks_give_lifted_input() {
        let cfg = small();
        let w = encoder_init(&cfg).unwrap();
        let mut w = w;
        w.update(|s| {
            for v in s.views().to_vec() {
                if v.name.starts_with("layers.") {
                    s.slice_mut(s.id(&v.name).unwrap()).iter_mut().for_each(|x| *x = 0.0);
                }
            }
        })
        .unwrap();
        let x = signal(30, 1, 2);
        let h = encoder_encode(&x, &w, RevinMode::Streaming).unwrap();
        // hand trace: RevIN running stats -> γ·std + β -> embed
        let mut stats = RevinStats::<f32>::new(1);
        let ew = w.store().get(names::EMBED_W);
        let eb = w.store().get(names::EMBED_B);
        for t in 0..30 {
            stats.update(&x[t..t + 1], 0.01);
            let s = (x[t] - stats.mean[0]) / (stats.var[0] + 1e-5).sqrt();
            for k in 0..8 {
                assert!((h[t * 8 + k] - (ew[k] * s + eb[k])).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn channel_permutation_permutes_blocks() {
        let cfg = EncoderConfig { channels: 3, ..small() };
        let w = encoder_init(&cfg).unwrap();
        let x = signal(40, 3, 8);
        let perm = [2usize, 0, 1];
        let xp: Vec<f32> = (0..40).flat_map(|t| perm.iter().map(move |&c| (t, c))).map(|(t, c)| x[t * 3 + c]).collect();
        let h = encoder_encode(&x, &w, RevinMode::Streaming).unwrap();
        let hp = encoder_encode(&xp, &w, RevinMode::Streaming).unwrap();
        let (dm, hd) = (8, 24);
        for t in 0..40 {
            for (new_c, &old_c) in perm.iter().enumerate() {
                assert_eq!(
                    &hp[t * hd + new_c * dm..t * hd + (new_c + 1) * dm],
                    &h[t * hd + old_c * dm..t * hd + (old_c + 1) * dm]
                );
            }
        }
    }

    #[test]
    fn channel_mismatch_and_empty() {
        let w = encoder_init(&small()).unwrap();
        let mut st = EncoderStreamState::new(&small());
        assert!(encoder_step(&mut st, &[0.0, 1.0], &w).is_err());
        assert!(matches!(
            encoder_encode(&[], &w, RevinMode::Streaming),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn snapshot_semantics() {
        let w = encoder_init(&small()).unwrap();
        let mut st = EncoderStreamState::new(&small());
        assert!(matches!(snapshot(&st, &w), Err(Error::NoHistory)));
        encoder_step(&mut st, &[1.0], &w).unwrap();
        let s1 = snapshot(&st, &w).unwrap();
        let copy = s1.clone();
        encoder_step(&mut st, &[2.0], &w).unwrap();
        let s2 = snapshot(&st, &w).unwrap();
        assert_eq!(s1, copy);
        assert_eq!(s1.t, 1);
        assert_eq!(s2.t, 2);
        assert!(s1.verify() && s2.verify());
        assert_eq!(s2.z.len(), 5);
    }

    #[test]
    fn reset_replays_identically() {
        let w = encoder_init(&small()).unwrap();
        let mut st = EncoderStreamState::new(&small());
        let x = signal(50, 1, 3);
        let first: Vec<Vec<f32>> = x.iter().map(|v| encoder_step(&mut st, &[*v], &w).unwrap().to_vec()).collect();
        st.reset();
        assert_eq!(st.t(), 0);
        let second: Vec<Vec<f32>> = x.iter().map(|v| encoder_step(&mut st, &[*v], &w).unwrap().to_vec()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn soft_prompt_maps() {
        let h = [1.0f32, -2.0, 0.5];
        let mut eye = vec![0.0f32; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        assert_eq!(make_soft_prompt(&h, &eye, &[0.0; 3]).unwrap(), h.to_vec());
        assert_eq!(make_soft_prompt(&h, &[0.0; 6], &[0.0; 2]).unwrap(), vec![0.0; 2]);
        assert!(make_soft_prompt(&h, &[0.0; 5], &[0.0; 2]).is_err());
    }

    #[test]
    fn state_size_fixed() {
        let cfg = small();
        let w = encoder_init(&cfg).unwrap();
        let mut st = EncoderStreamState::new(&cfg);
        encoder_step(&mut st, &[0.1], &w).unwrap();
        let one = st.allocated_bytes();
        for i in 0..5000 {
            encoder_step(&mut st, &[(i as f32).sin()], &w).unwrap();
        }
        assert_eq!(one, st.allocated_bytes());
    }
}
