//! Reference encoders for the architecture comparison.
//!
//! * `cnn1d`: stacked causal convolutions; sees only the last `R` samples.
//! * `lstm_single`: unidirectional LSTM, streamed one step at a time.
//! * `lstm_bi_full`: bidirectional LSTM re-run over the whole history per query.
//! * `attn_full`: transformer encoder with full attention over the whole history.
//!
//! Sizes are chosen so every kind lands within ±25% of the default TacMamba
//! backbone parameter count. Inputs are standardized with the same streaming
//! running statistics as the encoder (no affine part).

mod attn;
mod cnn;
mod lstm;

pub use attn::{ATTN_D, ATTN_HEADS, ATTN_LAYERS};
pub use cnn::{CNN_CHANNELS, CNN_KERNEL, CNN_LAYERS, CNN_RECEPTIVE_FIELD};
pub use lstm::{lstm_sequence, LSTM_BI_HIDDEN, LSTM_SINGLE_HIDDEN};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{standardize_sequence, RevinMode, RevinStats};
use crate::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Cnn1d,
    LstmSingle,
    LstmBiFull,
    AttnFull,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::Cnn1d, Self::LstmSingle, Self::LstmBiFull, Self::AttnFull];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Cnn1d => "cnn1d",
            Self::LstmSingle => "lstm_single",
            Self::LstmBiFull => "lstm_bi_full",
            Self::AttnFull => "attn_full",
        }
    }

    /// Streaming kinds update a fixed-size state per sample; the others
    /// re-read the whole history on every query.
    pub fn is_streaming(self) -> bool {
        matches!(self, Self::Cnn1d | Self::LstmSingle)
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown baseline {s}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub channels: usize,
    pub revin_alpha: f64,
    pub store: ParamStore<f32>,
}

impl Baseline {
    pub fn init(kind: BaselineKind, channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = match kind {
            BaselineKind::Cnn1d => cnn::init(channels, &mut rng),
            BaselineKind::LstmSingle => lstm::init(channels, LSTM_SINGLE_HIDDEN, false, &mut rng),
            BaselineKind::LstmBiFull => lstm::init(channels, LSTM_BI_HIDDEN, true, &mut rng),
            BaselineKind::AttnFull => attn::init(channels, &mut rng),
        };
        Ok(Self {
            kind,
            channels,
            revin_alpha: 0.01,
            store,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.len()
    }

    /// Width of the returned history vector.
    pub fn hidden_dim(&self) -> usize {
        match self.kind {
            BaselineKind::Cnn1d => CNN_CHANNELS,
            BaselineKind::LstmSingle => LSTM_SINGLE_HIDDEN,
            BaselineKind::LstmBiFull => 2 * LSTM_BI_HIDDEN,
            BaselineKind::AttnFull => ATTN_D,
        }
    }

    fn standardized(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.is_empty() {
            return Err(Error::Empty("history"));
        }
        if !x.len().is_multiple_of(self.channels) {
            return Err(Error::shape("baseline input channels", self.channels, x.len() % self.channels));
        }
        Ok(standardize_sequence(x, self.channels, self.revin_alpha as f32, RevinMode::Streaming))
    }

    /// Per-timestep outputs `(T, hidden_dim)` of a streaming kind over a whole sequence.
    pub fn forward_sequence(&self, x: &[f32]) -> Result<Vec<f32>> {
        let xs = self.standardized(x)?;
        match self.kind {
            BaselineKind::Cnn1d => Ok(cnn::forward(&self.store, &xs, self.channels)),
            BaselineKind::LstmSingle => lstm::forward_single(&self.store, &xs, self.channels),
            _ => Err(Error::Unsupported(format!("{} has no per-step outputs", self.kind.tag()))),
        }
    }
}

/// Fixed-size state of a streaming baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    stats: RevinStats<f32>,
    inner: StreamInner,
    scratch: Vec<f32>,
    out: Vec<f32>,
    t: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum StreamInner {
    Cnn(cnn::CnnState),
    Lstm(lstm::LstmState),
}

impl BaselineState {
    pub fn new(model: &Baseline) -> Result<Self> {
        let inner = match model.kind {
            BaselineKind::Cnn1d => StreamInner::Cnn(cnn::CnnState::new(model.channels)),
            BaselineKind::LstmSingle => StreamInner::Lstm(lstm::LstmState::new(LSTM_SINGLE_HIDDEN)),
            k => return Err(Error::Unsupported(format!("{} is not a streaming kind", k.tag()))),
        };
        Ok(Self {
            stats: RevinStats::new(model.channels),
            inner,
            scratch: vec![0.0; model.channels],
            out: vec![0.0; model.hidden_dim()],
            t: 0,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn allocated_bytes(&self) -> usize {
        let inner = match &self.inner {
            StreamInner::Cnn(s) => s.allocated_bytes(),
            StreamInner::Lstm(s) => s.allocated_bytes(),
        };
        inner + 4 * (self.stats.mean.capacity() + self.stats.var.capacity() + self.scratch.capacity() + self.out.capacity())
    }
}

/// One streaming update; constant time in the number of preceding steps.
pub fn baseline_step<'s>(model: &Baseline, state: &'s mut BaselineState, x: &[f32]) -> Result<&'s [f32]> {
    if !model.kind.is_streaming() {
        return Err(Error::Unsupported(format!("{} cannot be stepped", model.kind.tag())));
    }
    if x.len() != model.channels {
        return Err(Error::shape("baseline input channels", model.channels, x.len()));
    }
    state.stats.update(x, model.revin_alpha as f32);
    state.stats.standardize(x, &mut state.scratch);
    match &mut state.inner {
        StreamInner::Cnn(s) => cnn::step(&model.store, s, &state.scratch, &mut state.out),
        StreamInner::Lstm(s) => lstm::step(&model.store, s, &state.scratch, &mut state.out),
    }
    state.t += 1;
    Ok(&state.out)
}

/// Re-evaluates the whole `(T, C)` history and returns the vector for its last step.
pub fn baseline_query_full(model: &Baseline, history: &[f32]) -> Result<Vec<f32>> {
    if model.kind.is_streaming() {
        return Err(Error::Unsupported(format!("{} is a streaming kind", model.kind.tag())));
    }
    let xs = model.standardized(history)?;
    match model.kind {
        BaselineKind::LstmBiFull => lstm::query_bidirectional(&model.store, &xs, model.channels),
        BaselineKind::AttnFull => Ok(attn::query(&model.store, &xs, model.channels)),
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderWeights};

    #[test]
    fn parameter_counts_within_budget() {
        let reference = EncoderWeights::<f32>::init(&EncoderConfig::default()).unwrap().backbone_param_count() as f64;
        for kind in BaselineKind::ALL {
            let n = Baseline::init(kind, 1, 0).unwrap().param_count() as f64;
            assert!((n / reference - 1.0).abs() <= 0.25, "{kind:?}: {n} vs {reference}");
        }
    }

    #[test]
    fn kind_dispatch_errors() {
        let full = Baseline::init(BaselineKind::AttnFull, 1, 0).unwrap();
        assert!(matches!(BaselineState::new(&full), Err(Error::Unsupported(_))));
        let stream = Baseline::init(BaselineKind::LstmSingle, 1, 0).unwrap();
        assert!(matches!(baseline_query_full(&stream, &[1.0]), Err(Error::Unsupported(_))));
        let bi = Baseline::init(BaselineKind::LstmBiFull, 1, 0).unwrap();
        assert!(matches!(baseline_query_full(&bi, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn tags_roundtrip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.tag().parse::<BaselineKind>().unwrap(), k);
        }
    }
}
