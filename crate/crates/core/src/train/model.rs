//! Sequence encoders that Stage 1 can train.

use crate::autodiff::{Tape, Var};
use crate::baselines::{Baseline, BaselineKind};
use crate::encoder::{encoder_encode, standardize_sequence, EncoderWeights, RevinMode};
use crate::params::ParamStore;
use crate::{Error, Result};

use super::graph::encode_tape;

/// A trainable map from a `(T, C)` sequence to `(T, hidden_dim)` history vectors.
pub trait PairEncoder {
    fn params(&self) -> &ParamStore<f32>;
    fn update_params<R>(&mut self, f: impl FnOnce(&mut ParamStore<f32>) -> R) -> Result<R>;
    fn hidden_dim(&self) -> usize;
    /// Records the encode on `tape`, reading parameters from store `store`.
    fn encode_tape(&self, tape: &mut Tape<'_, f32>, store: usize, x: &[f32], mode: RevinMode) -> Result<Var>;
    fn encode(&self, x: &[f32], mode: RevinMode) -> Result<Vec<f32>>;
}

impl PairEncoder for EncoderWeights<f32> {
    fn params(&self) -> &ParamStore<f32> {
        self.store()
    }

    fn update_params<R>(&mut self, f: impl FnOnce(&mut ParamStore<f32>) -> R) -> Result<R> {
        self.update(f)
    }

    fn hidden_dim(&self) -> usize {
        self.config().hidden_dim()
    }

    fn encode_tape(&self, tape: &mut Tape<'_, f32>, store: usize, x: &[f32], mode: RevinMode) -> Result<Var> {
        encode_tape(tape, store, self.config(), x, mode)
    }

    fn encode(&self, x: &[f32], mode: RevinMode) -> Result<Vec<f32>> {
        encoder_encode(x, self, mode)
    }
}

/// Only `lstm_single` is trainable; the input statistics have no affine part,
/// so `mode` picks the standardization alone.
impl PairEncoder for Baseline {
    fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn update_params<R>(&mut self, f: impl FnOnce(&mut ParamStore<f32>) -> R) -> Result<R> {
        Ok(f(&mut self.store))
    }

    fn hidden_dim(&self) -> usize {
        Baseline::hidden_dim(self)
    }

    fn encode_tape(&self, tape: &mut Tape<'_, f32>, store: usize, x: &[f32], mode: RevinMode) -> Result<Var> {
        if self.kind != BaselineKind::LstmSingle {
            return Err(Error::Unsupported(format!("{} has no training graph", self.kind.tag())));
        }
        let xs = self.checked(x, mode)?;
        let t_len = xs.len() / self.channels;
        let input = tape.constant(xs, t_len, self.channels)?;
        let w_ih = tape.param(store, "fwd.w_ih")?;
        let w_hh = tape.param(store, "fwd.w_hh")?;
        let b = tape.param(store, "fwd.b")?;
        tape.lstm(input, w_ih, w_hh, b, false)
    }

    fn encode(&self, x: &[f32], mode: RevinMode) -> Result<Vec<f32>> {
        if self.kind != BaselineKind::LstmSingle {
            return Err(Error::Unsupported(format!("{} has no per-step outputs", self.kind.tag())));
        }
        let xs = self.checked(x, mode)?;
        Ok(crate::baselines::lstm_sequence(
            self.store.get("fwd.w_ih"),
            self.store.get("fwd.w_hh"),
            self.store.get("fwd.b"),
            &xs,
            self.channels,
            false,
        ))
    }
}

impl Baseline {
    fn checked(&self, x: &[f32], mode: RevinMode) -> Result<Vec<f32>> {
        if x.is_empty() {
            return Err(Error::Empty("history"));
        }
        if !x.len().is_multiple_of(self.channels) {
            return Err(Error::shape("baseline input channels", self.channels, x.len() % self.channels));
        }
        Ok(standardize_sequence(x, self.channels, self.revin_alpha as f32, mode))
    }
}
