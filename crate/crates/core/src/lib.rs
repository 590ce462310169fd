//! Tactile history compression with a selective state-space encoder.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`ssm`]: discretization, recurrent step, full-sequence scan and the Mamba block.
//! * [`encoder`]: RevIN + channel-independent block stack with streaming and batch modes.
//! * [`sim`]: synthetic 100 Hz force trajectories with ground-truth phases.
//! * [`phase`]: gradient-based phase segmentation and the three training samplers.
//! * [`autodiff`] / [`train`]: reverse-mode tape, Adam, ternary temporal
//!   discrimination pretraining and frozen-encoder planner fine-tuning.
//! * [`baselines`]: CNN, LSTM, Bi-LSTM and attention reference encoders.
//! * [`runtime`]: single-writer snapshot cell and the dual-rate fast/slow loop harness.
//! * [`bench`]: latency and memory measurements over growing history lengths.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Kernels index several parallel buffers with one loop variable.
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod baselines;
pub mod bench;
pub mod checkpoint;
pub mod encoder;
mod error;
pub mod params;
pub mod phase;
pub mod runtime;
pub mod sim;
pub mod ssm;
pub(crate) mod kernels;
pub mod train;

pub use error::{Error, Result};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating point element type used throughout the numerics.
///
/// Inference and training run in `f32`; gradient checks run the same code in `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `log(1 + exp(x))` with the usual large/small-argument shortcuts.
#[inline]
pub fn softplus<F: Scalar>(x: F) -> F {
    if x > F::lit(20.0) {
        x
    } else if x < F::lit(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[inline]
pub fn silu<F: Scalar>(x: F) -> F {
    x * sigmoid(x)
}

/// Inverse of [`softplus`] for positive arguments.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}
