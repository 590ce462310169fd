//! Reversible instance normalization.
//!
//! The streaming form tracks exponentially smoothed per-channel mean and
//! variance, so each sample is normalized using only the past. Batch encodes
//! can either replay the same running statistics or use per-sequence
//! statistics ([`RevinMode`]).

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Variance floor.
pub const REVIN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevinMode {
    /// Causal exponential running statistics, identical to the streaming encoder.
    #[default]
    Streaming,
    /// Mean and variance over the whole sequence (non-causal).
    Instance,
}

/// Running per-channel statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RevinStats<F = f32> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Scalar> RevinStats<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
        }
    }

    pub fn reset(&mut self) {
        self.mean.iter_mut().for_each(|m| *m = F::zero());
        self.var.iter_mut().for_each(|v| *v = F::one());
    }

    /// Folds one sample into the statistics with smoothing `alpha`.
    pub fn update(&mut self, x: &[F], alpha: F) {
        let keep = F::one() - alpha;
        let eps = F::lit(REVIN_EPS);
        for ((m, v), &xi) in self.mean.iter_mut().zip(self.var.iter_mut()).zip(x) {
            *m = keep * *m + alpha * xi;
            let dev = xi - *m;
            *v = (keep * *v + alpha * dev * dev).max(eps);
        }
    }

    /// `(x - mean) / sqrt(var + eps)` per channel, without the affine part.
    pub fn standardize(&self, x: &[F], out: &mut [F]) {
        let eps = F::lit(REVIN_EPS);
        for c in 0..x.len() {
            out[c] = (x[c] - self.mean[c]) / (self.var[c] + eps).sqrt();
        }
    }
}

/// Statistics plus the learned affine map; the unit behind normalize/denormalize.
#[derive(Debug, Clone, PartialEq)]
pub struct RevinState<F = f32> {
    pub stats: RevinStats<F>,
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub alpha: F,
}

impl<F: Scalar> RevinState<F> {
    pub fn new(channels: usize, alpha: F) -> Self {
        Self {
            stats: RevinStats::new(channels),
            gamma: vec![F::one(); channels],
            beta: vec![F::zero(); channels],
            alpha,
        }
    }
}

/// Updates the running statistics with `x` and returns `γ·(x-μ)/sqrt(σ²+ε) + β`.
pub fn revin_normalize<F: Scalar>(x: &[F], state: &mut RevinState<F>) -> Vec<F> {
    state.stats.update(x, state.alpha);
    let mut out = vec![F::zero(); x.len()];
    state.stats.standardize(x, &mut out);
    for c in 0..x.len() {
        out[c] = state.gamma[c] * out[c] + state.beta[c];
    }
    out
}

/// Inverse of [`revin_normalize`] under the current statistics (no update).
pub fn revin_denormalize<F: Scalar>(y: &[F], state: &RevinState<F>) -> Vec<F> {
    let eps = F::lit(REVIN_EPS);
    y.iter()
        .enumerate()
        .map(|(c, &v)| (v - state.beta[c]) / state.gamma[c] * (state.stats.var[c] + eps).sqrt() + state.stats.mean[c])
        .collect()
}

/// Standardized (pre-affine) sequence for a (T, C) input.
pub fn standardize_sequence<F: Scalar>(x: &[F], channels: usize, alpha: F, mode: RevinMode) -> Vec<F> {
    let t_len = x.len() / channels;
    let mut out = vec![F::zero(); x.len()];
    match mode {
        RevinMode::Streaming => {
            let mut stats = RevinStats::new(channels);
            for t in 0..t_len {
                let row = &x[t * channels..(t + 1) * channels];
                stats.update(row, alpha);
                stats.standardize(row, &mut out[t * channels..(t + 1) * channels]);
            }
        }
        RevinMode::Instance => {
            let eps = F::lit(REVIN_EPS);
            let n = F::lit(t_len as f64);
            for c in 0..channels {
                let mean = (0..t_len).map(|t| x[t * channels + c]).sum::<F>() / n;
                let var = (0..t_len)
                    .map(|t| {
                        let d = x[t * channels + c] - mean;
                        d * d
                    })
                    .sum::<F>()
                    / n;
                let scale = (var + eps).sqrt();
                for t in 0..t_len {
                    out[t * channels + c] = (x[t * channels + c] - mean) / scale;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_affine() {
        let mut st = RevinState::<f64>::new(2, 0.0);
        // alpha = 0 keeps mean 0 / var 1
        let y = revin_normalize(&[0.5, -3.0], &mut st);
        let s = (1.0 + REVIN_EPS).sqrt();
        assert!((y[0] - 0.5 / s).abs() < 1e-12);
        assert!((y[1] + 3.0 / s).abs() < 1e-12);
    }

    #[test]
    fn constant_stream_converges_to_beta() {
        let mut st = RevinState::<f64>::new(1, 0.01);
        st.gamma = vec![2.0];
        st.beta = vec![0.7];
        let mut y = vec![0.0];
        for _ in 0..5000 {
            y = revin_normalize(&[3.0], &mut st);
        }
        assert!((y[0] - 0.7).abs() < 1e-3, "{}", y[0]);
        assert!((st.stats.mean[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn roundtrip() {
        let mut st = RevinState::<f32>::new(3, 0.05);
        st.gamma = vec![1.3, 0.4, 2.0];
        st.beta = vec![-0.2, 0.0, 1.0];
        for i in 0..200 {
            let x = [i as f32 * 0.01, (i as f32).sin() * 4.0, 10.0];
            let y = revin_normalize(&x, &mut st);
            let back = revin_denormalize(&y, &st);
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn streaming_sequence_matches_stepwise() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).cos()).collect();
        let seq = standardize_sequence(&x, 1, 0.1, RevinMode::Streaming);
        let mut st = RevinState::new(1, 0.1);
        for (t, &v) in x.iter().enumerate() {
            assert_eq!(revin_normalize(&[v], &mut st)[0], seq[t]);
        }
    }

    #[test]
    fn instance_mode_has_zero_mean() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let seq = standardize_sequence(&x, 2, 0.1, RevinMode::Instance);
        let m0: f64 = (0..20).map(|t| seq[2 * t]).sum::<f64>() / 20.0;
        assert!(m0.abs() < 1e-12);
    }
}
