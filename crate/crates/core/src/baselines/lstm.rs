use rand::Rng;

use crate::kernels::{linear, matvec};
use crate::params::ParamStore;
use crate::{sigmoid, Result};

pub const LSTM_SINGLE_HIDDEN: usize = 180;
pub const LSTM_BI_HIDDEN: usize = 127;

pub(super) fn init<R: Rng + ?Sized>(channels: usize, hidden: usize, bidirectional: bool, rng: &mut R) -> ParamStore<f32> {
    let bound = 1.0 / (hidden as f32).sqrt();
    let mut s = ParamStore::new();
    let dirs: &[&str] = if bidirectional { &["fwd.", "bwd."] } else { &["fwd."] };
    for p in dirs {
        let mut uni = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<f32>>();
        s.push(format!("{p}w_ih"), &[4 * hidden, channels], uni(4 * hidden * channels));
        s.push(format!("{p}w_hh"), &[4 * hidden, hidden], uni(4 * hidden * hidden));
        s.push(format!("{p}b"), &[4 * hidden], uni(4 * hidden));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub(super) struct LstmState {
    h: Vec<f32>,
    c: Vec<f32>,
    gates: Vec<f32>,
}

impl LstmState {
    pub fn new(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
            gates: vec![0.0; 4 * hidden],
        }
    }

    pub fn allocated_bytes(&self) -> usize {
        4 * (self.h.capacity() + self.c.capacity() + self.gates.capacity())
    }
}

/// Gate order i, f, g, o; `pre` already holds `W_ih x + b`.
fn cell(w_hh: &[f32], pre: &[f32], h: &mut [f32], c: &mut [f32], gates: &mut [f32]) {
    let hd = h.len();
    matvec(w_hh, h, Some(pre), gates);
    for j in 0..hd {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[hd + j]);
        let g = gates[2 * hd + j].tanh();
        let o = sigmoid(gates[3 * hd + j]);
        c[j] = f * c[j] + i * g;
        h[j] = o * c[j].tanh();
    }
}

pub(super) fn step(store: &ParamStore<f32>, s: &mut LstmState, x: &[f32], out: &mut [f32]) {
    let hd = s.h.len();
    let mut pre = vec![0.0f32; 4 * hd];
    matvec(store.get("fwd.w_ih"), x, Some(store.get("fwd.b")), &mut pre);
    cell(store.get("fwd.w_hh"), &pre, &mut s.h, &mut s.c, &mut s.gates);
    out.copy_from_slice(&s.h);
}

/// Hidden states `(T, H)` of one direction over standardized `(T, C)` input.
pub fn lstm_sequence(w_ih: &[f32], w_hh: &[f32], b: &[f32], xs: &[f32], channels: usize, reverse: bool) -> Vec<f32> {
    let t_len = xs.len() / channels;
    let g4 = b.len();
    let hd = g4 / 4;
    let pre = linear(xs, t_len, w_ih, g4, Some(b));
    let mut h = vec![0.0f32; hd];
    let mut c = vec![0.0f32; hd];
    let mut gates = vec![0.0f32; g4];
    let mut out = vec![0.0f32; t_len * hd];
    for s in 0..t_len {
        let t = if reverse { t_len - 1 - s } else { s };
        cell(w_hh, &pre[t * g4..(t + 1) * g4], &mut h, &mut c, &mut gates);
        out[t * hd..(t + 1) * hd].copy_from_slice(&h);
    }
    out
}

pub(super) fn forward_single(store: &ParamStore<f32>, xs: &[f32], channels: usize) -> Result<Vec<f32>> {
    Ok(lstm_sequence(
        store.get("fwd.w_ih"),
        store.get("fwd.w_hh"),
        store.get("fwd.b"),
        xs,
        channels,
        false,
    ))
}

/// `[→h_T ; ←h_1]`: both directions run over the full history.
pub(super) fn query_bidirectional(store: &ParamStore<f32>, xs: &[f32], channels: usize) -> Result<Vec<f32>> {
    let t_len = xs.len() / channels;
    let hd = LSTM_BI_HIDDEN;
    let f = lstm_sequence(store.get("fwd.w_ih"), store.get("fwd.w_hh"), store.get("fwd.b"), xs, channels, false);
    let b = lstm_sequence(store.get("bwd.w_ih"), store.get("bwd.w_hh"), store.get("bwd.b"), xs, channels, true);
    let mut out = f[(t_len - 1) * hd..].to_vec();
    out.extend_from_slice(&b[..hd]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::{cell, LstmState};
    use crate::encoder::{standardize_sequence, RevinMode};
    use crate::kernels::matvec;

    #[test]
    fn zero_weights_zero_input_stay_zero() {
        let mut m = Baseline::init(BaselineKind::LstmSingle, 1, 0).unwrap();
        m.store.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut st = BaselineState::new(&m).unwrap();
        for _ in 0..50 {
            assert!(baseline_step(&m, &mut st, &[0.0]).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn step_matches_sequence() {
        let m = Baseline::init(BaselineKind::LstmSingle, 2, 3).unwrap();
        let x: Vec<f32> = (0..400).map(|i| ((i * 13) % 17) as f32 * 0.2).collect();
        let seq = m.forward_sequence(&x).unwrap();
        let mut st = BaselineState::new(&m).unwrap();
        let hd = m.hidden_dim();
        for t in 0..200 {
            let h = baseline_step(&m, &mut st, &x[2 * t..2 * t + 2]).unwrap();
            for (a, b) in h.iter().zip(&seq[t * hd..(t + 1) * hd]) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn bidirectional_length_one_is_one_cell_step_each_way() {
        let m = Baseline::init(BaselineKind::LstmBiFull, 1, 1).unwrap();
        let q = baseline_query_full(&m, &[0.7]).unwrap();
        assert_eq!(q.len(), 2 * LSTM_BI_HIDDEN);
        // a single sample has one standardized value for both directions
        let xs = standardize_sequence(&[0.7f32], 1, 0.01, RevinMode::Streaming);
        for (dir, half) in ["fwd.", "bwd."].iter().zip(q.chunks(LSTM_BI_HIDDEN)) {
            let s = &m.store;
            let mut st = LstmState::new(LSTM_BI_HIDDEN);
            let mut pre = vec![0.0; 4 * LSTM_BI_HIDDEN];
            matvec(s.get(&format!("{dir}w_ih")), &xs, Some(s.get(&format!("{dir}b"))), &mut pre);
            cell(s.get(&format!("{dir}w_hh")), &pre, &mut st.h, &mut st.c, &mut st.gates);
            assert_eq!(half, &st.h[..]);
        }
    }
}
