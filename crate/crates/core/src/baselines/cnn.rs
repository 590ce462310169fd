use rand::Rng;

use crate::params::ParamStore;

pub const CNN_LAYERS: usize = 4;
pub const CNN_KERNEL: usize = 5;
pub const CNN_CHANNELS: usize = 93;
/// Input samples that can influence one output.
pub const CNN_RECEPTIVE_FIELD: usize = 1 + CNN_LAYERS * (CNN_KERNEL - 1);

fn in_width(layer: usize, channels: usize) -> usize {
    if layer == 0 {
        channels
    } else {
        CNN_CHANNELS
    }
}

/// Layer `l` weights `[out, in, K]`, tap `K-1` on the current sample.
pub(super) fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> ParamStore<f32> {
    let mut s = ParamStore::new();
    for l in 0..CNN_LAYERS {
        let cin = in_width(l, channels);
        let bound = 1.0 / ((cin * CNN_KERNEL) as f32).sqrt();
        let n = CNN_CHANNELS * cin * CNN_KERNEL;
        s.push(
            format!("conv{l}.w"),
            &[CNN_CHANNELS, cin, CNN_KERNEL],
            (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
        );
        s.push(format!("conv{l}.b"), &[CNN_CHANNELS], vec![0.0; CNN_CHANNELS]);
    }
    s
}

/// Per-layer history of the last `K-1` layer inputs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub(super) struct CnnState {
    bufs: Vec<Vec<f32>>,
    act: Vec<f32>,
    next: Vec<f32>,
}

impl CnnState {
    pub fn new(channels: usize) -> Self {
        Self {
            bufs: (0..CNN_LAYERS)
                .map(|l| vec![0.0; (CNN_KERNEL - 1) * in_width(l, channels)])
                .collect(),
            act: Vec::with_capacity(CNN_CHANNELS.max(channels)),
            next: vec![0.0; CNN_CHANNELS],
        }
    }

    pub fn allocated_bytes(&self) -> usize {
        4 * (self.bufs.iter().map(Vec::capacity).sum::<usize>() + self.act.capacity() + self.next.capacity())
    }
}

fn conv_out(w: &[f32], b: &[f32], window: impl Fn(usize, usize) -> f32, cin: usize, out: &mut [f32]) {
    for (o, dst) in out.iter_mut().enumerate() {
        let mut acc = b[o];
        let wo = &w[o * cin * CNN_KERNEL..(o + 1) * cin * CNN_KERNEL];
        for i in 0..cin {
            let taps = &wo[i * CNN_KERNEL..(i + 1) * CNN_KERNEL];
            for (k, &tap) in taps.iter().enumerate() {
                acc += tap * window(k, i);
            }
        }
        *dst = acc.max(0.0);
    }
}

pub(super) fn step(store: &ParamStore<f32>, s: &mut CnnState, x: &[f32], out: &mut [f32]) {
    s.act.clear();
    s.act.extend_from_slice(x);
    for l in 0..CNN_LAYERS {
        let cin = s.act.len();
        let buf = &mut s.bufs[l];
        {
            let (act, buf) = (&s.act, &*buf);
            let window = |k: usize, i: usize| if k == CNN_KERNEL - 1 { act[i] } else { buf[k * cin + i] };
            conv_out(store.get(&format!("conv{l}.w")), store.get(&format!("conv{l}.b")), window, cin, &mut s.next);
        }
        buf.copy_within(cin.., 0);
        let last = (CNN_KERNEL - 2) * cin;
        buf[last..last + cin].copy_from_slice(&s.act);
        s.act.clear();
        s.act.extend_from_slice(&s.next);
    }
    out.copy_from_slice(&s.act);
}

/// Per-timestep outputs over a standardized `(T, C)` sequence, zero-padded on the left.
pub(super) fn forward(store: &ParamStore<f32>, xs: &[f32], channels: usize) -> Vec<f32> {
    let t_len = xs.len() / channels;
    let mut act = xs.to_vec();
    for l in 0..CNN_LAYERS {
        let cin = in_width(l, channels);
        let mut next = vec![0.0f32; t_len * CNN_CHANNELS];
        for t in 0..t_len {
            let window = |k: usize, i: usize| {
                let back = CNN_KERNEL - 1 - k;
                if t >= back {
                    act[(t - back) * cin + i]
                } else {
                    0.0
                }
            };
            conv_out(
                store.get(&format!("conv{l}.w")),
                store.get(&format!("conv{l}.b")),
                window,
                cin,
                &mut next[t * CNN_CHANNELS..(t + 1) * CNN_CHANNELS],
            );
        }
        act = next;
    }
    act
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn receptive_field_is_seventeen() {
        assert_eq!(CNN_RECEPTIVE_FIELD, 17);
    }

    #[test]
    fn step_matches_sequence() {
        let m = Baseline::init(BaselineKind::Cnn1d, 1, 2).unwrap();
        let x: Vec<f32> = (0..60).map(|i| ((i * 7) % 5) as f32).collect();
        let seq = m.forward_sequence(&x).unwrap();
        let mut st = BaselineState::new(&m).unwrap();
        for t in 0..60 {
            let h = baseline_step(&m, &mut st, &x[t..t + 1]).unwrap();
            for (a, b) in h.iter().zip(&seq[t * CNN_CHANNELS..(t + 1) * CNN_CHANNELS]) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn output_ignores_samples_beyond_receptive_field() {
        let m = Baseline::init(BaselineKind::Cnn1d, 1, 5).unwrap();
        let xs: Vec<f32> = (0..40).map(|i| (i as f32 * 0.7).cos()).collect();
        let t = 35;
        let at = |xs: &[f32]| super::forward(&m.store, xs, 1)[t * CNN_CHANNELS..(t + 1) * CNN_CHANNELS].to_vec();
        let base = at(&xs);
        let mut far = xs.clone();
        for v in &mut far[..=t - CNN_RECEPTIVE_FIELD] {
            *v += 5.0;
        }
        assert_eq!(at(&far), base);
        let mut near = xs.clone();
        near[t + 1 - CNN_RECEPTIVE_FIELD] += 5.0;
        assert_ne!(at(&near), base);
    }
}
