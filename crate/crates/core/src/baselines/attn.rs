use rand::Rng;

use crate::kernels::{dot, linear};
use crate::params::ParamStore;

pub const ATTN_D: usize = 72;
pub const ATTN_HEADS: usize = 4;
pub const ATTN_LAYERS: usize = 2;
const FFN: usize = 4 * ATTN_D;
const LN_EPS: f32 = 1e-5;

pub(super) fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> ParamStore<f32> {
    let mut s = ParamStore::new();
    let mut dense = |s: &mut ParamStore<f32>, name: &str, n_out: usize, n_in: usize| {
        let bound = (6.0 / (n_in + n_out) as f32).sqrt();
        let w = (0..n_out * n_in).map(|_| rng.random_range(-bound..bound)).collect();
        s.push(format!("{name}.w"), &[n_out, n_in], w);
        s.push(format!("{name}.b"), &[n_out], vec![0.0; n_out]);
    };
    dense(&mut s, "embed", ATTN_D, channels);
    for l in 0..ATTN_LAYERS {
        s.push(format!("l{l}.ln1.g"), &[ATTN_D], vec![1.0; ATTN_D]);
        s.push(format!("l{l}.ln1.b"), &[ATTN_D], vec![0.0; ATTN_D]);
        dense(&mut s, &format!("l{l}.qkv"), 3 * ATTN_D, ATTN_D);
        dense(&mut s, &format!("l{l}.out"), ATTN_D, ATTN_D);
        s.push(format!("l{l}.ln2.g"), &[ATTN_D], vec![1.0; ATTN_D]);
        s.push(format!("l{l}.ln2.b"), &[ATTN_D], vec![0.0; ATTN_D]);
        dense(&mut s, &format!("l{l}.ff1"), FFN, ATTN_D);
        dense(&mut s, &format!("l{l}.ff2"), ATTN_D, FFN);
    }
    s.push("final_ln.g", &[ATTN_D], vec![1.0; ATTN_D]);
    s.push("final_ln.b", &[ATTN_D], vec![0.0; ATTN_D]);
    s
}

fn layer_norm(x: &[f32], g: &[f32], b: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(ATTN_D).zip(out.chunks_exact_mut(ATTN_D)) {
        let mean = row.iter().sum::<f32>() / ATTN_D as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / ATTN_D as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..ATTN_D {
            dst[j] = (row[j] - mean) * inv * g[j] + b[j];
        }
    }
    out
}

fn positional(t: usize, j: usize) -> f32 {
    let freq = 10_000f32.powf(-((j / 2 * 2) as f32) / ATTN_D as f32);
    let a = t as f32 * freq;
    if j.is_multiple_of(2) {
        a.sin()
    } else {
        a.cos()
    }
}

/// Bidirectional multi-head attention over all `T` tokens.
fn attention(qkv: &[f32], t_len: usize) -> Vec<f32> {
    let dh = ATTN_D / ATTN_HEADS;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = vec![0.0f32; t_len * ATTN_D];
    let mut scores = vec![0.0f32; t_len];
    for h in 0..ATTN_HEADS {
        let (qo, ko, vo) = (h * dh, ATTN_D + h * dh, 2 * ATTN_D + h * dh);
        for i in 0..t_len {
            let q = &qkv[i * 3 * ATTN_D + qo..][..dh];
            let mut max = f32::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(q, &qkv[j * 3 * ATTN_D + ko..][..dh]) * scale;
                max = max.max(*s);
            }
            let mut z = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            let dst = &mut out[i * ATTN_D + qo..][..dh];
            for (j, &s) in scores.iter().enumerate() {
                let v = &qkv[j * 3 * ATTN_D + vo..][..dh];
                let w = s / z;
                for k in 0..dh {
                    dst[k] += w * v[k];
                }
            }
        }
    }
    out
}

/// Final-layer representation of the last token after attending over the whole history.
pub(super) fn query(store: &ParamStore<f32>, xs: &[f32], channels: usize) -> Vec<f32> {
    let t_len = xs.len() / channels;
    let mut x = linear(xs, t_len, store.get("embed.w"), ATTN_D, Some(store.get("embed.b")));
    for (t, row) in x.chunks_exact_mut(ATTN_D).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += positional(t, j);
        }
    }
    for l in 0..ATTN_LAYERS {
        let p = |n: &str| store.get(&format!("l{l}.{n}"));
        let h = layer_norm(&x, p("ln1.g"), p("ln1.b"));
        let qkv = linear(&h, t_len, p("qkv.w"), 3 * ATTN_D, Some(p("qkv.b")));
        let a = attention(&qkv, t_len);
        let o = linear(&a, t_len, p("out.w"), ATTN_D, Some(p("out.b")));
        x.iter_mut().zip(&o).for_each(|(x, o)| *x += o);
        let h = layer_norm(&x, p("ln2.g"), p("ln2.b"));
        let mut f = linear(&h, t_len, p("ff1.w"), FFN, Some(p("ff1.b")));
        f.iter_mut().for_each(|v| *v = v.max(0.0));
        let f = linear(&f, t_len, p("ff2.w"), ATTN_D, Some(p("ff2.b")));
        x.iter_mut().zip(&f).for_each(|(x, f)| *x += f);
    }
    let last = &x[(t_len - 1) * ATTN_D..];
    layer_norm(last, store.get("final_ln.g"), store.get("final_ln.b"))
}
