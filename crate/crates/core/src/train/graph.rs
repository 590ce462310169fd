//! Model forward passes recorded on a [`Tape`].

use crate::autodiff::{Tape, Var};
use crate::encoder::{names, standardize_sequence, EncoderConfig, RevinMode};
use crate::ssm::names as block;
use crate::{Error, Result, Scalar};

/// Full-sequence encoder forward for a `(T, C)` input; returns `[T, d_model·C]`.
///
/// Running RevIN statistics are data-dependent constants; the affine part and
/// all block weights are differentiable.
pub fn encode_tape<F: Scalar>(
    tape: &mut Tape<'_, F>,
    store: usize,
    cfg: &EncoderConfig,
    x: &[F],
    mode: RevinMode,
) -> Result<Var> {
    let c_n = cfg.channels;
    if x.is_empty() {
        return Err(Error::Empty("encoder input sequence"));
    }
    if !x.len().is_multiple_of(c_n) {
        return Err(Error::shape("encoder input channels", c_n, x.len() % c_n));
    }
    let t_len = x.len() / c_n;
    let dims = cfg.block_dims();
    let (di, n, r) = (dims.d_inner, dims.d_state, dims.dt_rank);
    let std = standardize_sequence(x, c_n, F::lit(cfg.revin_alpha), mode);

    let gamma = tape.param(store, names::REVIN_GAMMA)?;
    let beta = tape.param(store, names::REVIN_BETA)?;
    let embed_w = tape.param(store, names::EMBED_W)?;
    let embed_b = tape.param(store, names::EMBED_B)?;
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let p = names::layer(l);
        let mut get = |name: &str| tape.param(store, &format!("{p}{name}"));
        layers.push([
            get(block::IN_PROJ)?,
            get(block::CONV_W)?,
            get(block::CONV_B)?,
            get(block::X_PROJ)?,
            get(block::DT_PROJ_W)?,
            get(block::DT_PROJ_B)?,
            get(block::A_LOG)?,
            get(block::D_SKIP)?,
            get(block::OUT_PROJ)?,
        ]);
    }

    let mut outs = Vec::with_capacity(c_n);
    for c in 0..c_n {
        let col: Vec<F> = (0..t_len).map(|t| std[t * c_n + c]).collect();
        let xs = tape.constant(col, t_len, 1)?;
        let g = tape.cols(gamma, c, 1)?;
        let b = tape.cols(beta, c, 1)?;
        let v = tape.scale_shift(xs, g, b)?;
        let mut act = tape.linear(v, embed_w, Some(embed_b))?;
        for &[in_proj, conv_w, conv_b, x_proj, dt_w, dt_b, a_log, d_skip, out_proj] in &layers {
            let xz = tape.linear(act, in_proj, None)?;
            let xs = tape.cols(xz, 0, di)?;
            let z = tape.cols(xz, di, di)?;
            let conv = tape.causal_conv(xs, conv_w, conv_b)?;
            let xc = tape.silu(conv);
            let proj = tape.linear(xc, x_proj, None)?;
            let dt_low = tape.cols(proj, 0, r)?;
            let bm = tape.cols(proj, r, n)?;
            let cm = tape.cols(proj, r + n, n)?;
            let dt = tape.linear(dt_low, dt_w, Some(dt_b))?;
            let delta = tape.softplus(dt);
            let y = tape.selective_scan(xc, delta, bm, cm, a_log, d_skip)?;
            let gate = tape.silu(z);
            let y = tape.mul(y, gate)?;
            let out = tape.linear(y, out_proj, None)?;
            act = tape.add(out, act)?;
        }
        outs.push(act);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// Pair discriminator logits `[n, 3]` from row-aligned `h_i`, `h_j`.
pub fn discriminator_tape<F: Scalar>(tape: &mut Tape<'_, F>, store: usize, h_i: Var, h_j: Var) -> Result<Var> {
    let x = tape.concat_cols(&[h_i, h_j])?;
    let w1 = tape.param(store, "l1.w")?;
    let b1 = tape.param(store, "l1.b")?;
    let w2 = tape.param(store, "l2.w")?;
    let b2 = tape.param(store, "l2.b")?;
    let hidden = tape.linear(x, w1, Some(b1))?;
    let hidden = tape.silu(hidden);
    tape.linear(hidden, w2, Some(b2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encoder_encode, EncoderWeights};

    #[test]
    fn tape_forward_matches_inference_encoder() {
        for channels in [1, 2] {
            let cfg = EncoderConfig {
                channels,
                d_model: 8,
                d_state: 4,
                layers: 2,
                seed: 3,
                ..EncoderConfig::default()
            };
            let w = EncoderWeights::<f64>::init(&cfg).unwrap();
            let x: Vec<f64> = (0..40 * channels).map(|i| ((i * 7) % 11) as f64 * 0.3 - 1.0).collect();
            let expect = encoder_encode(&x, &w, RevinMode::Streaming).unwrap();
            let mut tape = Tape::new(&[w.store()]);
            let h = encode_tape(&mut tape, 0, &cfg, &x, RevinMode::Streaming).unwrap();
            let got = tape.value(h);
            assert_eq!(got.len(), expect.len());
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
