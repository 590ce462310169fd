//! Selective state-space numerics.
//!
//! The continuous system `h' = A h + B x, y = C h` is discretized per step with
//! `Ā = exp(Δ·A)` (zero-order hold) and the Euler input map `B̄ = Δ·B`. `A` is
//! diagonal, real and strictly negative, stored as `a_log` with `A = -exp(a_log)`.
//!
//! Two independent code paths evaluate the recurrence: [`ssm_step`] advances one
//! timestep for all channels, [`ssm_scan`] walks each channel through the whole
//! sequence. Tests hold them against each other.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::{dot, matvec};
use crate::params::ParamStore;
use crate::{silu, softplus, Error, Result, Scalar};

/// Lower and upper bound of the initial step sizes, sampled log-uniformly.
pub const DT_INIT_RANGE: (f64, f64) = (1e-3, 1e-1);

/// Diagonal continuous-time decay rates, one row of `d_state` entries per inner channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix<F = f32> {
    a_log: Vec<F>,
    a: Vec<F>,
    d_inner: usize,
    d_state: usize,
}

impl<F: Scalar> StateMatrix<F> {
    pub fn from_log(a_log: &[F], d_inner: usize, d_state: usize) -> Result<Self> {
        if a_log.len() != d_inner * d_state {
            return Err(Error::shape("state matrix", d_inner * d_state, a_log.len()));
        }
        if a_log.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("a_log"));
        }
        let a = a_log.iter().map(|&v| -v.exp()).collect();
        Ok(Self {
            a_log: a_log.to_vec(),
            a,
            d_inner,
            d_state,
        })
    }

    /// S4D-real initialization: state index `n` decays at rate `n + 1`.
    pub fn s4d_real(d_inner: usize, d_state: usize) -> Self {
        let a_log: Vec<F> = (0..d_inner)
            .flat_map(|_| (0..d_state).map(|n| F::lit(((n + 1) as f64).ln())))
            .collect();
        Self::from_log(&a_log, d_inner, d_state).expect("finite init")
    }

    pub fn a_log(&self) -> &[F] {
        &self.a_log
    }

    /// Realized diagonal entries `-exp(a_log)`.
    pub fn realized(&self) -> &[F] {
        &self.a
    }

    pub fn d_inner(&self) -> usize {
        self.d_inner
    }

    pub fn d_state(&self) -> usize {
        self.d_state
    }
}

/// Input-dependent parameters for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveParams<F = f32> {
    /// Positive step size per inner channel.
    pub delta: Vec<F>,
    /// Input map row, one entry per state dimension.
    pub b: Vec<F>,
    /// Output map row, one entry per state dimension.
    pub c: Vec<F>,
    /// Direct feedthrough per inner channel.
    pub d_skip: Vec<F>,
}

impl<F: Scalar> SelectiveParams<F> {
    pub fn zeros(d_inner: usize, d_state: usize) -> Self {
        Self {
            delta: vec![F::zero(); d_inner],
            b: vec![F::zero(); d_state],
            c: vec![F::zero(); d_state],
            d_skip: vec![F::zero(); d_inner],
        }
    }

    fn check(&self, a: &StateMatrix<F>) -> Result<()> {
        if self.delta.len() != a.d_inner {
            return Err(Error::shape("delta", a.d_inner, self.delta.len()));
        }
        if self.d_skip.len() != a.d_inner {
            return Err(Error::shape("d_skip", a.d_inner, self.d_skip.len()));
        }
        if self.b.len() != a.d_state {
            return Err(Error::shape("B row", a.d_state, self.b.len()));
        }
        if self.c.len() != a.d_state {
            return Err(Error::shape("C row", a.d_state, self.c.len()));
        }
        Ok(())
    }
}

/// Latent state of one selective SSM, fixed size for its whole lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmState<F = f32> {
    h: Vec<F>,
    d_inner: usize,
    d_state: usize,
}

impl<F: Scalar> SsmState<F> {
    pub fn zeros(d_inner: usize, d_state: usize) -> Self {
        Self {
            h: vec![F::zero(); d_inner * d_state],
            d_inner,
            d_state,
        }
    }

    pub fn h(&self) -> &[F] {
        &self.h
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = F::zero());
    }

    pub fn norm(&self) -> F {
        self.h.iter().map(|&v| v * v).sum::<F>().sqrt()
    }

    pub fn allocated_bytes(&self) -> usize {
        self.h.capacity() * std::mem::size_of::<F>()
    }
}

/// `Ā = exp(Δ·A)` for every (inner channel, state) entry; `delta` holds one step per inner channel.
pub fn discretize_a<F: Scalar>(a: &StateMatrix<F>, delta: &[F]) -> Result<Vec<F>> {
    if delta.len() != a.d_inner {
        return Err(Error::shape("delta", a.d_inner, delta.len()));
    }
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::NumericDomain("delta"));
    }
    let n = a.d_state;
    let mut out = Vec::with_capacity(a.a.len());
    for (d, &dt) in delta.iter().enumerate() {
        out.extend(a.a[d * n..(d + 1) * n].iter().map(|&ad| (dt * ad).exp()));
    }
    Ok(out)
}

/// Euler input map `B̄ = Δ·B`.
pub fn discretize_b<F: Scalar>(b_t: &[F], delta: F) -> Result<Vec<F>> {
    if !delta.is_finite() || b_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("discretize_b"));
    }
    Ok(b_t.iter().map(|&b| delta * b).collect())
}

/// One recurrent update: `h ← Ā⊙h + B̄·u`, `y = ⟨C, h⟩ + d_skip·u`.
pub fn ssm_step<F: Scalar>(
    state: &mut SsmState<F>,
    u: &[F],
    params: &SelectiveParams<F>,
    a: &StateMatrix<F>,
    y: &mut [F],
) -> Result<()> {
    if state.d_inner != a.d_inner || state.d_state != a.d_state {
        return Err(Error::shape("ssm state", a.d_inner * a.d_state, state.h.len()));
    }
    if u.len() != a.d_inner {
        return Err(Error::shape("ssm input", a.d_inner, u.len()));
    }
    if y.len() != a.d_inner {
        return Err(Error::shape("ssm output", a.d_inner, y.len()));
    }
    params.check(a)?;
    let n = a.d_state;
    for d in 0..a.d_inner {
        let dt = params.delta[d];
        let du = dt * u[d];
        let h = &mut state.h[d * n..(d + 1) * n];
        let ad = &a.a[d * n..(d + 1) * n];
        let mut acc = F::zero();
        for k in 0..n {
            let hk = (dt * ad[k]).exp() * h[k] + du * params.b[k];
            h[k] = hk;
            acc += params.c[k] * hk;
        }
        y[d] = acc + params.d_skip[d] * u[d];
    }
    Ok(())
}

/// Full-sequence evaluation from a zero initial state. `u_seq` is (T, d_inner) row-major.
pub fn ssm_scan<F: Scalar>(
    u_seq: &[F],
    params_seq: &[SelectiveParams<F>],
    a: &StateMatrix<F>,
) -> Result<Vec<F>> {
    let di = a.d_inner;
    let n = a.d_state;
    let t_len = params_seq.len();
    if t_len == 0 {
        return Err(Error::Empty("ssm_scan sequence"));
    }
    if u_seq.len() != t_len * di {
        return Err(Error::shape("ssm_scan input", t_len * di, u_seq.len()));
    }
    for p in params_seq {
        p.check(a)?;
    }
    let mut y = vec![F::zero(); t_len * di];
    let mut h = vec![F::zero(); n];
    // Channel-major: each inner channel runs through the whole sequence on its own.
    for d in 0..di {
        h.iter_mut().for_each(|v| *v = F::zero());
        let ad = &a.a[d * n..(d + 1) * n];
        for (t, p) in params_seq.iter().enumerate() {
            let u = u_seq[t * di + d];
            let dt = p.delta[d];
            let mut acc = F::zero();
            for k in 0..n {
                h[k] = (dt * ad[k]).exp() * h[k] + dt * p.b[k] * u;
                acc += p.c[k] * h[k];
            }
            y[t * di + d] = acc + p.d_skip[d] * u;
        }
    }
    Ok(y)
}

/// Flat-buffer scan used by the block's batch forward.
/// `u`, `delta`: (T, d_inner); `b`, `c`: (T, d_state).
pub(crate) fn scan_flat<F: Scalar>(
    u: &[F],
    delta: &[F],
    b: &[F],
    c: &[F],
    a: &StateMatrix<F>,
    d_skip: &[F],
    t_len: usize,
) -> Vec<F> {
    let di = a.d_inner;
    let n = a.d_state;
    let mut y = vec![F::zero(); t_len * di];
    let mut h = vec![F::zero(); di * n];
    for t in 0..t_len {
        let bt = &b[t * n..(t + 1) * n];
        let ct = &c[t * n..(t + 1) * n];
        for d in 0..di {
            let dt = delta[t * di + d];
            let ut = u[t * di + d];
            let du = dt * ut;
            let hd = &mut h[d * n..(d + 1) * n];
            let ad = &a.a[d * n..(d + 1) * n];
            let mut acc = F::zero();
            for k in 0..n {
                let hk = (dt * ad[k]).exp() * hd[k] + du * bt[k];
                hd[k] = hk;
                acc += ct[k] * hk;
            }
            y[t * di + d] = acc + d_skip[d] * ut;
        }
    }
    y
}

/// Dimensions of one Mamba block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub d_model: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub dt_rank: usize,
    pub conv_width: usize,
}

impl BlockDims {
    /// Standard defaults: `d_inner = 2·d_model`, `dt_rank = ceil(d_model / 16)`.
    pub fn new(d_model: usize, d_state: usize, conv_width: usize) -> Self {
        Self {
            d_model,
            d_inner: 2 * d_model,
            d_state,
            dt_rank: d_model.div_ceil(16),
            conv_width,
        }
    }

    pub fn proj_width(&self) -> usize {
        self.dt_rank + 2 * self.d_state
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_inner == 0 || self.d_state == 0 || self.dt_rank == 0 {
            return Err(Error::Config("block dimensions must be >= 1".into()));
        }
        if self.conv_width == 0 {
            return Err(Error::Config("conv width must be >= 1".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (dm, di, n, r, w) = (self.d_model, self.d_inner, self.d_state, self.dt_rank, self.conv_width);
        2 * di * dm + di * w + di + self.proj_width() * di + di * r + di + di * n + di + dm * di
    }
}

/// Parameter names of one block, relative to its prefix.
pub mod names {
    pub const IN_PROJ: &str = "in_proj.w";
    pub const CONV_W: &str = "conv.w";
    pub const CONV_B: &str = "conv.b";
    pub const X_PROJ: &str = "x_proj.w";
    pub const DT_PROJ_W: &str = "dt_proj.w";
    pub const DT_PROJ_B: &str = "dt_proj.b";
    pub const A_LOG: &str = "a_log";
    pub const D_SKIP: &str = "d_skip";
    pub const OUT_PROJ: &str = "out_proj.w";
}

/// Adds a freshly initialized block under `prefix` to `store`.
pub fn init_block<F: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<F>,
    prefix: &str,
    dims: BlockDims,
    rng: &mut R,
) {
    let BlockDims {
        d_model: dm,
        d_inner: di,
        d_state: n,
        dt_rank: r,
        conv_width: w,
    } = dims;
    let mut uniform = |len: usize, bound: f64| -> Vec<F> {
        (0..len).map(|_| F::lit(rng.random_range(-bound..=bound))).collect()
    };
    let in_proj = uniform(2 * di * dm, 1.0 / (dm as f64).sqrt());
    let conv_w = uniform(di * w, 1.0 / (w as f64).sqrt());
    let conv_b = uniform(di, 1.0 / (w as f64).sqrt());
    let x_proj = uniform(dims.proj_width() * di, 1.0 / (di as f64).sqrt());
    let dt_w = uniform(di * r, 1.0 / (r as f64).sqrt());
    let out_proj = uniform(dm * di, 1.0 / (di as f64).sqrt());
    let (lo, hi) = DT_INIT_RANGE;
    let dt_b: Vec<F> = (0..di)
        .map(|_| {
            let dt = rng.random_range(lo.ln()..hi.ln()).exp();
            F::lit(crate::inverse_softplus(dt))
        })
        .collect();
    let a = StateMatrix::<F>::s4d_real(di, n);

    store.push(format!("{prefix}{}", names::IN_PROJ), &[2 * di, dm], in_proj);
    store.push(format!("{prefix}{}", names::CONV_W), &[di, w], conv_w);
    store.push(format!("{prefix}{}", names::CONV_B), &[di], conv_b);
    store.push(format!("{prefix}{}", names::X_PROJ), &[dims.proj_width(), di], x_proj);
    store.push(format!("{prefix}{}", names::DT_PROJ_W), &[di, r], dt_w);
    store.push(format!("{prefix}{}", names::DT_PROJ_B), &[di], dt_b);
    store.push(format!("{prefix}{}", names::A_LOG), &[di, n], a.a_log().to_vec());
    store.push(format!("{prefix}{}", names::D_SKIP), &[di], vec![F::one(); di]);
    store.push(format!("{prefix}{}", names::OUT_PROJ), &[dm, di], out_proj);
}

/// Borrowed view of one block's weights.
#[derive(Debug, Clone, Copy)]
pub struct BlockWeights<'a, F = f32> {
    pub dims: BlockDims,
    pub in_proj: &'a [F],
    pub conv_w: &'a [F],
    pub conv_b: &'a [F],
    pub x_proj: &'a [F],
    pub dt_proj_w: &'a [F],
    pub dt_proj_b: &'a [F],
    pub a: &'a StateMatrix<F>,
    pub d_skip: &'a [F],
    pub out_proj: &'a [F],
}

impl<'a, F: Scalar> BlockWeights<'a, F> {
    pub fn from_store(
        store: &'a ParamStore<F>,
        prefix: &str,
        dims: BlockDims,
        a: &'a StateMatrix<F>,
    ) -> Result<Self> {
        let get = |name: &str, len: usize| -> Result<&'a [F]> {
            let s = store.slice(store.id(&format!("{prefix}{name}"))?);
            if s.len() != len {
                return Err(Error::shape("block weight", len, s.len()));
            }
            Ok(s)
        };
        let (dm, di, n, r, w) = (dims.d_model, dims.d_inner, dims.d_state, dims.dt_rank, dims.conv_width);
        if a.d_inner != di || a.d_state != n {
            return Err(Error::shape("block state matrix", di * n, a.d_inner * a.d_state));
        }
        Ok(Self {
            dims,
            in_proj: get(names::IN_PROJ, 2 * di * dm)?,
            conv_w: get(names::CONV_W, di * w)?,
            conv_b: get(names::CONV_B, di)?,
            x_proj: get(names::X_PROJ, dims.proj_width() * di)?,
            dt_proj_w: get(names::DT_PROJ_W, di * r)?,
            dt_proj_b: get(names::DT_PROJ_B, di)?,
            a,
            d_skip: get(names::D_SKIP, di)?,
            out_proj: get(names::OUT_PROJ, dm * di)?,
        })
    }
}

/// `(Δ_t, B_t, C_t)` from the post-convolution activation `u_t`; `Δ_t = softplus(W_dt·(W_x u_t)_dt + b_dt)`.
pub fn selective_projection<F: Scalar>(u: &[F], w: &BlockWeights<'_, F>) -> Result<SelectiveParams<F>> {
    let mut p = SelectiveParams::zeros(w.dims.d_inner, w.dims.d_state);
    let mut scratch = vec![F::zero(); w.dims.proj_width()];
    selective_projection_into(u, w, &mut scratch, &mut p)?;
    Ok(p)
}

fn selective_projection_into<F: Scalar>(
    u: &[F],
    w: &BlockWeights<'_, F>,
    proj: &mut [F],
    out: &mut SelectiveParams<F>,
) -> Result<()> {
    let BlockDims {
        d_inner: di,
        d_state: n,
        dt_rank: r,
        ..
    } = w.dims;
    if u.len() != di {
        return Err(Error::shape("selective projection input", di, u.len()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("selective projection input"));
    }
    matvec(w.x_proj, u, None, proj);
    let (dt_low, rest) = proj.split_at(r);
    out.b.copy_from_slice(&rest[..n]);
    out.c.copy_from_slice(&rest[n..2 * n]);
    for d in 0..di {
        let z = dot(&w.dt_proj_w[d * r..(d + 1) * r], dt_low) + w.dt_proj_b[d];
        out.delta[d] = softplus(z);
    }
    out.d_skip.copy_from_slice(w.d_skip);
    Ok(())
}

/// Streaming state of one block: conv ring buffer, SSM state and step scratch space.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState<F = f32> {
    dims: BlockDims,
    /// Last `conv_width - 1` pre-convolution inputs, oldest first.
    conv_buf: Vec<F>,
    ssm: SsmState<F>,
    xz: Vec<F>,
    xc: Vec<F>,
    proj: Vec<F>,
    params: SelectiveParams<F>,
    y: Vec<F>,
}

impl<F: Scalar> BlockState<F> {
    pub fn new(dims: BlockDims) -> Self {
        let di = dims.d_inner;
        Self {
            dims,
            conv_buf: vec![F::zero(); (dims.conv_width - 1) * di],
            ssm: SsmState::zeros(di, dims.d_state),
            xz: vec![F::zero(); 2 * di],
            xc: vec![F::zero(); di],
            proj: vec![F::zero(); dims.proj_width()],
            params: SelectiveParams::zeros(di, dims.d_state),
            y: vec![F::zero(); di],
        }
    }

    pub fn reset(&mut self) {
        self.conv_buf.iter_mut().for_each(|v| *v = F::zero());
        self.ssm.reset();
    }

    pub fn ssm(&self) -> &SsmState<F> {
        &self.ssm
    }

    pub fn allocated_bytes(&self) -> usize {
        let f = std::mem::size_of::<F>();
        f * (self.conv_buf.capacity()
            + self.xz.capacity()
            + self.xc.capacity()
            + self.proj.capacity()
            + self.y.capacity()
            + self.params.delta.capacity()
            + self.params.b.capacity()
            + self.params.c.capacity()
            + self.params.d_skip.capacity())
            + self.ssm.allocated_bytes()
    }
}

/// One streaming step of the block:
/// in-proj → causal depthwise conv → SiLU → selective SSM → SiLU gate → out-proj → residual.
pub fn mamba_block_step<F: Scalar>(
    state: &mut BlockState<F>,
    x: &[F],
    w: &BlockWeights<'_, F>,
    out: &mut [F],
) -> Result<()> {
    let dims = w.dims;
    if state.dims != dims {
        return Err(Error::shape("block state", dims.d_inner, state.dims.d_inner));
    }
    if x.len() != dims.d_model || out.len() != dims.d_model {
        return Err(Error::shape("block input", dims.d_model, x.len()));
    }
    let di = dims.d_inner;
    let k = dims.conv_width;
    matvec(w.in_proj, x, None, &mut state.xz);
    let (xs, z) = state.xz.split_at(di);
    for d in 0..di {
        let taps = &w.conv_w[d * k..(d + 1) * k];
        let mut acc = w.conv_b[d] + taps[k - 1] * xs[d];
        for j in 0..k - 1 {
            acc += taps[j] * state.conv_buf[j * di + d];
        }
        state.xc[d] = silu(acc);
    }
    if k > 1 {
        state.conv_buf.copy_within(di.., 0);
        let last = (k - 2) * di;
        state.conv_buf[last..last + di].copy_from_slice(xs);
    }
    selective_projection_into(&state.xc, w, &mut state.proj, &mut state.params)?;
    ssm_step(&mut state.ssm, &state.xc, &state.params, w.a, &mut state.y)?;
    for d in 0..di {
        state.y[d] *= silu(z[d]);
    }
    matvec(w.out_proj, &state.y, None, out);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += xi;
    }
    Ok(())
}

/// Batch forward of one block over a (T, d_model) sequence.
pub fn mamba_block_forward<F: Scalar>(x: &[F], t_len: usize, w: &BlockWeights<'_, F>) -> Result<Vec<F>> {
    let dims = w.dims;
    let (dm, di, n, r, k) = (dims.d_model, dims.d_inner, dims.d_state, dims.dt_rank, dims.conv_width);
    if t_len == 0 {
        return Err(Error::Empty("block input"));
    }
    if x.len() != t_len * dm {
        return Err(Error::shape("block input", t_len * dm, x.len()));
    }
    let pw = dims.proj_width();
    let xz = crate::kernels::linear(x, t_len, w.in_proj, 2 * di, None);
    let mut xc = vec![F::zero(); t_len * di];
    for t in 0..t_len {
        for d in 0..di {
            let mut acc = w.conv_b[d];
            for j in 0..k {
                // tap j multiplies x_{t-(k-1)+j}
                let back = k - 1 - j;
                if t >= back {
                    acc += w.conv_w[d * k + j] * xz[(t - back) * 2 * di + d];
                }
            }
            xc[t * di + d] = silu(acc);
        }
    }
    let proj = crate::kernels::linear(&xc, t_len, w.x_proj, pw, None);
    let mut delta = vec![F::zero(); t_len * di];
    let mut b = vec![F::zero(); t_len * n];
    let mut c = vec![F::zero(); t_len * n];
    for t in 0..t_len {
        let row = &proj[t * pw..(t + 1) * pw];
        b[t * n..(t + 1) * n].copy_from_slice(&row[r..r + n]);
        c[t * n..(t + 1) * n].copy_from_slice(&row[r + n..r + 2 * n]);
        for d in 0..di {
            delta[t * di + d] = softplus(dot(&w.dt_proj_w[d * r..(d + 1) * r], &row[..r]) + w.dt_proj_b[d]);
        }
    }
    let mut y = scan_flat(&xc, &delta, &b, &c, w.a, w.d_skip, t_len);
    for t in 0..t_len {
        for d in 0..di {
            y[t * di + d] *= silu(xz[t * 2 * di + di + d]);
        }
    }
    let mut out = crate::kernels::linear(&y, t_len, w.out_proj, dm, None);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += xi;
    }
    Ok(out)
}
