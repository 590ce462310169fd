//! Reverse-mode differentiation over a recorded operation list.
//!
//! Values are row-major 2-D tensors (rows = time or batch). The op vocabulary
//! is fixed and covers what the encoder, the baselines and the heads need.
//! Parameters are read from one or more [`ParamStore`]s; gradients come back
//! as arrays congruent with each store's data, with zeros for frozen tensors.

use crate::params::ParamStore;
use crate::{sigmoid, silu, softplus, Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param { store: usize, id: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    CausalConv { x: Var, w: Var, b: Var },
    Silu(Var),
    Softplus(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Cols { x: Var, start: usize },
    Concat(Vec<Var>),
    Gather { x: Var, idx: Vec<usize> },
    ScaleShift { x: Var, gamma: Var, beta: Var },
    Scan { u: Var, delta: Var, b: Var, c: Var, a_log: Var, d: Var },
    Lstm { x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool },
    SoftmaxCe { logits: Var, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node<F> {
    value: Vec<F>,
    rows: usize,
    cols: usize,
    op: Op,
    /// Saved forward intermediates (scan states, LSTM gates, softmax probabilities).
    saved: Vec<F>,
}

/// Gradients per parameter store, congruent with `ParamStore::data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F> {
    pub per_store: Vec<Vec<F>>,
}

impl<F: Scalar> Grads<F> {
    pub fn store(&self, i: usize) -> &[F] {
        &self.per_store[i]
    }

    pub fn all_finite(&self) -> bool {
        self.per_store.iter().flatten().all(|g| g.is_finite())
    }
}

pub struct Tape<'a, F: Scalar> {
    stores: Vec<&'a ParamStore<F>>,
    nodes: Vec<Node<F>>,
}

impl<'a, F: Scalar> Tape<'a, F> {
    pub fn new(stores: &[&'a ParamStore<F>]) -> Self {
        Self {
            stores: stores.to_vec(),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Vec<F>, rows: usize, cols: usize, op: Op, saved: Vec<F>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Vec<F>, rows: usize, cols: usize) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::shape("constant", rows * cols, value.len()));
        }
        Ok(self.push(value, rows, cols, Op::Leaf, Vec::new()))
    }

    /// A named tensor of store `store`, viewed as (rows, cols); rank-1 tensors are row vectors.
    pub fn param(&mut self, store: usize, name: &str) -> Result<Var> {
        let s = self.stores[store];
        let id = s.id(name)?;
        let (rows, cols) = s.view(id).matrix_dims();
        let value = s.slice(id).to_vec();
        Ok(self.push(value, rows, cols, Op::Param { store, id }, Vec::new()))
    }

    /// `x · wᵀ + b` with `x: [T, in]`, `w: [out, in]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (t, k) = self.shape(x);
        let (o, k2) = self.shape(w);
        if k != k2 {
            return Err(Error::shape("linear input width", k2, k));
        }
        if let Some(b) = b {
            if self.node(b).value.len() != o {
                return Err(Error::shape("linear bias", o, self.node(b).value.len()));
            }
        }
        let bias = b.map(|b| self.value(b));
        let y = crate::kernels::linear(self.value(x), t, self.value(w), o, bias);
        Ok(self.push(y, t, o, Op::Linear { x, w, b }, Vec::new()))
    }

    /// Depthwise causal convolution along rows: `y[t,c] = b[c] + Σ_j w[c,j]·x[t-(K-1)+j, c]`.
    pub fn causal_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (t_len, ch) = self.shape(x);
        let (wc, k) = self.shape(w);
        if wc != ch || self.node(b).value.len() != ch {
            return Err(Error::shape("conv channels", ch, wc));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut y = vec![F::zero(); t_len * ch];
        for t in 0..t_len {
            for c in 0..ch {
                let mut acc = bv[c];
                for j in 0..k {
                    let back = k - 1 - j;
                    if t >= back {
                        acc += wv[c * k + j] * xv[(t - back) * ch + c];
                    }
                }
                y[t * ch + c] = acc;
            }
        }
        Ok(self.push(y, t_len, ch, Op::CausalConv { x, w, b }, Vec::new()))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let y = self.value(x).iter().map(|&v| silu(v)).collect();
        self.push(y, r, c, Op::Silu(x), Vec::new())
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let y = self.value(x).iter().map(|&v| softplus(v)).collect();
        self.push(y, r, c, Op::Softplus(x), Vec::new())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul operands", self.value(a).len(), self.value(b).len()));
        }
        let (r, c) = self.shape(a);
        let y = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p * q).collect();
        Ok(self.push(y, r, c, Op::Mul(a, b), Vec::new()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add operands", self.value(a).len(), self.value(b).len()));
        }
        let (r, c) = self.shape(a);
        let y = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p + q).collect();
        Ok(self.push(y, r, c, Op::Add(a, b), Vec::new()))
    }

    /// Columns `start..start+len` of every row.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c {
            return Err(Error::shape("column slice", c, start + len));
        }
        let xv = self.value(x);
        let mut y = Vec::with_capacity(r * len);
        for t in 0..r {
            y.extend_from_slice(&xv[t * c + start..t * c + start + len]);
        }
        Ok(self.push(y, r, len, Op::Cols { x, start }, Vec::new()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::Config("concat operands differ in row count".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut y = Vec::with_capacity(rows * total);
        for t in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                y.extend_from_slice(&self.value(p)[t * c..(t + 1) * c]);
            }
        }
        Ok(self.push(y, rows, total, Op::Concat(parts.to_vec()), Vec::new()))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather row", r, bad));
        }
        let xv = self.value(x);
        let mut y = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            y.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        Ok(self.push(y, idx.len(), c, Op::Gather { x, idx: idx.to_vec() }, Vec::new()))
    }

    /// `y[t,c] = gamma[c]·x[t,c] + beta[c]`.
    pub fn scale_shift(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("scale/shift width", c, self.value(gamma).len()));
        }
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let y = (0..r * c).map(|i| g[i % c] * xv[i] + b[i % c]).collect();
        Ok(self.push(y, r, c, Op::ScaleShift { x, gamma, beta }, Vec::new()))
    }

    /// Selective scan from a zero state with `A = -exp(a_log)`:
    /// `h_t = exp(Δ_t A) ⊙ h_{t-1} + Δ_t u_t B_t`, `y_t = C_t·h_t + d ⊙ u_t`.
    ///
    /// Shapes: `u, delta: [T, di]`, `b, c: [T, N]`, `a_log: [di, N]`, `d: [1, di]`.
    pub fn selective_scan(&mut self, u: Var, delta: Var, b: Var, c: Var, a_log: Var, d: Var) -> Result<Var> {
        let (t_len, di) = self.shape(u);
        let (ad, n) = self.shape(a_log);
        if self.shape(delta) != (t_len, di) || ad != di {
            return Err(Error::shape("scan inner width", di, self.shape(delta).1));
        }
        if self.shape(b) != (t_len, n) || self.shape(c) != (t_len, n) {
            return Err(Error::shape("scan state width", n, self.shape(b).1));
        }
        if self.value(d).len() != di {
            return Err(Error::shape("scan skip", di, self.value(d).len()));
        }
        let (uv, dv, bv, cv, av, skip) = (
            self.value(u),
            self.value(delta),
            self.value(b),
            self.value(c),
            self.value(a_log),
            self.value(d),
        );
        let a: Vec<F> = av.iter().map(|&v| -v.exp()).collect();
        let mut y = vec![F::zero(); t_len * di];
        let mut hs = vec![F::zero(); t_len * di * n];
        let mut h = vec![F::zero(); di * n];
        for t in 0..t_len {
            let bt = &bv[t * n..(t + 1) * n];
            let ct = &cv[t * n..(t + 1) * n];
            for dd in 0..di {
                let dt = dv[t * di + dd];
                let ut = uv[t * di + dd];
                let du = dt * ut;
                let hd = &mut h[dd * n..(dd + 1) * n];
                let arow = &a[dd * n..(dd + 1) * n];
                let mut acc = F::zero();
                for k in 0..n {
                    let hk = (dt * arow[k]).exp() * hd[k] + du * bt[k];
                    hd[k] = hk;
                    acc += ct[k] * hk;
                }
                y[t * di + dd] = acc + skip[dd] * ut;
            }
            hs[t * di * n..(t + 1) * di * n].copy_from_slice(&h);
        }
        Ok(self.push(
            y,
            t_len,
            di,
            Op::Scan {
                u,
                delta,
                b,
                c,
                a_log,
                d,
            },
            hs,
        ))
    }

    /// Single-layer LSTM over the rows of `x` (gate order i, f, g, o) from a zero state.
    /// With `reverse`, time runs from the last row to the first.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool) -> Result<Var> {
        let (t_len, k) = self.shape(x);
        let (g4, k2) = self.shape(w_ih);
        let h_dim = g4 / 4;
        if k2 != k || g4 != 4 * h_dim || self.shape(w_hh) != (g4, h_dim) || self.value(b).len() != g4 {
            return Err(Error::shape("lstm weights", 4 * h_dim, g4));
        }
        let pre = crate::kernels::linear(self.value(x), t_len, self.value(w_ih), g4, Some(self.value(b)));
        let whh = self.value(w_hh);
        // saved per step: activated gates (4H) then cell state (H)
        let stride = 5 * h_dim;
        let mut saved = vec![F::zero(); t_len * stride];
        let mut y = vec![F::zero(); t_len * h_dim];
        let mut h = vec![F::zero(); h_dim];
        let mut c = vec![F::zero(); h_dim];
        let mut gates = vec![F::zero(); g4];
        for s in 0..t_len {
            let t = if reverse { t_len - 1 - s } else { s };
            crate::kernels::matvec(whh, &h, Some(&pre[t * g4..(t + 1) * g4]), &mut gates);
            let rec = &mut saved[t * stride..(t + 1) * stride];
            for j in 0..h_dim {
                let i_g = sigmoid(gates[j]);
                let f_g = sigmoid(gates[h_dim + j]);
                let g_g = gates[2 * h_dim + j].tanh();
                let o_g = sigmoid(gates[3 * h_dim + j]);
                c[j] = f_g * c[j] + i_g * g_g;
                h[j] = o_g * c[j].tanh();
                rec[j] = i_g;
                rec[h_dim + j] = f_g;
                rec[2 * h_dim + j] = g_g;
                rec[3 * h_dim + j] = o_g;
                rec[4 * h_dim + j] = c[j];
            }
            y[t * h_dim..(t + 1) * h_dim].copy_from_slice(&h);
        }
        Ok(self.push(
            y,
            t_len,
            h_dim,
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                reverse,
            },
            saved,
        ))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels; a 1×1 result.
    pub fn softmax_ce(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.shape(logits);
        if n == 0 {
            return Err(Error::Empty("loss batch"));
        }
        if labels.len() != n {
            return Err(Error::shape("labels", n, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::shape("label class", k, bad));
        }
        let probs = softmax_rows(self.value(logits), k);
        let mut loss = F::zero();
        for (r, &l) in labels.iter().enumerate() {
            loss -= probs[r * k + l].max(F::min_positive_value()).ln();
        }
        loss /= F::lit(n as f64);
        Ok(self.push(
            vec![loss],
            1,
            1,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
            },
            probs,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every trainable parameter.
    pub fn backward(&self, loss: Var) -> Result<Grads<F>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Config("backward on a value that was never recorded".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("loss", 1, self.value(loss).len()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = Grads {
            per_store: self.stores.iter().map(|s| vec![F::zero(); s.len()]).collect(),
        };
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>], out: &mut Grads<F>) {
        match &node.op {
            Op::Leaf => {}
            Op::Param { store, id } => {
                let view = self.stores[*store].view(*id);
                if view.trainable {
                    for (o, &gi) in out.per_store[*store][view.range()].iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (t, k) = self.shape(*x);
                let o = node.cols;
                let (xv, wv) = (self.value(*x), self.value(*w));
                {
                    let gx = slot(grads, &self.nodes, *x);
                    for r in 0..t {
                        let gr = &g[r * o..(r + 1) * o];
                        let dst = &mut gx[r * k..(r + 1) * k];
                        for (j, &gj) in gr.iter().enumerate() {
                            if gj != F::zero() {
                                crate::kernels::axpy(gj, &wv[j * k..(j + 1) * k], dst);
                            }
                        }
                    }
                }
                {
                    let gw = slot(grads, &self.nodes, *w);
                    for r in 0..t {
                        let xr = &xv[r * k..(r + 1) * k];
                        for j in 0..o {
                            let gj = g[r * o + j];
                            if gj != F::zero() {
                                crate::kernels::axpy(gj, xr, &mut gw[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    let gb = slot(grads, &self.nodes, *b);
                    for r in 0..t {
                        for j in 0..o {
                            gb[j] += g[r * o + j];
                        }
                    }
                }
            }
            Op::CausalConv { x, w, b } => {
                let (t_len, ch) = self.shape(*x);
                let k = self.shape(*w).1;
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut gx = vec![F::zero(); t_len * ch];
                let mut gw = vec![F::zero(); ch * k];
                let mut gb = vec![F::zero(); ch];
                for t in 0..t_len {
                    for c in 0..ch {
                        let gy = g[t * ch + c];
                        gb[c] += gy;
                        for j in 0..k {
                            let back = k - 1 - j;
                            if t >= back {
                                let xi = (t - back) * ch + c;
                                gw[c * k + j] += gy * xv[xi];
                                gx[xi] += gy * wv[c * k + j];
                            }
                        }
                    }
                }
                add_into(slot(grads, &self.nodes, *x), &gx);
                add_into(slot(grads, &self.nodes, *w), &gw);
                add_into(slot(grads, &self.nodes, *b), &gb);
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let gx = slot(grads, &self.nodes, *x);
                for i in 0..g.len() {
                    let s = sigmoid(xv[i]);
                    gx[i] += g[i] * s * (F::one() + xv[i] * (F::one() - s));
                }
            }
            Op::Softplus(x) => {
                let xv = self.value(*x);
                let gx = slot(grads, &self.nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * sigmoid(xv[i]);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga: Vec<F> = g.iter().zip(bv).map(|(&gi, &q)| gi * q).collect();
                let gb: Vec<F> = g.iter().zip(av).map(|(&gi, &p)| gi * p).collect();
                add_into(slot(grads, &self.nodes, *a), &ga);
                add_into(slot(grads, &self.nodes, *b), &gb);
            }
            Op::Add(a, b) => {
                add_into(slot(grads, &self.nodes, *a), g);
                add_into(slot(grads, &self.nodes, *b), g);
            }
            Op::Cols { x, start } => {
                let c = self.shape(*x).1;
                let len = node.cols;
                let gx = slot(grads, &self.nodes, *x);
                for t in 0..node.rows {
                    add_into(&mut gx[t * c + start..t * c + start + len], &g[t * len..(t + 1) * len]);
                }
            }
            Op::Concat(parts) => {
                let total = node.cols;
                let mut off = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    let gp = slot(grads, &self.nodes, p);
                    for t in 0..node.rows {
                        add_into(&mut gp[t * c..(t + 1) * c], &g[t * total + off..t * total + off + c]);
                    }
                    off += c;
                }
            }
            Op::Gather { x, idx } => {
                let c = node.cols;
                let gx = slot(grads, &self.nodes, *x);
                for (r, &i) in idx.iter().enumerate() {
                    add_into(&mut gx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                }
            }
            Op::ScaleShift { x, gamma, beta } => {
                let c = node.cols;
                let (xv, gv) = (self.value(*x), self.value(*gamma));
                let mut gg = vec![F::zero(); c];
                let mut gb = vec![F::zero(); c];
                let mut gx = vec![F::zero(); g.len()];
                for i in 0..g.len() {
                    gg[i % c] += g[i] * xv[i];
                    gb[i % c] += g[i];
                    gx[i] = g[i] * gv[i % c];
                }
                add_into(slot(grads, &self.nodes, *x), &gx);
                add_into(slot(grads, &self.nodes, *gamma), &gg);
                add_into(slot(grads, &self.nodes, *beta), &gb);
            }
            Op::Scan {
                u,
                delta,
                b,
                c,
                a_log,
                d,
            } => {
                let (t_len, di) = self.shape(*u);
                let n = self.shape(*a_log).1;
                let (uv, dv, bv, cv, av, skip) = (
                    self.value(*u),
                    self.value(*delta),
                    self.value(*b),
                    self.value(*c),
                    self.value(*a_log),
                    self.value(*d),
                );
                let a: Vec<F> = av.iter().map(|&v| -v.exp()).collect();
                let hs = &node.saved;
                let mut gu = vec![F::zero(); t_len * di];
                let mut gdelta = vec![F::zero(); t_len * di];
                let mut gb = vec![F::zero(); t_len * n];
                let mut gc = vec![F::zero(); t_len * n];
                let mut ga = vec![F::zero(); di * n];
                let mut gd = vec![F::zero(); di];
                let mut dh = vec![F::zero(); di * n];
                for t in (0..t_len).rev() {
                    let bt = &bv[t * n..(t + 1) * n];
                    let ct = &cv[t * n..(t + 1) * n];
                    let h_t = &hs[t * di * n..(t + 1) * di * n];
                    for dd in 0..di {
                        let gy = g[t * di + dd];
                        let ut = uv[t * di + dd];
                        let dt = dv[t * di + dd];
                        gd[dd] += gy * ut;
                        let mut gut = gy * skip[dd];
                        let mut gdt = F::zero();
                        let arow = &a[dd * n..(dd + 1) * n];
                        for k in 0..n {
                            let hk = h_t[dd * n + k];
                            gc[t * n + k] += gy * hk;
                            let dhk = dh[dd * n + k] + gy * ct[k];
                            let h_prev = if t > 0 { hs[(t - 1) * di * n + dd * n + k] } else { F::zero() };
                            let abar = (dt * arow[k]).exp();
                            let g_abar = dhk * h_prev * abar;
                            gdt += g_abar * arow[k] + dhk * ut * bt[k];
                            ga[dd * n + k] += g_abar * dt;
                            gut += dhk * dt * bt[k];
                            gb[t * n + k] += dhk * dt * ut;
                            dh[dd * n + k] = dhk * abar;
                        }
                        gu[t * di + dd] += gut;
                        gdelta[t * di + dd] += gdt;
                    }
                }
                // dA/da_log = A
                for (gai, &ai) in ga.iter_mut().zip(&a) {
                    *gai *= ai;
                }
                add_into(slot(grads, &self.nodes, *u), &gu);
                add_into(slot(grads, &self.nodes, *delta), &gdelta);
                add_into(slot(grads, &self.nodes, *b), &gb);
                add_into(slot(grads, &self.nodes, *c), &gc);
                add_into(slot(grads, &self.nodes, *a_log), &ga);
                add_into(slot(grads, &self.nodes, *d), &gd);
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                reverse,
            } => {
                let (t_len, k) = self.shape(*x);
                let h_dim = node.cols;
                let g4 = 4 * h_dim;
                let stride = 5 * h_dim;
                let (xv, wih, whh) = (self.value(*x), self.value(*w_ih), self.value(*w_hh));
                let saved = &node.saved;
                let mut gx = vec![F::zero(); t_len * k];
                let mut gwih = vec![F::zero(); g4 * k];
                let mut gwhh = vec![F::zero(); g4 * h_dim];
                let mut gbias = vec![F::zero(); g4];
                let mut dh_rec = vec![F::zero(); h_dim];
                let mut dc_rec = vec![F::zero(); h_dim];
                let mut da = vec![F::zero(); g4];
                let zero = vec![F::zero(); h_dim];
                for s in (0..t_len).rev() {
                    let t = if *reverse { t_len - 1 - s } else { s };
                    let prev = if s == 0 {
                        None
                    } else {
                        Some(if *reverse { t + 1 } else { t - 1 })
                    };
                    let rec = &saved[t * stride..(t + 1) * stride];
                    let c_prev = prev.map_or(&zero[..], |p| &saved[p * stride + 4 * h_dim..(p + 1) * stride]);
                    let h_prev = prev.map_or(&zero[..], |p| &node.value[p * h_dim..(p + 1) * h_dim]);
                    for j in 0..h_dim {
                        let (ig, fg, gg, og, cj) =
                            (rec[j], rec[h_dim + j], rec[2 * h_dim + j], rec[3 * h_dim + j], rec[4 * h_dim + j]);
                        let dh = g[t * h_dim + j] + dh_rec[j];
                        let tc = cj.tanh();
                        let dc = dc_rec[j] + dh * og * (F::one() - tc * tc);
                        da[j] = dc * gg * ig * (F::one() - ig);
                        da[h_dim + j] = dc * c_prev[j] * fg * (F::one() - fg);
                        da[2 * h_dim + j] = dc * ig * (F::one() - gg * gg);
                        da[3 * h_dim + j] = dh * tc * og * (F::one() - og);
                        dc_rec[j] = dc * fg;
                    }
                    dh_rec.iter_mut().for_each(|v| *v = F::zero());
                    let xr = &xv[t * k..(t + 1) * k];
                    for (r, &dar) in da.iter().enumerate() {
                        if dar == F::zero() {
                            continue;
                        }
                        gbias[r] += dar;
                        crate::kernels::axpy(dar, xr, &mut gwih[r * k..(r + 1) * k]);
                        crate::kernels::axpy(dar, h_prev, &mut gwhh[r * h_dim..(r + 1) * h_dim]);
                        crate::kernels::axpy(dar, &wih[r * k..(r + 1) * k], &mut gx[t * k..(t + 1) * k]);
                        crate::kernels::axpy(dar, &whh[r * h_dim..(r + 1) * h_dim], &mut dh_rec);
                    }
                }
                add_into(slot(grads, &self.nodes, *x), &gx);
                add_into(slot(grads, &self.nodes, *w_ih), &gwih);
                add_into(slot(grads, &self.nodes, *w_hh), &gwhh);
                add_into(slot(grads, &self.nodes, *b), &gbias);
            }
            Op::SoftmaxCe { logits, labels } => {
                let k = self.shape(*logits).1;
                let scale = g[0] / F::lit(labels.len() as f64);
                let mut gl: Vec<F> = node.saved.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gl[r * k + l] -= scale;
                }
                add_into(slot(grads, &self.nodes, *logits), &gl);
            }
        }
    }
}

fn slot<'g, F: Scalar>(grads: &'g mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var) -> &'g mut Vec<F> {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Row-wise numerically stable softmax of an `[n, k]` matrix.
pub fn softmax_rows<F: Scalar>(logits: &[F], k: usize) -> Vec<F> {
    let mut out = vec![F::zero(); logits.len()];
    for (row, dst) in logits.chunks(k).zip(out.chunks_mut(k)) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d /= z);
    }
    out
}
