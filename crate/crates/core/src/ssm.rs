//! Input-dependent state-space scan (SS2D) and the residual VSS block built on it.
//!
//! Layout contract of the fused scan op: `x`, `delta` are `[N, C, H, W]`,
//! `b`, `c` are `[N, d, H, W]`, `a` is `[C, d]` (negative), `d_skip` is `[C]`.
//! For every scan path the recurrence
//!
//! ```text
//! h_t = exp(delta_t * A) . h_{t-1} + (delta_t * B_t) x_t,   h_0 = 0
//! y_t = <C_t, h_t> + D . x_t
//! ```
//!
//! runs independently per channel; the output is the sum over paths.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{shape_err, Result};
use crate::nn::{kaiming_bound, ChannelNorm, Conv, DwConv, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub n: usize,
    pub ch: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl ScanDims {
    pub(crate) fn infer(
        x: &[usize],
        delta: &[usize],
        a: &[usize],
        b: &[usize],
        c: &[usize],
        d_skip: &[usize],
    ) -> Result<Self> {
        let [n, ch, h, w] = x[..] else {
            return Err(shape_err(format!("scan input must be [N, C, H, W], got {x:?}")));
        };
        if delta != x {
            return Err(shape_err(format!("scan delta {delta:?} must match input {x:?}")));
        }
        let [ach, d] = a[..] else {
            return Err(shape_err(format!("scan A must be [C, d], got {a:?}")));
        };
        if ach != ch {
            return Err(shape_err(format!("scan A channel axis {ach} vs input channels {ch}")));
        }
        let bc = [n, d, h, w];
        if b != bc || c != bc {
            return Err(shape_err(format!("scan B/C must be {bc:?}, got {b:?} / {c:?}")));
        }
        if d_skip != [ch] {
            return Err(shape_err(format!("scan D must be [{ch}], got {d_skip:?}")));
        }
        Ok(Self { n, ch, d, h, w })
    }
}

/// Which flattening orders a scan runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanPaths {
    /// Row-major forward only (a plain 1-D sequence scan).
    Forward,
    /// Row-major forward/reverse and column-major forward/reverse.
    Cross,
}

impl ScanPaths {
    fn count(self) -> usize {
        match self {
            ScanPaths::Forward => 1,
            ScanPaths::Cross => 4,
        }
    }
}

/// Flat pixel index visited at step `k` of path `path`.
#[inline]
fn position(path: usize, k: usize, h: usize, w: usize) -> usize {
    let hw = h * w;
    match path {
        0 => k,
        1 => hw - 1 - k,
        2 => (k % h) * w + k / h,
        _ => {
            let k = hw - 1 - k;
            (k % h) * w + k / h
        }
    }
}

#[inline]
fn gather(dst: &mut [f64], src: &[f64], n: usize, hw: usize, p: usize) {
    let d = dst.len();
    for (j, v) in dst.iter_mut().enumerate() {
        *v = src[(n * d + j) * hw + p];
    }
}

/// `exp(delta * A)` for every pixel of sample `n`, laid out `[hw, ch, d]`.
/// The decay depends on position only, so all paths share it.
fn fill_decays(dec: &mut [f64], delta: &[f64], a: &[f64], n: usize, ch: usize, d: usize, hw: usize) {
    for ci in 0..ch {
        let arow = &a[ci * d..(ci + 1) * d];
        for p in 0..hw {
            let dt = delta[(n * ch + ci) * hw + p];
            let out = &mut dec[(p * ch + ci) * d..(p * ch + ci + 1) * d];
            for (o, &aj) in out.iter_mut().zip(arow) {
                *o = (dt * aj).exp();
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_forward(
    dims: &ScanDims,
    paths: ScanPaths,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    d_skip: &[f64],
) -> Vec<f64> {
    let ScanDims { n: nb, ch, d, h, w } = *dims;
    let hw = h * w;
    let mut y = vec![0.0; nb * ch * hw];
    let mut state = vec![0.0; ch * d];
    let mut bv = vec![0.0; d];
    let mut cv = vec![0.0; d];
    let mut dec = vec![0.0; hw * ch * d];
    for n in 0..nb {
        fill_decays(&mut dec, delta, a, n, ch, d, hw);
        for path in 0..paths.count() {
            state.fill(0.0);
            for k in 0..hw {
                let p = position(path, k, h, w);
                gather(&mut bv, b, n, hw, p);
                gather(&mut cv, c, n, hw, p);
                for ci in 0..ch {
                    let idx = (n * ch + ci) * hw + p;
                    let (xv, dt) = (x[idx], delta[idx]);
                    let u = dt * xv;
                    let drow = &dec[(p * ch + ci) * d..(p * ch + ci + 1) * d];
                    let st = &mut state[ci * d..(ci + 1) * d];
                    let mut acc = 0.0;
                    for j in 0..d {
                        st[j] = drow[j] * st[j] + u * bv[j];
                        acc += cv[j] * st[j];
                    }
                    y[idx] += acc + d_skip[ci] * xv;
                }
            }
        }
    }
    y
}

/// Gradients for `(x, delta, a, b, c, d_skip)`. States are recomputed per path.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_backward(
    dims: &ScanDims,
    paths: ScanPaths,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    d_skip: &[f64],
    gy: &[f64],
) -> [Vec<f64>; 6] {
    let ScanDims { n: nb, ch, d, h, w } = *dims;
    let hw = h * w;
    let chd = ch * d;
    let mut gx = vec![0.0; x.len()];
    let mut gdelta = vec![0.0; x.len()];
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    let mut gc = vec![0.0; c.len()];
    let mut gd = vec![0.0; ch];

    let mut states = vec![0.0; hw * chd];
    let mut dec = vec![0.0; hw * chd];
    let mut gh = vec![0.0; chd];
    let (mut bv, mut cv) = (vec![0.0; d], vec![0.0; d]);
    let (mut gbv, mut gcv) = (vec![0.0; d], vec![0.0; d]);

    for n in 0..nb {
        fill_decays(&mut dec, delta, a, n, ch, d, hw);
        for path in 0..paths.count() {
            for k in 0..hw {
                let p = position(path, k, h, w);
                gather(&mut bv, b, n, hw, p);
                for ci in 0..ch {
                    let idx = (n * ch + ci) * hw + p;
                    let (xv, dt) = (x[idx], delta[idx]);
                    let u = dt * xv;
                    for j in 0..d {
                        let off = k * chd + ci * d + j;
                        let prev = if k > 0 { states[off - chd] } else { 0.0 };
                        states[off] = dec[p * chd + ci * d + j] * prev + u * bv[j];
                    }
                }
            }

            gh.fill(0.0);
            for k in (0..hw).rev() {
                let p = position(path, k, h, w);
                gather(&mut bv, b, n, hw, p);
                gather(&mut cv, c, n, hw, p);
                gbv.fill(0.0);
                gcv.fill(0.0);
                for ci in 0..ch {
                    let idx = (n * ch + ci) * hw + p;
                    let (xv, dt, g) = (x[idx], delta[idx], gy[idx]);
                    gx[idx] += g * d_skip[ci];
                    gd[ci] += g * xv;
                    let mut gdt = 0.0;
                    let mut gxa = 0.0;
                    for j in 0..d {
                        let off = k * chd + ci * d + j;
                        let s = ci * d + j;
                        let ghj = gh[s] + g * cv[j];
                        gcv[j] += g * states[off];
                        let prev = if k > 0 { states[off - chd] } else { 0.0 };
                        let decay = dec[p * chd + s];
                        let gdec = ghj * prev * decay;
                        gdt += gdec * a[s] + ghj * bv[j] * xv;
                        ga[s] += gdec * dt;
                        gbv[j] += ghj * dt * xv;
                        gxa += ghj * dt * bv[j];
                        gh[s] = ghj * decay;
                    }
                    gdelta[idx] += gdt;
                    gx[idx] += gxa;
                }
                for j in 0..d {
                    gb[(n * d + j) * hw + p] += gbv[j];
                    gc[(n * d + j) * hw + p] += gcv[j];
                }
            }
        }
    }
    [gx, gdelta, ga, gb, gc, gd]
}

/// Selective state-space parameters for `ch` channels and state size `state_dim`.
#[derive(Clone, Copy, Debug)]
pub struct SsmParams {
    /// `[ch, ch]`, feeds softplus to produce the step size.
    pub w_delta: ParamId,
    pub b_delta: ParamId,
    /// `[d, ch]`
    pub w_b: ParamId,
    pub b_b: ParamId,
    /// `[d, ch]`
    pub w_c: ParamId,
    pub b_c: ParamId,
    /// `[ch, d]`; `A = -exp(a_log)`.
    pub a_log: ParamId,
    /// `[ch]`
    pub d_skip: ParamId,
    pub ch: usize,
    pub state_dim: usize,
}

/// Inverse of softplus.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl SsmParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        ch: usize,
        state_dim: usize,
        rng: &mut R,
    ) -> Self {
        // Step sizes start log-uniform in [0.01, 0.1] with a weak input dependence.
        let w_delta = Tensor::uniform([ch, ch], 0.1 / (ch as f64).sqrt(), rng);
        let b_delta: Vec<f64> = (0..ch)
            .map(|_| {
                let dt = (rng.gen_range(0.01f64.ln()..0.1f64.ln())).exp();
                softplus_inv(dt)
            })
            .collect();
        let a_log: Vec<f64> = (0..ch).flat_map(|_| (1..=state_dim).map(|j| (j as f64).ln())).collect();
        let bound = kaiming_bound(ch);
        Self {
            w_delta: store.add(format!("{name}.w_delta"), w_delta),
            b_delta: store.add(format!("{name}.b_delta"), Tensor::from_parts(vec![ch], b_delta)),
            w_b: store.add(format!("{name}.w_b"), Tensor::uniform([state_dim, ch], bound, rng)),
            b_b: store.add(format!("{name}.b_b"), Tensor::zeros([state_dim])),
            w_c: store.add(format!("{name}.w_c"), Tensor::uniform([state_dim, ch], bound, rng)),
            b_c: store.add(format!("{name}.b_c"), Tensor::zeros([state_dim])),
            a_log: store.add(format!("{name}.a_log"), Tensor::from_parts(vec![ch, state_dim], a_log)),
            d_skip: store.add(format!("{name}.d_skip"), Tensor::ones([ch])),
            ch,
            state_dim,
        }
    }

    fn a_matrix(&self, s: &mut Session) -> Var {
        let a_log = s.p(self.a_log);
        let e = s.tape.exp(a_log);
        s.tape.neg(e)
    }

    fn pointwise(s: &mut Session, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (s.p(w), s.p(b));
        let shape = s.tape.shape(w).to_vec();
        let w4 = s.tape.reshape(w, &[shape[0], shape[1], 1, 1])?;
        s.tape.conv2d(x, w4, Some(b), 0)
    }

    /// Sum of the directional scans over an `[N, ch, H, W]` map (before normalization).
    pub fn scan_2d(&self, s: &mut Session, x: Var, paths: ScanPaths) -> Result<Var> {
        let pre = Self::pointwise(s, x, self.w_delta, self.b_delta)?;
        let delta = s.tape.softplus(pre);
        let bm = Self::pointwise(s, x, self.w_b, self.b_b)?;
        let cm = Self::pointwise(s, x, self.w_c, self.b_c)?;
        let a = self.a_matrix(s);
        let d = s.p(self.d_skip);
        s.tape.selective_scan(x, delta, a, bm, cm, d, paths)
    }
}

/// Scan of an `[L, ch]` sequence: projections act on the last axis.
pub fn selective_scan_1d(s: &mut Session, x: Var, params: &SsmParams) -> Result<Var> {
    let shape = s.tape.shape(x).to_vec();
    let [len, ch] = shape[..] else {
        return Err(shape_err(format!("selective_scan_1d expects [L, C], got {shape:?}")));
    };
    let lin = |s: &mut Session, w: ParamId, b: ParamId| -> Result<Var> {
        let (w, b) = (s.p(w), s.p(b));
        let y = s.tape.linear(x, w, Some(b))?;
        let t = s.tape.transpose(y)?;
        let rows = s.tape.shape(t)[0];
        s.tape.reshape(t, &[1, rows, 1, len])
    };
    let pre = lin(s, params.w_delta, params.b_delta)?;
    let delta = s.tape.softplus(pre);
    let bm = lin(s, params.w_b, params.b_b)?;
    let cm = lin(s, params.w_c, params.b_c)?;
    let xt = s.tape.transpose(x)?;
    let x4 = s.tape.reshape(xt, &[1, ch, 1, len])?;
    let a = params.a_matrix(s);
    let d = s.p(params.d_skip);
    let y = s.tape.selective_scan(x4, delta, a, bm, cm, d, ScanPaths::Forward)?;
    let y2 = s.tape.reshape(y, &[ch, len])?;
    s.tape.transpose(y2)
}

/// Four-path 2-D selective scan followed by channel layer norm.
#[derive(Clone, Copy, Debug)]
pub struct Ss2dParams {
    pub ssm: SsmParams,
    pub norm: ChannelNorm,
}

impl Ss2dParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, ch: usize, state_dim: usize, rng: &mut R) -> Self {
        Self {
            ssm: SsmParams::new(store, &format!("{name}.ssm"), ch, state_dim, rng),
            norm: ChannelNorm::new(store, &format!("{name}.norm"), ch),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.ssm.scan_2d(s, x, ScanPaths::Cross)?;
        self.norm.forward(s, y)
    }
}

/// Inner width of a VSS block for a given outer width and expansion ratio.
pub fn inner_channels(channels: usize, expansion: f64) -> usize {
    ((channels as f64) * expansion).round().max(1.0) as usize
}

/// Residual VSS block: `y = x + SS2D-branch(LN(x))`, `z = y + FFN(LN(y))`.
#[derive(Clone, Copy, Debug)]
pub struct VssBlock {
    pub ln1: ChannelNorm,
    pub in_proj: Conv,
    pub dwconv: DwConv,
    pub ss2d: Ss2dParams,
    pub out_proj: Conv,
    pub ln2: ChannelNorm,
    pub ffn_in: Conv,
    pub ffn_out: Conv,
    pub channels: usize,
    pub inner: usize,
}

impl VssBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        expansion: f64,
        state_dim: usize,
        rng: &mut R,
    ) -> Self {
        let inner = inner_channels(channels, expansion);
        Self {
            ln1: ChannelNorm::new(store, &format!("{name}.ln1"), channels),
            in_proj: Conv::new(store, &format!("{name}.in_proj"), channels, inner, 1, rng),
            dwconv: DwConv::new(store, &format!("{name}.dwconv"), inner, 3, rng),
            ss2d: Ss2dParams::new(store, &format!("{name}.ss2d"), inner, state_dim, rng),
            out_proj: Conv::new(store, &format!("{name}.out_proj"), inner, channels, 1, rng),
            ln2: ChannelNorm::new(store, &format!("{name}.ln2"), channels),
            ffn_in: Conv::new(store, &format!("{name}.ffn_in"), channels, inner, 1, rng),
            ffn_out: Conv::new(store, &format!("{name}.ffn_out"), inner, channels, 1, rng),
            channels,
            inner,
        }
    }

    /// Zeroes both branch output projections, making the block an exact identity.
    pub fn zero_output_projections(&self, store: &mut ParamStore) {
        for id in [self.out_proj.weight, self.out_proj.bias, self.ffn_out.weight, self.ffn_out.bias] {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let n1 = self.ln1.forward(s, x)?;
        let e = self.in_proj.forward(s, n1)?;
        let e = self.dwconv.forward(s, e)?;
        let e = s.tape.silu(e);
        let e = self.ss2d.forward(s, e)?;
        let e = self.out_proj.forward(s, e)?;
        let y = s.tape.add(x, e)?;

        let n2 = self.ln2.forward(s, y)?;
        let f = self.ffn_in.forward(s, n2)?;
        let f = s.tape.silu(f);
        let f = self.ffn_out.forward(s, f)?;
        s.tape.add(y, f)
    }
}

/// Applies the shared block; alias kept for readability at call sites.
pub fn rvmb(s: &mut Session, x: Var, block: &VssBlock) -> Result<Var> {
    block.forward(s, x)
}
