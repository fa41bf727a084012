//! Raw loops behind the differentiable convolution, linear and normalization ops.
//!
//! All reductions run in a fixed order so results are bitwise reproducible.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.kw
    }

    /// Output column range `[lo, hi)` for which input column `ox + kx - pad` is in bounds.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.out_w());
        (lo, hi.max(lo))
    }

    fn row_in(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy + ky).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }
}

/// Accumulates `weight * input_plane` (shifted by `(ky, kx)`) into `out_plane`.
#[inline]
fn plane_axpy(g: &ConvGeom, out_plane: &mut [f64], in_plane: &[f64], wv: f64, ky: usize, kx: usize) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let (lo, hi) = g.col_range(kx);
    if lo >= hi {
        return;
    }
    for oy in 0..ho {
        let Some(iy) = g.row_in(oy, ky) else { continue };
        let out_row = &mut out_plane[oy * wo + lo..oy * wo + hi];
        let start = iy * g.w + lo + kx - g.pad;
        let in_row = &in_plane[start..start + (hi - lo)];
        for (o, &i) in out_row.iter_mut().zip(in_row) {
            *o += wv * i;
        }
    }
}

/// Adjoint of [`plane_axpy`]: scatters `weight * out_grad` back into the input plane.
#[inline]
fn plane_axpy_t(g: &ConvGeom, in_grad: &mut [f64], out_grad: &[f64], wv: f64, ky: usize, kx: usize) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let (lo, hi) = g.col_range(kx);
    if lo >= hi {
        return;
    }
    for oy in 0..ho {
        let Some(iy) = g.row_in(oy, ky) else { continue };
        let go = &out_grad[oy * wo + lo..oy * wo + hi];
        let start = iy * g.w + lo + kx - g.pad;
        let gi = &mut in_grad[start..start + (hi - lo)];
        for (i, &o) in gi.iter_mut().zip(go) {
            *i += wv * o;
        }
    }
}

/// Correlation of an output-gradient plane with a shifted input plane.
#[inline]
fn plane_dot(g: &ConvGeom, out_grad: &[f64], in_plane: &[f64], ky: usize, kx: usize) -> f64 {
    let (ho, wo) = (g.out_h(), g.out_w());
    let (lo, hi) = g.col_range(kx);
    let mut acc = 0.0;
    if lo >= hi {
        return acc;
    }
    for oy in 0..ho {
        let Some(iy) = g.row_in(oy, ky) else { continue };
        let go = &out_grad[oy * wo + lo..oy * wo + hi];
        let start = iy * g.w + lo + kx - g.pad;
        let xi = &in_plane[start..start + (hi - lo)];
        acc += go.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let (hw_in, hw_out) = (g.h * g.w, g.out_h() * g.out_w());
    let ksz = g.kh * g.kw;
    let mut out = vec![0.0; g.n * g.cout * hw_out];
    for n in 0..g.n {
        for co in 0..g.cout {
            let plane = &mut out[(n * g.cout + co) * hw_out..(n * g.cout + co + 1) * hw_out];
            if let Some(b) = b {
                plane.fill(b[co]);
            }
            for ci in 0..g.cin {
                let xin = &x[(n * g.cin + ci) * hw_in..(n * g.cin + ci + 1) * hw_in];
                let wk = &w[(co * g.cin + ci) * ksz..(co * g.cin + ci + 1) * ksz];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wk[ky * g.kw + kx];
                        if wv != 0.0 {
                            plane_axpy(g, plane, xin, wv, ky, kx);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_w, grad_b)`; each is computed only when requested.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    need: [bool; 3],
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let (hw_in, hw_out) = (g.h * g.w, g.out_h() * g.out_w());
    let ksz = g.kh * g.kw;
    let mut gx = need[0].then(|| vec![0.0; x.len()]);
    let mut gw = need[1].then(|| vec![0.0; w.len()]);
    let gb = need[2].then(|| {
        let mut gb = vec![0.0; g.cout];
        for n in 0..g.n {
            for (co, acc) in gb.iter_mut().enumerate() {
                *acc += gout[(n * g.cout + co) * hw_out..(n * g.cout + co + 1) * hw_out]
                    .iter()
                    .sum::<f64>();
            }
        }
        gb
    });
    for n in 0..g.n {
        for co in 0..g.cout {
            let go = &gout[(n * g.cout + co) * hw_out..(n * g.cout + co + 1) * hw_out];
            for ci in 0..g.cin {
                let xin = &x[(n * g.cin + ci) * hw_in..(n * g.cin + ci + 1) * hw_in];
                let kbase = (co * g.cin + ci) * ksz;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let k = kbase + ky * g.kw + kx;
                        if let Some(gw) = gw.as_mut() {
                            gw[k] += plane_dot(g, go, xin, ky, kx);
                        }
                        if let Some(gx) = gx.as_mut() {
                            let wv = w[k];
                            if wv != 0.0 {
                                let gi = &mut gx[(n * g.cin + ci) * hw_in..(n * g.cin + ci + 1) * hw_in];
                                plane_axpy_t(g, gi, go, wv, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Depthwise variant: `cin == cout`, weight shape `[C, 1, kh, kw]`.
pub(crate) fn dwconv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let (hw_in, hw_out) = (g.h * g.w, g.out_h() * g.out_w());
    let ksz = g.kh * g.kw;
    let mut out = vec![0.0; g.n * g.cout * hw_out];
    for n in 0..g.n {
        for c in 0..g.cout {
            let plane = &mut out[(n * g.cout + c) * hw_out..(n * g.cout + c + 1) * hw_out];
            if let Some(b) = b {
                plane.fill(b[c]);
            }
            let xin = &x[(n * g.cin + c) * hw_in..(n * g.cin + c + 1) * hw_in];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = w[c * ksz + ky * g.kw + kx];
                    if wv != 0.0 {
                        plane_axpy(g, plane, xin, wv, ky, kx);
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn dwconv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    need: [bool; 3],
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let (hw_in, hw_out) = (g.h * g.w, g.out_h() * g.out_w());
    let ksz = g.kh * g.kw;
    let mut gx = need[0].then(|| vec![0.0; x.len()]);
    let mut gw = need[1].then(|| vec![0.0; w.len()]);
    let mut gb = need[2].then(|| vec![0.0; g.cout]);
    for n in 0..g.n {
        for c in 0..g.cout {
            let go = &gout[(n * g.cout + c) * hw_out..(n * g.cout + c + 1) * hw_out];
            if let Some(gb) = gb.as_mut() {
                gb[c] += go.iter().sum::<f64>();
            }
            let xin = &x[(n * g.cin + c) * hw_in..(n * g.cin + c + 1) * hw_in];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let k = c * ksz + ky * g.kw + kx;
                    if let Some(gw) = gw.as_mut() {
                        gw[k] += plane_dot(g, go, xin, ky, kx);
                    }
                    if let Some(gx) = gx.as_mut() {
                        if w[k] != 0.0 {
                            let gi = &mut gx[(n * g.cin + c) * hw_in..(n * g.cin + c + 1) * hw_in];
                            plane_axpy_t(g, gi, go, w[k], ky, kx);
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// `y[r, o] = b[o] + sum_i x[r, i] * w[o, i]` over `rows` leading rows.
pub(crate) fn linear_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, rows: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * dout];
    for r in 0..rows {
        let xr = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            let wr = &w[o * din..(o + 1) * din];
            let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            y[r * dout + o] = dot + b.map_or(0.0, |b| b[o]);
        }
    }
    y
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisSplit {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

impl AxisSplit {
    pub fn new(shape: &[usize], axis: usize) -> Self {
        Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    #[inline]
    pub fn index(&self, o: usize, k: usize, i: usize) -> usize {
        (o * self.len + k) * self.inner + i
    }
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-6;

/// Returns `(y, xhat, rstd)` where `xhat` is the normalized input (pre gamma/beta).
pub(crate) fn layer_norm_forward(
    x: &[f64],
    split: AxisSplit,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; split.outer * split.inner];
    let inv_len = 1.0 / split.len as f64;
    for o in 0..split.outer {
        for i in 0..split.inner {
            let mut mean = 0.0;
            for k in 0..split.len {
                mean += x[split.index(o, k, i)];
            }
            mean *= inv_len;
            let mut var = 0.0;
            for k in 0..split.len {
                let d = x[split.index(o, k, i)] - mean;
                var += d * d;
            }
            var *= inv_len;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[o * split.inner + i] = r;
            for k in 0..split.len {
                let idx = split.index(o, k, i);
                let xh = (x[idx] - mean) * r;
                xhat[idx] = xh;
                y[idx] = gamma[k] * xh + beta[k];
            }
        }
    }
    (y, xhat, rstd)
}

pub(crate) fn layer_norm_backward(
    gout: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    split: AxisSplit,
    gamma: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; gout.len()];
    let mut ggamma = vec![0.0; split.len];
    let mut gbeta = vec![0.0; split.len];
    let inv_len = 1.0 / split.len as f64;
    for o in 0..split.outer {
        for i in 0..split.inner {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for k in 0..split.len {
                let idx = split.index(o, k, i);
                let gh = gout[idx] * gamma[k];
                sum_g += gh;
                sum_gx += gh * xhat[idx];
                ggamma[k] += gout[idx] * xhat[idx];
                gbeta[k] += gout[idx];
            }
            let r = rstd[o * split.inner + i];
            for k in 0..split.len {
                let idx = split.index(o, k, i);
                let gh = gout[idx] * gamma[k];
                gx[idx] = r * (gh - inv_len * (sum_g + xhat[idx] * sum_gx));
            }
        }
    }
    (gx, ggamma, gbeta)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}
