//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every op appends a node whose inputs are strictly earlier nodes, so the tape
//! is a DAG in topological order by construction and backward is a single
//! reverse sweep that visits each node once.

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, AxisSplit, ConvGeom};
use crate::ssm::{self, ScanDims, ScanPaths};
use crate::tensor::Tensor;
use crate::transforms;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Abs(Var),
    Silu(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { input: Var, axis: usize, start: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    DwConv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, din: usize, dout: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, split: AxisSplit, xhat: Vec<f64>, rstd: Vec<f64> },
    Haar { x: Var, planes: usize, h: usize, w: usize },
    InvHaar { x: Var, planes: usize, h: usize, w: usize },
    Fft2 { x: Var, planes: usize, h: usize, w: usize },
    Ifft2 { x: Var, planes: usize, h: usize, w: usize },
    AmpPhase(Var),
    FromAmpPhase(Var),
    Scan { inputs: [Var; 6], dims: ScanDims, paths: ScanPaths },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Exp(a) | Abs(a) | Silu(a) | Softplus(a) | Sum(a) | Mean(a)
            | Reshape(a) | Transpose(a) | AmpPhase(a) | FromAmpPhase(a) => vec![*a],
            Concat { inputs, .. } => inputs.clone(),
            Narrow { input, .. } => vec![*input],
            Conv2d { x, w, b, .. } | DwConv2d { x, w, b, .. } | Linear { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Haar { x, .. } | InvHaar { x, .. } | Fft2 { x, .. } | Ifft2 { x, .. } => vec![*x],
            Scan { inputs, .. } => inputs.to_vec(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar root with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn plane_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(shape_err(format!("expected at least 2 spatial axes, got {shape:?}")));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    let planes = shape[..shape.len() - 2].iter().product();
    Ok((planes, h, w))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite() || op.inputs().iter().any(|v| !self.value(*v).is_finite()));
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * kernels::sigmoid(x), Op::Silu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, kernels::softplus, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.sum() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Swaps the axes of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let [r, c] = self.shape(a)[..] else {
            return Err(shape_err(format!("transpose expects a 2-D tensor, got {:?}", self.shape(a))));
        };
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![c, r], data), Op::Transpose(a)))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| shape_err("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(shape_err(format!("concat along axis {axis}: {base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err(format!("narrow [{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let split = AxisSplit::new(&shape, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(split.outer * len * split.inner);
        for o in 0..split.outer {
            let from = split.index(o, start, 0);
            data.extend_from_slice(&src[from..from + len * split.inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Narrow { input, axis, start }))
    }

    /// Selects index `i` of the leading axis, dropping that axis.
    pub fn select0(&mut self, input: Var, i: usize) -> Result<Var> {
        let n = self.narrow(input, 0, i, 1)?;
        let shape = self.shape(n)[1..].to_vec();
        self.reshape(n, &shape)
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack0(&mut self, inputs: &[Var]) -> Result<Var> {
        let mut lifted = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let mut s = vec![1];
            s.extend_from_slice(self.shape(v));
            lifted.push(self.reshape(v, &s)?);
        }
        self.concat(&lifted, 0)
    }

    fn conv_geom(&self, x: Var, w: Var, b: Option<Var>, pad: usize, depthwise: bool) -> Result<ConvGeom> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, kh, kw) = self.value(w).dims4()?;
        let expected_wcin = if depthwise { 1 } else { cin };
        if wcin != expected_wcin {
            return Err(shape_err(format!(
                "conv input-channel axis: input has {cin} channels, weight axis 1 is {wcin} (expected {expected_wcin})"
            )));
        }
        if depthwise && cout != cin {
            return Err(shape_err(format!(
                "depthwise channel axis: input has {cin} channels but weight has {cout} kernels"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err(format!("kernel extents must be odd, got {kh}x{kw}")));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err(format!("kernel {kh}x{kw} larger than padded input {h}x{wd}+{pad}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err(format!("conv bias axis: expected [{cout}], got {:?}", self.shape(b))));
            }
        }
        Ok(ConvGeom { n, cin, h, w: wd, cout, kh, kw, pad })
    }

    /// Cross-correlation; weight `[Cout, Cin, kh, kw]`, optional bias `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let geom = self.conv_geom(x, w, b, pad, false)?;
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let shape = vec![geom.n, geom.cout, geom.out_h(), geom.out_w()];
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv2d { x, w, b, geom }))
    }

    /// One kernel per channel; weight `[C, 1, kh, kw]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let geom = self.conv_geom(x, w, b, pad, true)?;
        let out = kernels::dwconv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let shape = vec![geom.n, geom.cout, geom.out_h(), geom.out_w()];
        Ok(self.push(Tensor::from_parts(shape, out), Op::DwConv2d { x, w, b, geom }))
    }

    /// Affine map over the last axis; weight `[Dout, Din]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let din = *xs.last().ok_or_else(|| shape_err("linear on a 0-D tensor"))?;
        if ws.len() != 2 || ws[1] != din {
            return Err(shape_err(format!("linear last axis: input {xs:?}, weight {ws:?}")));
        }
        let dout = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(shape_err(format!("linear bias: expected [{dout}], got {:?}", self.shape(b))));
            }
        }
        let rows = xs.iter().product::<usize>() / din;
        let y = kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            rows,
            din,
            dout,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        Ok(self.push(Tensor::from_parts(shape, y), Op::Linear { x, w, b, rows, din, dout }))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err(format!("layer_norm axis {axis} out of range for {shape:?}")));
        }
        let len = shape[axis];
        if self.shape(gamma) != [len] || self.shape(beta) != [len] {
            return Err(shape_err(format!(
                "layer_norm affine params must be [{len}], got {:?} / {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let split = AxisSplit::new(&shape, axis);
        let (y, xhat, rstd) = kernels::layer_norm_forward(
            self.value(x).data(),
            split,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        Ok(self.push(Tensor::from_parts(shape, y), Op::LayerNorm { x, gamma, beta, split, xhat, rstd }))
    }

    /// Single-level orthonormal Haar analysis; output `[4, ..., H/2, W/2]` as (LL, LH, HL, HH).
    pub fn haar(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (planes, h, w) = plane_dims(&shape)?;
        transforms::check_even(h, w)?;
        let out = transforms::haar_forward(self.value(x).data(), planes, h, w);
        let mut oshape = vec![4];
        oshape.extend_from_slice(&shape[..shape.len() - 2]);
        oshape.extend_from_slice(&[h / 2, w / 2]);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::Haar { x, planes, h, w }))
    }

    /// Inverse of [`Tape::haar`]; input `[4, ..., h, w]`.
    pub fn inv_haar(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.first() != Some(&4) {
            return Err(shape_err(format!("inverse wavelet expects a leading subband axis of 4, got {shape:?}")));
        }
        let (planes, h, w) = plane_dims(&shape[1..])?;
        let out = transforms::haar_inverse(self.value(x).data(), planes, h, w);
        let mut oshape = shape[1..shape.len() - 2].to_vec();
        oshape.extend_from_slice(&[2 * h, 2 * w]);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::InvHaar { x, planes, h, w }))
    }

    /// Unnormalized 2-D DFT of a real input; output `[2, ...]` as (re, im).
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (planes, h, w) = plane_dims(&shape)?;
        transforms::check_pow2(h, w)?;
        let (re, im) = transforms::dft2_planes(self.value(x).data(), None, planes, h, w, false);
        let mut oshape = vec![2];
        oshape.extend_from_slice(&shape);
        let mut data = re;
        data.extend(im);
        Ok(self.push(Tensor::from_parts(oshape, data), Op::Fft2 { x, planes, h, w }))
    }

    /// Inverse DFT normalized by `1/(HW)`; input and output are `[2, ...]`.
    pub fn ifft2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.first() != Some(&2) {
            return Err(shape_err(format!("complex tensors carry a leading axis of 2, got {shape:?}")));
        }
        let (planes, h, w) = plane_dims(&shape[1..])?;
        transforms::check_pow2(h, w)?;
        let half = planes * h * w;
        let d = self.value(x).data();
        let (mut re, im) = transforms::dft2_planes(&d[..half], Some(&d[half..]), planes, h, w, true);
        let scale = 1.0 / (h * w) as f64;
        re.extend(im);
        re.iter_mut().for_each(|v| *v *= scale);
        Ok(self.push(Tensor::from_parts(shape, re), Op::Ifft2 { x, planes, h, w }))
    }

    /// `[2, ...]` (re, im) to `[2, ...]` (amplitude, phase).
    pub fn amp_phase(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.first() != Some(&2) {
            return Err(shape_err(format!("complex tensors carry a leading axis of 2, got {shape:?}")));
        }
        let d = self.value(x).data();
        let half = d.len() / 2;
        let mut out = vec![0.0; d.len()];
        for i in 0..half {
            let (a, p) = transforms::amp_phase_scalar(d[i], d[half + i]);
            out[i] = a;
            out[half + i] = p;
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::AmpPhase(x)))
    }

    /// `[2, ...]` (amplitude, phase) to `[2, ...]` (re, im).
    pub fn from_amp_phase(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.first() != Some(&2) {
            return Err(shape_err(format!("complex tensors carry a leading axis of 2, got {shape:?}")));
        }
        let d = self.value(x).data();
        let half = d.len() / 2;
        let mut out = vec![0.0; d.len()];
        for i in 0..half {
            let (s, c) = d[half + i].sin_cos();
            out[i] = d[i] * c;
            out[half + i] = d[i] * s;
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::FromAmpPhase(x)))
    }

    /// Fused selective-scan recurrence; see [`crate::ssm`] for the layout contract.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &mut self,
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
        paths: ScanPaths,
    ) -> Result<Var> {
        let dims = ScanDims::infer(
            self.shape(x),
            self.shape(delta),
            self.shape(a),
            self.shape(b),
            self.shape(c),
            self.shape(d),
        )?;
        let y = ssm::scan_forward(
            &dims,
            paths,
            self.value(x).data(),
            self.value(delta).data(),
            self.value(a).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(d).data(),
        );
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_parts(shape, y), Op::Scan { inputs: [x, delta, a, b, c, d], dims, paths }))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_shape = self.shape(root);
        if root_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot(root_shape.to_vec()));
        }
        let mut acc: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            acc[root.0] = Some(vec![1.0]);
        }
        for idx in (0..=root.0).rev() {
            let Some(g) = acc[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                leaves[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            for (input, grad) in self.vjp(idx, &g) {
                debug_assert!(input.0 < idx, "tape must be topologically ordered");
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut acc[input.0] {
                    Some(existing) => existing.iter_mut().zip(&grad).for_each(|(e, v)| *e += v),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `idx` for the output cotangent `g`.
    fn vjp(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.value(v).data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.iter().zip(val(*b)).map(|(g, y)| g * y).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().zip(val(*a)).map(|(g, x)| g * x).collect()));
                }
            }
            Op::Scale(a, k) => out.push((*a, g.iter().map(|v| k * v).collect())),
            Op::AddScalar(a) | Op::Reshape(a) => out.push((*a, g.to_vec())),
            Op::Exp(a) => out.push((*a, g.iter().zip(node.value.data()).map(|(g, y)| g * y).collect())),
            Op::Abs(a) => out.push((
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(g, x)| if *x > 0.0 { *g } else if *x < 0.0 { -g } else { 0.0 })
                    .collect(),
            )),
            Op::Silu(a) => out.push((
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(g, &x)| {
                        let s = kernels::sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect(),
            )),
            Op::Softplus(a) => {
                out.push((*a, g.iter().zip(val(*a)).map(|(g, &x)| g * kernels::sigmoid(x)).collect()))
            }
            Op::Sum(a) => out.push((*a, vec![g[0]; self.value(*a).numel()])),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                out.push((*a, vec![g[0] / n as f64; n]));
            }
            Op::Transpose(a) => {
                let [r, c] = self.shape(*a)[..] else { unreachable!() };
                let mut gi = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gi[i * c + j] = g[j * r + i];
                    }
                }
                out.push((*a, gi));
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    if self.needs(v) {
                        let mut gi = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            gi.extend_from_slice(&g[o * total + offset..o * total + offset + len]);
                        }
                        out.push((v, gi));
                    }
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let split = AxisSplit::new(self.shape(*input), *axis);
                let len = node.value.shape()[*axis];
                let mut gi = vec![0.0; self.value(*input).numel()];
                for o in 0..split.outer {
                    let to = split.index(o, *start, 0);
                    let from = o * len * split.inner;
                    gi[to..to + len * split.inner].copy_from_slice(&g[from..from + len * split.inner]);
                }
                out.push((*input, gi));
            }
            Op::Conv2d { x, w, b, geom } | Op::DwConv2d { x, w, b, geom } => {
                let need = [self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b))];
                let (gx, gw, gb) = if matches!(node.op, Op::Conv2d { .. }) {
                    kernels::conv2d_backward(geom, val(*x), val(*w), g, need)
                } else {
                    kernels::dwconv2d_backward(geom, val(*x), val(*w), g, need)
                };
                out.extend(gx.map(|v| (*x, v)));
                out.extend(gw.map(|v| (*w, v)));
                if let (Some(b), Some(gb)) = (b, gb) {
                    out.push((*b, gb));
                }
            }
            Op::Linear { x, w, b, rows, din, dout } => {
                let (xv, wv) = (val(*x), val(*w));
                if self.needs(*x) {
                    let mut gx = vec![0.0; rows * din];
                    for r in 0..*rows {
                        let gxr = &mut gx[r * din..(r + 1) * din];
                        for o in 0..*dout {
                            let go = g[r * dout + o];
                            for (gi, wi) in gxr.iter_mut().zip(&wv[o * din..(o + 1) * din]) {
                                *gi += go * wi;
                            }
                        }
                    }
                    out.push((*x, gx));
                }
                if self.needs(*w) {
                    let mut gw = vec![0.0; dout * din];
                    for r in 0..*rows {
                        let xr = &xv[r * din..(r + 1) * din];
                        for o in 0..*dout {
                            let go = g[r * dout + o];
                            for (gwi, xi) in gw[o * din..(o + 1) * din].iter_mut().zip(xr) {
                                *gwi += go * xi;
                            }
                        }
                    }
                    out.push((*w, gw));
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut gb = vec![0.0; *dout];
                    for r in 0..*rows {
                        for o in 0..*dout {
                            gb[o] += g[r * dout + o];
                        }
                    }
                    out.push((b, gb));
                }
            }
            Op::LayerNorm { x, gamma, beta, split, xhat, rstd } => {
                let (gx, gg, gb) = kernels::layer_norm_backward(g, xhat, rstd, *split, val(*gamma));
                out.push((*x, gx));
                out.push((*gamma, gg));
                out.push((*beta, gb));
            }
            Op::Haar { x, planes, h, w } => {
                // Orthonormal: the adjoint is the inverse.
                out.push((*x, transforms::haar_inverse(g, *planes, h / 2, w / 2)));
            }
            Op::InvHaar { x, planes, h, w } => {
                out.push((*x, transforms::haar_forward(g, *planes, 2 * h, 2 * w)));
            }
            Op::Fft2 { x, planes, h, w } => {
                // Adjoint of the forward DFT on a real input: Re(conj-DFT(g)).
                let half = planes * h * w;
                let (re, _) = transforms::dft2_planes(&g[..half], Some(&g[half..]), *planes, *h, *w, true);
                out.push((*x, re));
            }
            Op::Ifft2 { x, planes, h, w } => {
                let half = planes * h * w;
                let (mut re, im) = transforms::dft2_planes(&g[..half], Some(&g[half..]), *planes, *h, *w, false);
                let scale = 1.0 / (h * w) as f64;
                re.extend(im);
                re.iter_mut().for_each(|v| *v *= scale);
                out.push((*x, re));
            }
            Op::AmpPhase(x) => {
                let d = val(*x);
                let half = d.len() / 2;
                let amp = &node.value.data()[..half];
                let mut gi = vec![0.0; d.len()];
                for i in 0..half {
                    let (re, im, a) = (d[i], d[half + i], amp[i]);
                    let (ga, gp) = (g[i], g[half + i]);
                    let a2 = a * a;
                    gi[i] = ga * re / a - gp * im / a2;
                    gi[half + i] = ga * im / a + gp * re / a2;
                }
                out.push((*x, gi));
            }
            Op::FromAmpPhase(x) => {
                let d = val(*x);
                let half = d.len() / 2;
                let mut gi = vec![0.0; d.len()];
                for i in 0..half {
                    let (s, c) = d[half + i].sin_cos();
                    let (gre, gim) = (g[i], g[half + i]);
                    gi[i] = gre * c + gim * s;
                    gi[half + i] = d[i] * (gim * c - gre * s);
                }
                out.push((*x, gi));
            }
            Op::Scan { inputs, dims, paths } => {
                let [x, delta, a, b, c, d] = inputs.map(val);
                let grads = ssm::scan_backward(dims, *paths, x, delta, a, b, c, d, g);
                for (v, gv) in inputs.iter().zip(grads) {
                    if self.needs(*v) {
                        out.push((*v, gv));
                    }
                }
            }
        }
        out
    }
}
