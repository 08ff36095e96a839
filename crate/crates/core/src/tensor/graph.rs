use super::kernels::{conv_backward_input, conv_backward_kernel, conv_forward, ConvGeom};
use super::{nchw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one train-mode batch normalization call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    Scalar,
    /// rhs is a per-channel vector; `inner` is the product of the axes after the channel axis.
    Channel {
        channels: usize,
        inner: usize,
    },
}

impl Bcast {
    #[inline]
    fn rhs_index(self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Channel { channels, inner } => (i / inner) % channels,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var, Bcast),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumSpatial(Var),
    Concat(Vec<Var>, usize),
    Conv {
        x: Var,
        k: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        k: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var, Vec<(usize, usize)>),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape. Every node's inputs precede it, so a single reverse
/// sweep in append order computes all gradients.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, rg)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.value.len() != 1 {
            return Err(Error::Contract(format!("item() on shape {:?}", n.shape)));
        }
        Ok(n.value[0])
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Snapshot of a node as a tensor, including its gradient if one was computed.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        let mut t = Tensor::new(&n.shape, n.value.clone())
            .expect("graph nodes hold consistent shapes")
            .with_requires_grad(n.requires_grad);
        t.set_grad(self.grads[v.0].clone());
        t
    }

    // ---- elementwise -------------------------------------------------

    fn bcast(&self, a: Var, b: Var) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Bcast::Same);
        }
        if sb.iter().product::<usize>() == 1 {
            return Ok(Bcast::Scalar);
        }
        if sb.len() == 1 && sa.len() >= 3 && sa[sa.len() - 3] == sb[0] {
            let inner = sa[sa.len() - 2..].iter().product();
            return Ok(Bcast::Channel {
                channels: sb[0],
                inner,
            });
        }
        Err(Error::dim(format!("cannot broadcast {sb:?} onto {sa:?}")))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let bc = self.bcast(a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let out: Vec<f64> = va
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = vb[bc.rhs_index(i)];
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Binary(kind, a, b, bc), rg))
    }

    /// `a + b`, where `b` has the shape of `a`, is a scalar, or is a per-channel vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + k)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![m], Op::Mean(a), rg)
    }

    /// Sums over the two trailing (spatial) axes, keeping them as size 1.
    pub fn sum_spatial(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 3 {
            return Err(Error::dim(format!(
                "sum_spatial needs rank >= 3, got {shape:?}"
            )));
        }
        let inner: usize = shape[shape.len() - 2..].iter().product();
        let out: Vec<f64> = self
            .value(a)
            .chunks_exact(inner)
            .map(|c| c.iter().sum())
            .collect();
        let mut oshape = shape;
        let r = oshape.len();
        oshape[r - 2] = 1;
        oshape[r - 1] = 1;
        let rg = self.rg(&[a]);
        Ok(self.push(oshape, out, Op::SumSpatial(a), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::dim(format!(
                    "concat along axis {axis}: {s:?} incompatible with {base:?}"
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(shape, out, Op::Concat(parts.to_vec(), axis), rg))
    }

    // ---- convolution -------------------------------------------------

    fn check_bias(&self, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [channels] {
                return Err(Error::dim(format!(
                    "bias shape {:?} does not match {channels} output channels",
                    self.shape(b)
                )));
            }
        }
        Ok(())
    }

    fn add_bias(&self, out: &mut [f64], bias: Option<Var>, channels: usize, hw: usize) {
        if let Some(b) = bias {
            let bv = self.value(b);
            for (i, chunk) in out.chunks_exact_mut(hw).enumerate() {
                let bb = bv[i % channels];
                chunk.iter_mut().for_each(|v| *v += bb);
            }
        }
    }

    /// 2-D convolution with zero padding. `k` is `[C_out, C_in, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, cin, h, w) = nchw(&xs)?;
        let ks = self.shape(k).to_vec();
        let [cout, kcin, kh, kw] = ks[..] else {
            return Err(Error::dim(format!("conv kernel must be 4-D, got {ks:?}")));
        };
        if kcin != cin {
            return Err(Error::dim(format!(
                "conv input {xs:?} has {cin} channels but kernel {ks:?} expects {kcin}"
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::dim("conv stride must be >= 1"));
        }
        if kh > h + 2 * padding.0 || kw > w + 2 * padding.1 {
            return Err(Error::dim(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding.0,
                w + 2 * padding.1
            )));
        }
        self.check_bias(bias, cout)?;
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
            oh: (h + 2 * padding.0 - kh) / stride.0 + 1,
            ow: (w + 2 * padding.1 - kw) / stride.1 + 1,
        };
        let mut out = vec![0.0; geom.output_len()];
        conv_forward(&geom, self.value(x), self.value(k), &mut out);
        self.add_bias(&mut out, bias, cout, geom.oh * geom.ow);
        let shape = if xs.len() == 3 {
            vec![cout, geom.oh, geom.ow]
        } else {
            vec![batch, cout, geom.oh, geom.ow]
        };
        let mut inputs = vec![x, k];
        inputs.extend(bias);
        let rg = self.rg(&inputs);
        Ok(self.push(shape, out, Op::Conv { x, k, bias, geom }, rg))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same kernel.
    /// `k` is `[C_in, C_out, kh, kw]`; output size is `(H-1)*s - 2p + k`.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, cx, hx, wx) = nchw(&xs)?;
        let ks = self.shape(k).to_vec();
        let [kcx, cy, kh, kw] = ks[..] else {
            return Err(Error::dim(format!("conv kernel must be 4-D, got {ks:?}")));
        };
        if kcx != cx {
            return Err(Error::dim(format!(
                "transposed conv input {xs:?} has {cx} channels but kernel {ks:?} expects {kcx}"
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::dim("conv stride must be >= 1"));
        }
        let out_dim = |n: usize, s: usize, p: usize, k: usize| -> isize {
            (n as isize - 1) * s as isize - 2 * p as isize + k as isize
        };
        let (oh, ow) = (
            out_dim(hx, stride.0, padding.0, kh),
            out_dim(wx, stride.1, padding.1, kw),
        );
        if oh <= 0 || ow <= 0 {
            return Err(Error::dim(format!(
                "transposed conv of {xs:?} with kernel {ks:?} gives non-positive size {oh}x{ow}"
            )));
        }
        self.check_bias(bias, cy)?;
        // Forward-conv geometry whose output is our input.
        let geom = ConvGeom {
            batch,
            cin: cy,
            h: oh as usize,
            w: ow as usize,
            cout: cx,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
            oh: hx,
            ow: wx,
        };
        let mut out = vec![0.0; geom.input_len()];
        conv_backward_input(&geom, self.value(x), self.value(k), &mut out);
        self.add_bias(&mut out, bias, cy, geom.h * geom.w);
        let shape = if xs.len() == 3 {
            vec![cy, geom.h, geom.w]
        } else {
            vec![batch, cy, geom.h, geom.w]
        };
        let mut inputs = vec![x, k];
        inputs.extend(bias);
        let rg = self.rg(&inputs);
        Ok(self.push(shape, out, Op::ConvTranspose { x, k, bias, geom }, rg))
    }

    // ---- normalization -----------------------------------------------

    fn check_affine(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (b, c, h, w) = nchw(self.shape(x))?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::dim(format!(
                    "batch norm parameter {:?} does not match {c} channels",
                    self.shape(p)
                )));
            }
        }
        if b * h * w == 0 {
            return Err(Error::dim("batch norm over zero-size channel"));
        }
        Ok((b, c, h * w))
    }

    /// Train-mode batch normalization over batch and both spatial axes.
    /// Returns the batch statistics so the caller can update running averages.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        if !(eps > 0.0) {
            return Err(Error::Contract(format!(
                "batch norm eps must be > 0, got {eps}"
            )));
        }
        let (b, c, hw) = self.check_affine(x, gamma, beta)?;
        let xv = self.value(x);
        let n = (b * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for bi in 0..b {
            for ch in 0..c {
                mean[ch] += xv[(bi * c + ch) * hw..][..hw].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for bi in 0..b {
            for ch in 0..c {
                var[ch] += xv[(bi * c + ch) * hw..][..hw]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for (i, (&xi, (xh, o))) in xv
            .iter()
            .zip(xhat.iter_mut().zip(out.iter_mut()))
            .enumerate()
        {
            let ch = (i / hw) % c;
            *xh = (xi - mean[ch]) * inv_std[ch];
            *o = gv[ch] * *xh + bv[ch];
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            shape,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((v, BatchStats { mean, var }))
    }

    /// Eval-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BatchStats,
        eps: f64,
    ) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Contract(format!(
                "batch norm eps must be > 0, got {eps}"
            )));
        }
        let (_, c, hw) = self.check_affine(x, gamma, beta)?;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::dim(format!(
                "running statistics have {} channels, input has {c}",
                stats.mean.len()
            )));
        }
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                let ch = (i / hw) % c;
                gv[ch] * (xi - stats.mean[ch]) * inv_std[ch] + bv[ch]
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            shape,
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: stats.mean.clone(),
                inv_std,
            },
            rg,
        ))
    }

    // ---- softmax -----------------------------------------------------

    /// `(channels, inner)` for a channel-axis reduction over a rank >= 3 tensor.
    fn channel_layout(&self, x: Var) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() < 3 {
            return Err(Error::dim(format!("expected [..,C,H,W], got {s:?}")));
        }
        Ok((s[s.len() - 3], s[s.len() - 2..].iter().product()))
    }

    /// Softmax over the channel axis at every spatial position.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (c, inner) = self.channel_layout(x)?;
        let mut out = self.value(x).to_vec();
        for block in out.chunks_exact_mut(c * inner) {
            for p in 0..inner {
                let mx = (0..c)
                    .map(|k| block[k * inner + p])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..c {
                    let e = (block[k * inner + p] - mx).exp();
                    block[k * inner + p] = e;
                    z += e;
                }
                for k in 0..c {
                    block[k * inner + p] /= z;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Softmax(x), rg))
    }

    /// Log-softmax over the channel axis, normalized independently within each
    /// `(start, len)` channel group. Groups must tile the channel axis.
    pub fn log_softmax_channels(&mut self, x: Var, groups: &[(usize, usize)]) -> Result<Var> {
        let (c, inner) = self.channel_layout(x)?;
        let mut next = 0;
        for &(s, l) in groups {
            if s != next || l == 0 {
                return Err(Error::dim(format!(
                    "channel groups {groups:?} do not tile {c} channels"
                )));
            }
            next = s + l;
        }
        if next != c {
            return Err(Error::dim(format!(
                "channel groups {groups:?} do not tile {c} channels"
            )));
        }
        let mut out = self.value(x).to_vec();
        for block in out.chunks_exact_mut(c * inner) {
            for &(s, l) in groups {
                for p in 0..inner {
                    let idx = |k: usize| (s + k) * inner + p;
                    let mx = (0..l)
                        .map(|k| block[idx(k)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let lse = mx + (0..l).map(|k| (block[idx(k)] - mx).exp()).sum::<f64>().ln();
                    for k in 0..l {
                        block[idx(k)] -= lse;
                    }
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::LogSoftmax(x, groups.to_vec()), rg))
    }

    // ---- reverse sweep -----------------------------------------------

    /// Clears all gradients so [`Graph::backward`] may run again.
    pub fn reset(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.consumed = false;
    }

    /// Accumulates `d loss / d node` into every differentiable node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State(
                "backward already ran on this graph; call reset()".into(),
            ));
        }
        if self.node(loss).value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        self.consumed = true;
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&[f64], &mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let mut g = self.grads[v.0].take().unwrap_or_else(|| vec![0.0; n]);
        f(&self.nodes[v.0].value, &mut g);
        self.grads[v.0] = Some(g);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // The op is moved out so that input gradients can be written while
        // reading saved values; it is restored afterwards.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let out = std::mem::take(&mut self.nodes[i].value);
        match &op {
            Op::Leaf => {}
            &Op::Binary(kind, a, b, bc) => {
                let bval = self.nodes[b.0].value.clone();
                let aval = if matches!(kind, Binary::Mul) {
                    self.nodes[a.0].value.clone()
                } else {
                    Vec::new()
                };
                self.accumulate(a, |_, ga| {
                    for (j, gj) in ga.iter_mut().enumerate() {
                        *gj += match kind {
                            Binary::Add | Binary::Sub => g[j],
                            Binary::Mul => g[j] * bval[bc.rhs_index(j)],
                        };
                    }
                });
                self.accumulate(b, |_, gb| {
                    for (j, gj) in g.iter().enumerate() {
                        let t = match kind {
                            Binary::Add => *gj,
                            Binary::Sub => -*gj,
                            Binary::Mul => *gj * aval[j],
                        };
                        gb[bc.rhs_index(j)] += t;
                    }
                });
            }
            &Op::Scale(a, k) => self.accumulate(a, |_, ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += k * y);
            }),
            &Op::Offset(a) => self.accumulate(a, |_, ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }),
            &Op::Exp(a) => self.accumulate(a, |_, ga| {
                for j in 0..ga.len() {
                    ga[j] += g[j] * out[j];
                }
            }),
            &Op::Log(a) => self.accumulate(a, |xa, ga| {
                for j in 0..ga.len() {
                    ga[j] += g[j] / xa[j];
                }
            }),
            &Op::Sigmoid(a) => self.accumulate(a, |_, ga| {
                for j in 0..ga.len() {
                    ga[j] += g[j] * out[j] * (1.0 - out[j]);
                }
            }),
            &Op::Square(a) => self.accumulate(a, |xa, ga| {
                for j in 0..ga.len() {
                    ga[j] += 2.0 * g[j] * xa[j];
                }
            }),
            &Op::Clamp(a, lo, hi) => self.accumulate(a, |xa, ga| {
                for j in 0..ga.len() {
                    if xa[j] >= lo && xa[j] <= hi {
                        ga[j] += g[j];
                    }
                }
            }),
            &Op::Sum(a) => self.accumulate(a, |_, ga| ga.iter_mut().for_each(|x| *x += g[0])),
            &Op::Mean(a) => self.accumulate(a, |_, ga| {
                let s = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|x| *x += s);
            }),
            &Op::SumSpatial(a) => self.accumulate(a, |_, ga| {
                let inner = ga.len() / g.len();
                for (chunk, gj) in ga.chunks_exact_mut(inner).zip(g) {
                    chunk.iter_mut().for_each(|x| *x += gj);
                }
            }),
            Op::Concat(parts, axis) => {
                let shape = self.nodes[i].shape.clone();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let block = self.nodes[p.0].shape[*axis] * inner;
                    self.accumulate(p, |_, gp| {
                        for o in 0..outer {
                            let src = &g[o * row + offset..][..block];
                            gp[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += block;
                }
            }
            &Op::Conv { x, k, bias, geom } => {
                let kval = self.nodes[k.0].value.clone();
                self.accumulate(x, |_, gx| conv_backward_input(&geom, g, &kval, gx));
                let xval = std::mem::take(&mut self.nodes[x.0].value);
                self.accumulate(k, |_, gk| conv_backward_kernel(&geom, &xval, g, gk));
                self.nodes[x.0].value = xval;
                if let Some(b) = bias {
                    self.accumulate(b, |_, gb| bias_grad(g, gb, geom.oh * geom.ow));
                }
            }
            &Op::ConvTranspose { x, k, bias, geom } => {
                let kval = self.nodes[k.0].value.clone();
                self.accumulate(x, |_, gx| conv_forward(&geom, g, &kval, gx));
                let xval = std::mem::take(&mut self.nodes[x.0].value);
                self.accumulate(k, |_, gk| conv_backward_kernel(&geom, g, &xval, gk));
                self.nodes[x.0].value = xval;
                if let Some(b) = bias {
                    self.accumulate(b, |_, gb| bias_grad(g, gb, geom.h * geom.w));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let hw = spatial_len(&self.nodes[x.0].shape);
                let n = (g.len() / c) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for j in 0..g.len() {
                    let ch = (j / hw) % c;
                    sum_g[ch] += g[j];
                    sum_gx[ch] += g[j] * xhat[j];
                }
                let gam = self.nodes[gamma.0].value.clone();
                self.accumulate(*x, |_, gx| {
                    for j in 0..gx.len() {
                        let ch = (j / hw) % c;
                        gx[j] += gam[ch] * inv_std[ch] / n
                            * (n * g[j] - sum_g[ch] - xhat[j] * sum_gx[ch]);
                    }
                });
                self.accumulate(*gamma, |_, gg| {
                    gg.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b)
                });
                self.accumulate(*beta, |_, gb| {
                    gb.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b)
                });
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let c = inv_std.len();
                let hw = spatial_len(&self.nodes[x.0].shape);
                let xval = self.nodes[x.0].value.clone();
                let gam = self.nodes[gamma.0].value.clone();
                self.accumulate(*x, |_, gx| {
                    for j in 0..gx.len() {
                        let ch = (j / hw) % c;
                        gx[j] += g[j] * gam[ch] * inv_std[ch];
                    }
                });
                self.accumulate(*gamma, |_, gg| {
                    for j in 0..g.len() {
                        let ch = (j / hw) % c;
                        gg[ch] += g[j] * (xval[j] - mean[ch]) * inv_std[ch];
                    }
                });
                self.accumulate(*beta, |_, gb| {
                    for j in 0..g.len() {
                        gb[(j / hw) % c] += g[j];
                    }
                });
            }
            &Op::Softmax(x) => {
                let (c, inner) = self.channel_layout(x).expect("validated in forward");
                self.accumulate(x, |_, gx| {
                    for (bi, block) in out.chunks_exact(c * inner).enumerate() {
                        let base = bi * c * inner;
                        for p in 0..inner {
                            let dot: f64 = (0..c)
                                .map(|k| g[base + k * inner + p] * block[k * inner + p])
                                .sum();
                            for k in 0..c {
                                let j = base + k * inner + p;
                                gx[j] += block[k * inner + p] * (g[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(x, groups) => {
                let (c, inner) = self.channel_layout(*x).expect("validated in forward");
                self.accumulate(*x, |_, gx| {
                    for bi in 0..out.len() / (c * inner) {
                        let base = bi * c * inner;
                        for &(s, l) in groups {
                            for p in 0..inner {
                                let idx = |k: usize| base + (s + k) * inner + p;
                                let gs: f64 = (0..l).map(|k| g[idx(k)]).sum();
                                for k in 0..l {
                                    let j = idx(k);
                                    gx[j] += g[j] - out[j].exp() * gs;
                                }
                            }
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
        self.nodes[i].value = out;
    }
}

fn spatial_len(shape: &[usize]) -> usize {
    shape[shape.len() - 2..].iter().product()
}

fn bias_grad(g: &[f64], gb: &mut [f64], hw: usize) {
    let c = gb.len();
    for (j, chunk) in g.chunks_exact(hw).enumerate() {
        gb[j % c] += chunk.iter().sum::<f64>();
    }
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
