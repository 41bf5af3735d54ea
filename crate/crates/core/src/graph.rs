//! Taped reverse-mode autodiff.
//!
//! A `Graph` is rebuilt for every forward pass: ops append nodes holding the
//! computed value, `backward` walks the tape in reverse and accumulates
//! gradients additively, so fan-out needs no special casing. Gradients flow
//! only through nodes reachable from a leaf with `requires_grad`.

use crate::error::{Error, Result};
use crate::kernels as k;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

const BCE_CLAMP: Real = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SqrtEps(Var),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Conv1x1 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Depthwise {
        x: Var,
        w: Var,
        pad: usize,
    },
    SoftmaxRows(Var),
    Gap(Var),
    Resize(Var),
    RepPad1(Var),
    ConcatCh(Var, Var),
    SliceCh {
        x: Var,
        from: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        from: usize,
    },
    Transpose2(Var),
    ChannelNorm {
        x: Var,
        eps: Real,
    },
    ChwToNc(Var),
    NcToChw(Var),
    Reshape(Var),
    MulChannel {
        x: Var,
        s: Var,
    },
    MulSpatial {
        x: Var,
        a: Var,
    },
    AddRowBias {
        m: Var,
        b: Var,
    },
    MulScalar {
        x: Var,
        s: Var,
    },
    SumAll(Var),
    MeanAll(Var),
    Bce {
        pred: Var,
        target: Tensor,
    },
    SoftIou {
        pred: Var,
        target: Tensor,
        eps: Real,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<Real>>>,
}

#[inline]
fn stable_sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn stable_softplus(x: Real) -> Real {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.leaf_owned(t.clone())
    }

    pub fn leaf_owned(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last `backward`; zeros for leaves that
    /// took no part in the loss.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn r2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                msg: format!("expected rank 2, got shape {:?}", s),
            });
        }
        Ok((s[0], s[1]))
    }

    fn r3(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(v);
        if s.len() != 3 {
            return Err(Error::Shape {
                op,
                msg: format!("expected rank 3, got shape {:?}", s),
            });
        }
        Ok((s[0], s[1], s[2]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            for (axis, (l, r)) in sa.iter().zip(sb.iter()).enumerate() {
                if l != r {
                    return Err(Error::DimMismatch {
                        op,
                        axis,
                        left: *l,
                        right: *r,
                    });
                }
            }
            return Err(Error::Shape {
                op,
                msg: format!("rank mismatch: {:?} vs {:?}", sa, sb),
            });
        }
        Ok(())
    }

    // ── elementwise ──

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, c: Real) -> Var {
        let t = self.value(x).map(|v| v * c);
        let needs = self.needs(x);
        self.push(t, Op::Scale(x, c), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(t, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(stable_sigmoid);
        let needs = self.needs(x);
        self.push(t, Op::Sigmoid(x), needs)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let t = self.value(x).map(stable_softplus);
        let needs = self.needs(x);
        self.push(t, Op::Softplus(x), needs)
    }

    /// sqrt(x + eps); the guard keeps the derivative finite at x = 0.
    pub fn sqrt_eps(&mut self, x: Var, eps: Real) -> Var {
        let t = self.value(x).map(|v| (v + eps).sqrt());
        let needs = self.needs(x);
        self.push(t, Op::SqrtEps(x), needs)
    }

    // ── linear algebra ──

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.r2("matmul", a)?;
        let (kb, n) = self.r2("matmul", b)?;
        if ka != kb {
            return Err(Error::DimMismatch {
                op: "matmul",
                axis: 1,
                left: ka,
                right: kb,
            });
        }
        let mut out = vec![0.0; m * n];
        k::matmul_fwd(self.value(a).data(), self.value(b).data(), &mut out, m, ka, n);
        let t = Tensor::new(&[m, n], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::MatMul(a, b), needs))
    }

    // ── convolutions ──

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (cin, h, wd) = self.r3("conv2d", x)?;
        let ws = self.shape(w);
        if ws.len() != 4 {
            return Err(Error::Shape {
                op: "conv2d",
                msg: format!("weight must be rank 4, got {:?}", ws),
            });
        }
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                msg: format!("kernel must be square and odd, got {}x{}", kh, kw),
            });
        }
        if wcin != cin {
            return Err(Error::DimMismatch {
                op: "conv2d",
                axis: 1,
                left: wcin,
                right: cin,
            });
        }
        if stride == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        let (oh, ow) = (
            k::conv_out_len(h, kh, stride, pad),
            k::conv_out_len(wd, kw, stride, pad),
        );
        let mut out = vec![0.0; cout * oh * ow];
        let mut needs = self.needs(x) || self.needs(w);
        if let Some(bv) = b {
            let bs = self.shape(bv);
            if bs != [cout] {
                return Err(Error::DimMismatch {
                    op: "conv2d",
                    axis: 0,
                    left: bs[0],
                    right: cout,
                });
            }
            let bd = self.value(bv).data();
            for co in 0..cout {
                out[co * oh * ow..(co + 1) * oh * ow].fill(bd[co]);
            }
            needs |= self.needs(bv);
        }
        k::conv2d_fwd(
            self.value(x).data(),
            (cin, h, wd),
            self.value(w).data(),
            (cout, kh),
            stride,
            pad,
            &mut out,
            (oh, ow),
        );
        let t = Tensor::new(&[cout, oh, ow], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, pad }, needs))
    }

    /// Pointwise projection: w is [Cout, Cin], applied at every pixel.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (cin, h, wd) = self.r3("conv1x1", x)?;
        let (cout, wcin) = self.r2("conv1x1", w)?;
        if wcin != cin {
            return Err(Error::DimMismatch {
                op: "conv1x1",
                axis: 1,
                left: wcin,
                right: cin,
            });
        }
        let hw = h * wd;
        let mut out = vec![0.0; cout * hw];
        let mut needs = self.needs(x) || self.needs(w);
        if let Some(bv) = b {
            let bs = self.shape(bv);
            if bs != [cout] {
                return Err(Error::DimMismatch {
                    op: "conv1x1",
                    axis: 0,
                    left: bs[0],
                    right: cout,
                });
            }
            let bd = self.value(bv).data();
            for co in 0..cout {
                out[co * hw..(co + 1) * hw].fill(bd[co]);
            }
            needs |= self.needs(bv);
        }
        k::matmul_fwd(self.value(w).data(), self.value(x).data(), &mut out, cout, cin, hw);
        let t = Tensor::new(&[cout, h, wd], out)?;
        Ok(self.push(t, Op::Conv1x1 { x, w, b }, needs))
    }

    /// One odd square kernel per channel, stride 1, zero padding.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let (c, h, wd) = self.r3("depthwise_conv2d", x)?;
        let ws = self.shape(w);
        if ws.len() != 3 || ws[1] != ws[2] || ws[1] % 2 == 0 {
            return Err(Error::Shape {
                op: "depthwise_conv2d",
                msg: format!("weight must be [C, k, k] with odd k, got {:?}", ws),
            });
        }
        if ws[0] != c {
            return Err(Error::DimMismatch {
                op: "depthwise_conv2d",
                axis: 0,
                left: ws[0],
                right: c,
            });
        }
        let kk = ws[1];
        if h + 2 * pad < kk || wd + 2 * pad < kk {
            return Err(Error::Shape {
                op: "depthwise_conv2d",
                msg: format!("kernel {} larger than padded input {}x{}", kk, h, wd),
            });
        }
        let (oh, ow) = (
            k::conv_out_len(h, kk, 1, pad),
            k::conv_out_len(wd, kk, 1, pad),
        );
        let mut out = vec![0.0; c * oh * ow];
        k::depthwise_fwd(
            self.value(x).data(),
            (c, h, wd),
            self.value(w).data(),
            kk,
            pad,
            &mut out,
            (oh, ow),
        );
        let t = Tensor::new(&[c, oh, ow], out)?;
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(t, Op::Depthwise { x, w, pad }, needs))
    }

    // ── shape and reduction ──

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.r2("softmax_rows", x)?;
        let mut out = vec![0.0; rows * cols];
        k::softmax_rows_fwd(self.value(x).data(), &mut out, rows, cols);
        let t = Tensor::new(&[rows, cols], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::SoftmaxRows(x), needs))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.r3("global_avg_pool", x)?;
        let inv = 1.0 / (h * w) as Real;
        let xd = self.value(x).data();
        let out: Vec<Real> = (0..c)
            .map(|ci| xd[ci * h * w..(ci + 1) * h * w].iter().sum::<Real>() * inv)
            .collect();
        let t = Tensor::new(&[c], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Gap(x), needs))
    }

    pub fn bilinear_resize(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (c, h, w) = self.r3("bilinear_resize", x)?;
        if oh == 0 || ow == 0 {
            return Err(Error::Shape {
                op: "bilinear_resize",
                msg: "target size must be positive".into(),
            });
        }
        let mut out = vec![0.0; c * oh * ow];
        k::bilinear_fwd(self.value(x).data(), (c, h, w), &mut out, (oh, ow));
        let t = Tensor::new(&[c, oh, ow], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Resize(x), needs))
    }

    /// Pad H and W by one pixel, replicating the border. Convolving the
    /// result with a 3x3 kernel at pad 0 gives clamp-to-edge semantics.
    pub fn replicate_pad1(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.r3("replicate_pad1", x)?;
        let (oh, ow) = (h + 2, w + 2);
        let xd = self.value(x).data();
        let mut out = vec![0.0; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                let iy = oy.saturating_sub(1).min(h - 1);
                for ox in 0..ow {
                    let ix = ox.saturating_sub(1).min(w - 1);
                    out[(ci * oh + oy) * ow + ox] = xd[(ci * h + iy) * w + ix];
                }
            }
        }
        let t = Tensor::new(&[c, oh, ow], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::RepPad1(x), needs))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.r3("concat_channels", a)?;
        let (cb, hb, wb) = self.r3("concat_channels", b)?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::DimMismatch {
                op: "concat_channels",
                axis: if ha != hb { 1 } else { 2 },
                left: if ha != hb { ha } else { wa },
                right: if ha != hb { hb } else { wb },
            });
        }
        let mut out = Vec::with_capacity((ca + cb) * ha * wa);
        out.extend_from_slice(self.value(a).data());
        out.extend_from_slice(self.value(b).data());
        let t = Tensor::new(&[ca + cb, ha, wa], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::ConcatCh(a, b), needs))
    }

    pub fn slice_channels(&mut self, x: Var, from: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.r3("slice_channels", x)?;
        if from + len > c {
            return Err(Error::Shape {
                op: "slice_channels",
                msg: format!("slice {}..{} out of {} channels", from, from + len, c),
            });
        }
        let data = self.value(x).data()[from * h * w..(from + len) * h * w].to_vec();
        let t = Tensor::new(&[len, h, w], data)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::SliceCh { x, from }, needs))
    }

    /// Concatenate rank-2 inputs along columns (used to join attention heads).
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape {
                op: "concat_cols",
                msg: "no inputs".into(),
            });
        }
        let (rows, _) = self.r2("concat_cols", xs[0])?;
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let (r, c) = self.r2("concat_cols", v)?;
            if r != rows {
                return Err(Error::DimMismatch {
                    op: "concat_cols",
                    axis: 0,
                    left: rows,
                    right: r,
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut col0 = 0;
        for (&v, &cw) in xs.iter().zip(&widths) {
            let d = self.value(v).data();
            for r in 0..rows {
                out[r * total + col0..r * total + col0 + cw]
                    .copy_from_slice(&d[r * cw..(r + 1) * cw]);
            }
            col0 += cw;
        }
        let t = Tensor::new(&[rows, total], out)?;
        let needs = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(t, Op::ConcatCols(xs.to_vec()), needs))
    }

    /// Column window [from, from+len) of a rank-2 value; rows untouched.
    pub fn slice_cols(&mut self, x: Var, from: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.r2("slice_cols", x)?;
        if from + len > cols || len == 0 {
            return Err(Error::Shape {
                op: "slice_cols",
                msg: format!("window [{from}, {}) out of {cols} columns", from + len),
            });
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len].copy_from_slice(&xd[r * cols + from..r * cols + from + len]);
        }
        let t = Tensor::new(&[rows, len], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::SliceCols { x, from }, needs))
    }

    /// Rank-2 transpose.
    pub fn transpose2(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.r2("transpose2", x)?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = xd[r * cols + c];
            }
        }
        let t = Tensor::new(&[cols, rows], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Transpose2(x), needs))
    }

    /// Per-channel standardization over the spatial extent (batch-free).
    pub fn channel_norm(&mut self, x: Var, eps: Real) -> Result<Var> {
        let (c, h, w) = self.r3("channel_norm", x)?;
        let hw = h * w;
        let xd = self.value(x).data();
        let mut out = vec![0.0; c * hw];
        for ci in 0..c {
            let xs = &xd[ci * hw..(ci + 1) * hw];
            let mean = xs.iter().sum::<Real>() / hw as Real;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / hw as Real;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out[ci * hw..(ci + 1) * hw].iter_mut().zip(xs) {
                *o = (v - mean) * inv;
            }
        }
        let t = Tensor::new(&[c, h, w], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::ChannelNorm { x, eps }, needs))
    }

    /// [C,H,W] -> [H*W, C]: one row per spatial position.
    pub fn chw_to_nc(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.r3("chw_to_nc", x)?;
        let hw = h * w;
        let xd = self.value(x).data();
        let mut out = vec![0.0; hw * c];
        for ci in 0..c {
            for p in 0..hw {
                out[p * c + ci] = xd[ci * hw + p];
            }
        }
        let t = Tensor::new(&[hw, c], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::ChwToNc(x), needs))
    }

    /// [H*W, C] -> [C,H,W].
    pub fn nc_to_chw(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c) = self.r2("nc_to_chw", x)?;
        if n != h * w {
            return Err(Error::Shape {
                op: "nc_to_chw",
                msg: format!("{} rows cannot fold into {}x{}", n, h, w),
            });
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; c * n];
        for p in 0..n {
            for ci in 0..c {
                out[ci * n + p] = xd[p * c + ci];
            }
        }
        let t = Tensor::new(&[c, h, w], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::NcToChw(x), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::Shape {
                op: "reshape",
                msg: format!(
                    "cannot view {} elements as {:?}",
                    self.value(x).numel(),
                    shape
                ),
            });
        }
        let t = Tensor::new(shape, self.value(x).data().to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    // ── broadcasts ──

    /// x[c,y,x] * s[c]
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let (c, h, w) = self.r3("mul_channel", x)?;
        if self.shape(s) != [c] {
            return Err(Error::DimMismatch {
                op: "mul_channel",
                axis: 0,
                left: self.shape(s)[0],
                right: c,
            });
        }
        let hw = h * w;
        let xd = self.value(x).data();
        let sd = self.value(s).data();
        let mut out = vec![0.0; c * hw];
        for ci in 0..c {
            let sv = sd[ci];
            for (o, v) in out[ci * hw..(ci + 1) * hw].iter_mut().zip(&xd[ci * hw..(ci + 1) * hw]) {
                *o = sv * v;
            }
        }
        let t = Tensor::new(&[c, h, w], out)?;
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(t, Op::MulChannel { x, s }, needs))
    }

    /// x[c,y,x] * a[0,y,x]
    pub fn mul_spatial(&mut self, x: Var, a: Var) -> Result<Var> {
        let (c, h, w) = self.r3("mul_spatial", x)?;
        let (ca, ha, wa) = self.r3("mul_spatial", a)?;
        if ca != 1 || (ha, wa) != (h, w) {
            return Err(Error::Shape {
                op: "mul_spatial",
                msg: format!("gate must be [1,{},{}], got {:?}", h, w, self.shape(a)),
            });
        }
        let hw = h * w;
        let xd = self.value(x).data();
        let ad = self.value(a).data();
        let mut out = vec![0.0; c * hw];
        for ci in 0..c {
            for p in 0..hw {
                out[ci * hw + p] = xd[ci * hw + p] * ad[p];
            }
        }
        let t = Tensor::new(&[c, h, w], out)?;
        let needs = self.needs(x) || self.needs(a);
        Ok(self.push(t, Op::MulSpatial { x, a }, needs))
    }

    /// m[r, c] + b[c]
    pub fn add_row_bias(&mut self, m: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.r2("add_row_bias", m)?;
        if self.shape(b) != [cols] {
            return Err(Error::DimMismatch {
                op: "add_row_bias",
                axis: 0,
                left: self.shape(b)[0],
                right: cols,
            });
        }
        let md = self.value(m).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = md[r * cols + c] + bd[c];
            }
        }
        let t = Tensor::new(&[rows, cols], out)?;
        let needs = self.needs(m) || self.needs(b);
        Ok(self.push(t, Op::AddRowBias { m, b }, needs))
    }

    /// x * s where s is a one-element tensor.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape {
                op: "mul_scalar",
                msg: format!("scalar operand has shape {:?}", self.shape(s)),
            });
        }
        let sv = self.value(s).item();
        let t = self.value(x).map(|v| v * sv);
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(t, Op::MulScalar { x, s }, needs))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: Real = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), needs)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as Real;
        let s: Real = self.value(x).data().iter().sum::<Real>() / n;
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), needs)
    }

    // ── losses ──

    /// Mean binary cross entropy; predictions are probabilities, clamped to
    /// [1e-7, 1 - 1e-7] before the logs. Gradient is zero where the clamp
    /// is active.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::Shape {
                op: "bce_loss",
                msg: format!(
                    "pred {:?} vs target {:?}",
                    self.shape(pred),
                    target.shape()
                ),
            });
        }
        let pd = self.value(pred).data();
        let td = target.data();
        let n = pd.len() as Real;
        let mut acc = 0.0;
        for (p, y) in pd.iter().zip(td) {
            let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            acc -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(acc / n),
            Op::Bce {
                pred,
                target: target.clone(),
            },
            needs,
        ))
    }

    /// 1 - (|y∩p| + eps) / (|y∪p| + eps) with soft intersection/union.
    pub fn soft_iou_loss(&mut self, pred: Var, target: &Tensor, eps: Real) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::Shape {
                op: "soft_iou_loss",
                msg: format!(
                    "pred {:?} vs target {:?}",
                    self.shape(pred),
                    target.shape()
                ),
            });
        }
        let pd = self.value(pred).data();
        let td = target.data();
        let mut inter = 0.0;
        let mut sum_p = 0.0;
        let mut sum_y = 0.0;
        for (p, y) in pd.iter().zip(td) {
            inter += p * y;
            sum_p += p;
            sum_y += y;
        }
        let union = sum_p + sum_y - inter;
        let loss = 1.0 - (inter + eps) / (union + eps);
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftIou {
                pred,
                target: target.clone(),
                eps,
            },
            needs,
        ))
    }

    // ── backward ──

    pub fn backward(&mut self, out: Var) -> Result<()> {
        let n = self.nodes[out.0].value.numel();
        if n != 1 {
            return Err(Error::NonScalarBackward { numel: n });
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        self.grads[out.0] = Some(vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.step(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Temporary: per-op-kind backward timing, printed to stderr.
    pub fn backward_profiled(&mut self, out: Var) -> Result<()> {
        use std::collections::BTreeMap;
        use std::time::Instant;
        let n = self.nodes[out.0].value.numel();
        if n != 1 {
            return Err(Error::NonScalarBackward { numel: n });
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        self.grads[out.0] = Some(vec![1.0]);
        let mut times: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let label = match &self.nodes[i].op {
                Op::Conv2d { stride, .. } => format!("Conv2d s{stride}"),
                Op::Conv1x1 { x, w, .. } => format!(
                    "Conv1x1 {:?}x{:?}",
                    self.nodes[w.0].value.shape(),
                    self.nodes[x.0].value.shape()
                ),
                op => {
                    let s = format!("{op:?}");
                    s.split(|c: char| c == '(' || c == ' ' || c == '{')
                        .next()
                        .unwrap()
                        .to_string()
                }
            };
            let t = Instant::now();
            self.step(i, &g);
            let e = times.entry(label).or_insert((0.0, 0));
            e.0 += t.elapsed().as_secs_f64();
            e.1 += 1;
            self.grads[i] = Some(g);
        }
        let mut rows: Vec<_> = times.into_iter().collect();
        rows.sort_by(|a, b| b.1 .0.partial_cmp(&a.1 .0).unwrap());
        for (name, (s, c)) in rows.iter().take(14) {
            eprintln!("  bwd {name:<16} {:>8.2} ms  ({c} nodes)", s * 1e3);
        }
        Ok(())
    }

    fn step(&mut self, i: usize, g: &[Real]) {
        let Graph { nodes, grads } = self;

        macro_rules! needs {
            ($v:expr) => {
                nodes[$v.0].needs_grad
            };
        }
        macro_rules! val {
            ($v:expr) => {
                nodes[$v.0].value.data()
            };
        }
        macro_rules! buf {
            ($v:expr) => {{
                let n = nodes[$v.0].value.numel();
                grads[$v.0]
                    .get_or_insert_with(|| vec![0.0; n])
                    .as_mut_slice()
            }};
        }

        let y = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if needs!(a) {
                    for (d, gv) in buf!(a).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if needs!(b) {
                    for (d, gv) in buf!(b).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                if needs!(a) {
                    for (d, gv) in buf!(a).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if needs!(b) {
                    for (d, gv) in buf!(b).iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if needs!(a) {
                    let bv: Vec<Real> = val!(b).to_vec();
                    for ((d, gv), xv) in buf!(a).iter_mut().zip(g).zip(&bv) {
                        *d += gv * xv;
                    }
                }
                if needs!(b) {
                    let av: Vec<Real> = val!(a).to_vec();
                    for ((d, gv), xv) in buf!(b).iter_mut().zip(g).zip(&av) {
                        *d += gv * xv;
                    }
                }
            }
            Op::Scale(x, c) => {
                let (x, c) = (*x, *c);
                if needs!(x) {
                    for (d, gv) in buf!(x).iter_mut().zip(g) {
                        *d += gv * c;
                    }
                }
            }
            Op::Relu(x) => {
                let x = *x;
                if needs!(x) {
                    let xv: Vec<Real> = val!(x).to_vec();
                    for ((d, gv), xv) in buf!(x).iter_mut().zip(g).zip(&xv) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let x = *x;
                if needs!(x) {
                    let yv: Vec<Real> = y.to_vec();
                    for ((d, gv), yv) in buf!(x).iter_mut().zip(g).zip(&yv) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::Softplus(x) => {
                let x = *x;
                if needs!(x) {
                    let xv: Vec<Real> = val!(x).to_vec();
                    for ((d, gv), xv) in buf!(x).iter_mut().zip(g).zip(&xv) {
                        *d += gv * stable_sigmoid(*xv);
                    }
                }
            }
            Op::SqrtEps(x) => {
                let x = *x;
                if needs!(x) {
                    let yv: Vec<Real> = y.to_vec();
                    for ((d, gv), yv) in buf!(x).iter_mut().zip(g).zip(&yv) {
                        *d += gv * 0.5 / yv;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let m = nodes[a.0].value.shape()[0];
                let kk = nodes[a.0].value.shape()[1];
                let n = nodes[b.0].value.shape()[1];
                let (na, nb) = (needs!(a), needs!(b));
                let av: Vec<Real> = val!(a).to_vec();
                let bv: Vec<Real> = val!(b).to_vec();
                if na {
                    k::matmul_bwd(g, &av, &bv, Some(buf!(a)), None, m, kk, n);
                }
                if nb {
                    k::matmul_bwd(g, &av, &bv, None, Some(buf!(b)), m, kk, n);
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let xs = nodes[x.0].value.shape().to_vec();
                let ws = nodes[w.0].value.shape().to_vec();
                let os = nodes[i].value.shape().to_vec();
                let dims = (xs[0], xs[1], xs[2]);
                let wk = (ws[0], ws[2]);
                let out_hw = (os[1], os[2]);
                if needs!(x) {
                    let wv: Vec<Real> = val!(w).to_vec();
                    k::conv2d_bwd_x(g, dims, &wv, wk, stride, pad, buf!(x), out_hw);
                }
                if needs!(w) {
                    let xv: Vec<Real> = val!(x).to_vec();
                    k::conv2d_bwd_w(g, &xv, dims, wk, stride, pad, buf!(w), out_hw);
                }
                if let Some(bv) = b {
                    if needs!(bv) {
                        let (oh, ow) = out_hw;
                        let db = buf!(bv);
                        for co in 0..ws[0] {
                            db[co] += g[co * oh * ow..(co + 1) * oh * ow].iter().sum::<Real>();
                        }
                    }
                }
            }
            Op::Conv1x1 { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xs = nodes[x.0].value.shape().to_vec();
                let (cin, hw) = (xs[0], xs[1] * xs[2]);
                let cout = nodes[w.0].value.shape()[0];
                let (nx, nw) = (needs!(x), needs!(w));
                let wv: Vec<Real> = val!(w).to_vec();
                let xv: Vec<Real> = val!(x).to_vec();
                if nw {
                    k::matmul_bwd(g, &wv, &xv, Some(buf!(w)), None, cout, cin, hw);
                }
                if nx {
                    k::matmul_bwd(g, &wv, &xv, None, Some(buf!(x)), cout, cin, hw);
                }
                if let Some(bv) = b {
                    if needs!(bv) {
                        let db = buf!(bv);
                        for co in 0..cout {
                            db[co] += g[co * hw..(co + 1) * hw].iter().sum::<Real>();
                        }
                    }
                }
            }
            Op::Depthwise { x, w, pad } => {
                let (x, w, pad) = (*x, *w, *pad);
                let xs = nodes[x.0].value.shape().to_vec();
                let os = nodes[i].value.shape().to_vec();
                let dims = (xs[0], xs[1], xs[2]);
                let out_hw = (os[1], os[2]);
                let kk = nodes[w.0].value.shape()[1];
                let (nx, nw) = (needs!(x), needs!(w));
                let wv: Vec<Real> = val!(w).to_vec();
                let xv: Vec<Real> = val!(x).to_vec();
                if nx {
                    k::depthwise_bwd(g, &xv, dims, &wv, kk, pad, Some(buf!(x)), None, out_hw);
                }
                if nw {
                    k::depthwise_bwd(g, &xv, dims, &wv, kk, pad, None, Some(buf!(w)), out_hw);
                }
            }
            Op::SoftmaxRows(x) => {
                let x = *x;
                if needs!(x) {
                    let s = nodes[i].value.shape();
                    let (rows, cols) = (s[0], s[1]);
                    let yv: Vec<Real> = y.to_vec();
                    k::softmax_rows_bwd(g, &yv, buf!(x), rows, cols);
                }
            }
            Op::Gap(x) => {
                let x = *x;
                if needs!(x) {
                    let s = nodes[x.0].value.shape().to_vec();
                    let hw = s[1] * s[2];
                    let inv = 1.0 / hw as Real;
                    let dx = buf!(x);
                    for c in 0..s[0] {
                        let gv = g[c] * inv;
                        for d in dx[c * hw..(c + 1) * hw].iter_mut() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Resize(x) => {
                let x = *x;
                if needs!(x) {
                    let xs = nodes[x.0].value.shape().to_vec();
                    let os = nodes[i].value.shape().to_vec();
                    k::bilinear_bwd(g, (xs[0], xs[1], xs[2]), buf!(x), (os[1], os[2]));
                }
            }
            Op::RepPad1(x) => {
                let x = *x;
                if needs!(x) {
                    let s = nodes[x.0].value.shape().to_vec();
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let (oh, ow) = (h + 2, w + 2);
                    let dx = buf!(x);
                    for ci in 0..c {
                        for oy in 0..oh {
                            let iy = oy.saturating_sub(1).min(h - 1);
                            for ox in 0..ow {
                                let ix = ox.saturating_sub(1).min(w - 1);
                                dx[(ci * h + iy) * w + ix] += g[(ci * oh + oy) * ow + ox];
                            }
                        }
                    }
                }
            }
            Op::ConcatCh(a, b) => {
                let (a, b) = (*a, *b);
                let na = nodes[a.0].value.numel();
                if needs!(a) {
                    for (d, gv) in buf!(a).iter_mut().zip(&g[..na]) {
                        *d += gv;
                    }
                }
                if needs!(b) {
                    for (d, gv) in buf!(b).iter_mut().zip(&g[na..]) {
                        *d += gv;
                    }
                }
            }
            Op::SliceCh { x, from } => {
                let (x, from) = (*x, *from);
                if needs!(x) {
                    let s = nodes[x.0].value.shape().to_vec();
                    let hw = s[1] * s[2];
                    let dx = buf!(x);
                    for (d, gv) in dx[from * hw..].iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let xs = xs.clone();
                let total = nodes[i].value.shape()[1];
                let rows = nodes[i].value.shape()[0];
                let mut col0 = 0;
                for v in xs {
                    let cw = nodes[v.0].value.shape()[1];
                    if needs!(v) {
                        let dv = buf!(v);
                        for r in 0..rows {
                            for c in 0..cw {
                                dv[r * cw + c] += g[r * total + col0 + c];
                            }
                        }
                    }
                    col0 += cw;
                }
            }
            Op::SliceCols { x, from } => {
                let (x, from) = (*x, *from);
                let len = nodes[i].value.shape()[1];
                let rows = nodes[i].value.shape()[0];
                let cols = nodes[x.0].value.shape()[1];
                if needs!(x) {
                    let dx = buf!(x);
                    for r in 0..rows {
                        for c in 0..len {
                            dx[r * cols + from + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::Transpose2(x) => {
                let x = *x;
                let rows = nodes[x.0].value.shape()[0];
                let cols = nodes[x.0].value.shape()[1];
                if needs!(x) {
                    let dx = buf!(x);
                    for r in 0..rows {
                        for c in 0..cols {
                            dx[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            Op::ChannelNorm { x, eps } => {
                let (x, eps) = (*x, *eps);
                if needs!(x) {
                    let s = nodes[x.0].value.shape().to_vec();
                    let hw = s[1] * s[2];
                    let xv: Vec<Real> = val!(x).to_vec();
                    let yv: Vec<Real> = y.to_vec();
                    let dx = buf!(x);
                    for c in 0..s[0] {
                        let xs = &xv[c * hw..(c + 1) * hw];
                        let ys = &yv[c * hw..(c + 1) * hw];
                        let gs = &g[c * hw..(c + 1) * hw];
                        let mean = xs.iter().sum::<Real>() / hw as Real;
                        let var =
                            xs.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / hw as Real;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gm = gs.iter().sum::<Real>() / hw as Real;
                        let gym = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<Real>() / hw as Real;
                        for p in 0..hw {
                            dx[c * hw + p] += inv * (gs[p] - gm - ys[p] * gym);
                        }
                    }
                }
            }
            Op::ChwToNc(x) => {
                let x = *x;
                if needs!(x) {
                    let s = nodes[x.0].value.shape().to_vec();
                    let (c, hw) = (s[0], s[1] * s[2]);
                    let dx = buf!(x);
                    for ci in 0..c {
                        for p in 0..hw {
                            dx[ci * hw + p] += g[p * c + ci];
                        }
                    }
                }
            }
            Op::NcToChw(x) => {
                let x = *x;
                if needs!(x) {
                    let s = nodes[x.0].value.shape().to_vec();
                    let (n, c) = (s[0], s[1]);
                    let dx = buf!(x);
                    for p in 0..n {
                        for ci in 0..c {
                            dx[p * c + ci] += g[ci * n + p];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                let x = *x;
                if needs!(x) {
                    for (d, gv) in buf!(x).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::MulChannel { x, s } => {
                let (x, s) = (*x, *s);
                let sh = nodes[x.0].value.shape().to_vec();
                let hw = sh[1] * sh[2];
                if needs!(x) {
                    let sv: Vec<Real> = val!(s).to_vec();
                    let dx = buf!(x);
                    for c in 0..sh[0] {
                        for p in 0..hw {
                            dx[c * hw + p] += g[c * hw + p] * sv[c];
                        }
                    }
                }
                if needs!(s) {
                    let xv: Vec<Real> = val!(x).to_vec();
                    let ds = buf!(s);
                    for c in 0..sh[0] {
                        let mut acc = 0.0;
                        for p in 0..hw {
                            acc += g[c * hw + p] * xv[c * hw + p];
                        }
                        ds[c] += acc;
                    }
                }
            }
            Op::MulSpatial { x, a } => {
                let (x, a) = (*x, *a);
                let sh = nodes[x.0].value.shape().to_vec();
                let hw = sh[1] * sh[2];
                if needs!(x) {
                    let av: Vec<Real> = val!(a).to_vec();
                    let dx = buf!(x);
                    for c in 0..sh[0] {
                        for p in 0..hw {
                            dx[c * hw + p] += g[c * hw + p] * av[p];
                        }
                    }
                }
                if needs!(a) {
                    let xv: Vec<Real> = val!(x).to_vec();
                    let da = buf!(a);
                    for c in 0..sh[0] {
                        for p in 0..hw {
                            da[p] += g[c * hw + p] * xv[c * hw + p];
                        }
                    }
                }
            }
            Op::AddRowBias { m, b } => {
                let (m, b) = (*m, *b);
                let sh = nodes[m.0].value.shape().to_vec();
                let (rows, cols) = (sh[0], sh[1]);
                if needs!(m) {
                    for (d, gv) in buf!(m).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if needs!(b) {
                    let db = buf!(b);
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::MulScalar { x, s } => {
                let (x, s) = (*x, *s);
                let sv = nodes[s.0].value.item();
                if needs!(x) {
                    for (d, gv) in buf!(x).iter_mut().zip(g) {
                        *d += gv * sv;
                    }
                }
                if needs!(s) {
                    let xv: Vec<Real> = val!(x).to_vec();
                    let mut acc = 0.0;
                    for (gv, x) in g.iter().zip(&xv) {
                        acc += gv * x;
                    }
                    buf!(s)[0] += acc;
                }
            }
            Op::SumAll(x) => {
                let x = *x;
                if needs!(x) {
                    let gv = g[0];
                    for d in buf!(x).iter_mut() {
                        *d += gv;
                    }
                }
            }
            Op::MeanAll(x) => {
                let x = *x;
                if needs!(x) {
                    let n = nodes[x.0].value.numel() as Real;
                    let gv = g[0] / n;
                    for d in buf!(x).iter_mut() {
                        *d += gv;
                    }
                }
            }
            Op::Bce { pred, target } => {
                let pred = *pred;
                if needs!(pred) {
                    let td = target.data().to_vec();
                    let pv: Vec<Real> = val!(pred).to_vec();
                    let n = pv.len() as Real;
                    let gv = g[0] / n;
                    let dp = buf!(pred);
                    for ((d, p), yv) in dp.iter_mut().zip(&pv).zip(&td) {
                        if *p > BCE_CLAMP && *p < 1.0 - BCE_CLAMP {
                            *d += gv * (p - yv) / (p * (1.0 - p));
                        }
                    }
                }
            }
            Op::SoftIou { pred, target, eps } => {
                let (pred, eps) = (*pred, *eps);
                if needs!(pred) {
                    let td = target.data().to_vec();
                    let pv: Vec<Real> = val!(pred).to_vec();
                    let mut inter = 0.0;
                    let mut sum_p = 0.0;
                    let mut sum_y = 0.0;
                    for (p, yv) in pv.iter().zip(&td) {
                        inter += p * yv;
                        sum_p += p;
                        sum_y += yv;
                    }
                    let d_big = sum_p + sum_y - inter + eps;
                    let n_big = inter + eps;
                    let gv = g[0];
                    let dp = buf!(pred);
                    for ((d, _p), yv) in dp.iter_mut().zip(&pv).zip(&td) {
                        *d += gv * -(yv * d_big - n_big * (1.0 - yv)) / (d_big * d_big);
                    }
                }
            }
        }
    }
}

// ── tests ──

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Real, b: Real, tol: Real) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn conv2d_identity_kernel_reproduces_input() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[1, 4, 4], |i| i as Real * 0.5));
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0; // center tap
        let w = g.leaf(&w);
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv2d_zero_input_yields_bias() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::zeros(&[2, 4, 4]));
        let w = g.leaf(&Tensor::from_fn(&[3, 2, 3, 3], |i| i as Real * 0.01));
        let b = g.leaf(&Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
        for co in 0..3 {
            let expect = [1.0, -2.0, 0.5][co];
            for p in 0..16 {
                assert_eq!(g.value(y).data()[co * 16 + p], expect);
            }
        }
    }

    #[test]
    fn conv2d_stride2_halves_output() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::zeros(&[1, 8, 8]));
        let w = g.leaf(&Tensor::zeros(&[4, 1, 3, 3]));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[4, 4, 4]);
    }

    #[test]
    fn conv2d_channel_mismatch_names_axis() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::zeros(&[2, 4, 4]));
        let w = g.leaf(&Tensor::zeros(&[1, 3, 3, 3]));
        let err = g.conv2d(x, w, None, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("axis 1"), "got: {msg}");
    }

    #[test]
    fn depthwise_identity_and_channel_independence() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[2, 4, 4], |i| i as Real));
        let mut w = Tensor::zeros(&[2, 3, 3]);
        w.data_mut()[4] = 1.0; // ch 0: identity
        w.data_mut()[9 + 4] = 2.0; // ch 1: doubling
        let w = g.leaf(&w);
        let y = g.depthwise_conv2d(x, w, 1).unwrap();
        for p in 0..16 {
            assert_eq!(g.value(y).data()[p], p as Real);
            assert_eq!(g.value(y).data()[16 + p], 2.0 * (16 + p) as Real);
        }
    }

    #[test]
    fn depthwise_laplacian_zero_interior_on_constant() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::full(&[1, 5, 5], 3.7));
        let w = g.leaf(
            &Tensor::new(&[1, 3, 3], vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]).unwrap(),
        );
        let y = g.depthwise_conv2d(x, w, 1).unwrap();
        for yy in 1..4 {
            for xx in 1..4 {
                assert!(close(g.value(y).at3(0, yy, xx), 0.0, 1e-12));
            }
        }
    }

    #[test]
    fn conv1x1_identity_zero_and_sum() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[2, 2, 2], |i| i as Real + 1.0));
        let ident = g.leaf(&Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = g.conv1x1(x, ident, None).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let zero = g.leaf(&Tensor::zeros(&[3, 2]));
        let y = g.conv1x1(x, zero, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let ones = g.leaf(&Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
        let y = g.conv1x1(x, ones, None).unwrap();
        for p in 0..4 {
            let expect = g.value(x).data()[p] + g.value(x).data()[4 + p];
            assert_eq!(g.value(y).data()[p], expect);
        }
    }

    #[test]
    fn matmul_hand_and_identity() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.leaf(&Tensor::new(&[2, 1], vec![5.0, 6.0]).unwrap());
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[17.0, 39.0]);

        let i2 = g.leaf(&Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = g.matmul(a, i2).unwrap();
        assert_eq!(g.value(y).data(), g.value(a).data());
    }

    #[test]
    fn matmul_mismatch_names_inner_axis() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::zeros(&[2, 3]));
        let b = g.leaf(&Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("axis 1"));
    }

    #[test]
    fn softmax_uniform_and_hand_value() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::full(&[2, 4], 1.3));
        let y = g.softmax_rows(x).unwrap();
        for v in g.value(y).data() {
            assert!(close(*v, 0.25, 1e-12));
        }

        let x = g.leaf(&Tensor::new(&[1, 2], vec![0.0, (3.0 as Real).ln()]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        assert!(close(g.value(y).data()[0], 0.25, 1e-12));
        assert!(close(g.value(y).data()[1], 0.75, 1e-12));
    }

    #[test]
    fn softmax_single_column_is_one() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(&[3, 1], vec![-5.0, 0.0, 7.0]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[5, 7], |i| ((i * 37) % 11) as Real - 5.0));
        let y = g.softmax_rows(x).unwrap();
        for r in 0..5 {
            let s: Real = g.value(y).data()[r * 7..(r + 1) * 7].iter().sum();
            assert!(close(s, 1.0, 1e-9));
        }
    }

    #[test]
    fn softmax_shift_invariance_bitwise_on_exact_sums() {
        // Entries are dyadic rationals and the shift is a small integer, so
        // x + c is exact and the max-subtracted logits are bitwise identical.
        let vals: Vec<Real> = (0..8).map(|i| i as Real * 0.25).collect();
        let shifted: Vec<Real> = vals.iter().map(|v| v + 3.0).collect();
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::new(&[2, 4], vals).unwrap());
        let b = g.leaf(&Tensor::new(&[2, 4], shifted).unwrap());
        let ya = g.softmax_rows(a).unwrap();
        let yb = g.softmax_rows(b).unwrap();
        assert_eq!(g.value(ya).data(), g.value(yb).data());
    }

    #[test]
    fn slice_cols_inverts_concat_cols_and_routes_grads() {
        let mut g = Graph::new();
        let a = g.leaf_owned(Tensor::from_fn(&[3, 2], |i| i as Real).with_grad());
        let b = g.leaf_owned(Tensor::from_fn(&[3, 4], |i| -(i as Real)).with_grad());
        let cat = g.concat_cols(&[a, b]).unwrap();
        let a2 = g.slice_cols(cat, 0, 2).unwrap();
        let b2 = g.slice_cols(cat, 2, 4).unwrap();
        assert_eq!(g.value(a2).data(), g.value(a).data());
        assert_eq!(g.value(b2).data(), g.value(b).data());
        // Summing only the first window must leave the second input untouched.
        let s = g.sum_all(a2);
        g.backward(s).unwrap();
        assert!(g.grad(a).data().iter().all(|&v| v == 1.0));
        assert!(g.grad(b).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transpose2_is_involutive_and_grad_transposes() {
        let mut g = Graph::new();
        let x = g.leaf_owned(Tensor::from_fn(&[2, 3], |i| (i * i) as Real).with_grad());
        let xt = g.transpose2(x).unwrap();
        assert_eq!(g.shape(xt), &[3, 2]);
        assert_eq!(g.value(xt).data()[2 * 2 + 1], g.value(x).data()[1 * 3 + 2]);
        let xtt = g.transpose2(xt).unwrap();
        assert_eq!(g.value(xtt).data(), g.value(x).data());
        // d(sum of column 0 of x^T)/dx lights up row 0 of x.
        let col = g.slice_cols(xt, 0, 1).unwrap();
        let s = g.sum_all(col);
        g.backward(s).unwrap();
        let gx = g.grad(x);
        assert_eq!(gx.data(), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn sigmoid_extreme_inputs_stay_finite() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(&[2], vec![-1e4, 1e4]).unwrap());
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).data()[0], 0.0);
        assert_eq!(g.value(y).data()[1], 1.0);
    }

    #[test]
    fn gap_constant_and_hand_mean() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::full(&[3, 4, 4], 2.5));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5, 2.5, 2.5]);

        let x = g.leaf(&Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[2, 3, 5], |i| i as Real * 0.3));
        let y = g.bilinear_resize(x, 3, 5).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let c = g.leaf(&Tensor::full(&[1, 4, 4], 0.7));
        let y = g.bilinear_resize(c, 8, 8).unwrap();
        for v in g.value(y).data() {
            assert!(close(*v, 0.7, 1e-12));
        }
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::from_fn(&[2, 3, 3], |i| i as Real));
        let b = g.leaf(&Tensor::from_fn(&[1, 3, 3], |i| 100.0 + i as Real));
        let cat = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(cat), &[3, 3, 3]);
        let sa = g.slice_channels(cat, 0, 2).unwrap();
        let sb = g.slice_channels(cat, 2, 1).unwrap();
        assert_eq!(g.value(sa).data(), g.value(a).data());
        assert_eq!(g.value(sb).data(), g.value(b).data());
    }

    #[test]
    fn channel_norm_standardizes() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[2, 4, 4], |i| (i * i % 13) as Real));
        let y = g.channel_norm(x, 1e-5).unwrap();
        for c in 0..2 {
            let d = &g.value(y).data()[c * 16..(c + 1) * 16];
            let mean: Real = d.iter().sum::<Real>() / 16.0;
            let var: Real = d.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / 16.0;
            assert!(close(mean, 0.0, 1e-9));
            assert!(close(var, 1.0, 1e-3));
        }
    }

    #[test]
    fn chw_nc_roundtrip() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[3, 2, 4], |i| i as Real));
        let nc = g.chw_to_nc(x).unwrap();
        assert_eq!(g.shape(nc), &[8, 3]);
        assert_eq!(g.value(nc).data()[0 * 3 + 1], g.value(x).at3(1, 0, 0));
        let back = g.nc_to_chw(nc, 2, 4).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[2, 3], |i| i as Real).with_grad());
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_of_square_is_two_x() {
        let mut g = Graph::new();
        let t = Tensor::from_fn(&[4], |i| i as Real - 1.5).with_grad();
        let x = g.leaf(&t);
        let y = g.mul(x, x).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        for (gv, xv) in g.grad(x).data().iter().zip(t.data()) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[3], |i| i as Real).with_grad());
        let unused = g.leaf(&Tensor::from_fn(&[3], |i| i as Real).with_grad());
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        assert!(g.grad(unused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fanout_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[3], |i| i as Real).with_grad());
        let s1 = g.sum_all(x);
        let s2 = g.sum_all(x);
        let tot = g.add(s1, s2).unwrap();
        g.backward(tot).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::zeros(&[2, 2]).with_grad());
        let y = g.relu(x);
        let err = g.backward(y).unwrap_err();
        assert!(err.to_string().contains("scalar"));
    }

    #[test]
    fn bce_hand_values() {
        // uniform 0.5 prediction: -ln(0.5) = ln 2
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::full(&[4], 0.5));
        let t = Tensor::new(&[4], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let l = g.bce_loss(p, &t).unwrap();
        assert!(close(g.value(l).item(), (2.0 as Real).ln(), 1e-12));

        // perfect-ish prediction 0.9/one pixel: -ln(0.9)
        let p = g.leaf(&Tensor::scalar(0.9));
        let t = Tensor::scalar(1.0);
        let l = g.bce_loss(p, &t).unwrap();
        assert!(close(g.value(l).item(), -(0.9 as Real).ln(), 1e-12));
    }

    #[test]
    fn bce_extreme_predictions_finite() {
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
        let t = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        let l = g.bce_loss(p, &t).unwrap();
        assert!(g.value(l).item().is_finite());
    }

    #[test]
    fn soft_iou_half_overlap() {
        // pred == 1 on half the target, 0 elsewhere; I=1, U=2
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::new(&[4], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let t = Tensor::new(&[4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let l = g.soft_iou_loss(p, &t, 1e-6).unwrap();
        let eps = 1e-6;
        let expect = 1.0 - (1.0 + eps) / (2.0 + eps);
        assert!(close(g.value(l).item(), expect, 1e-12));
    }

    #[test]
    fn soft_iou_both_empty_is_zero_loss() {
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::zeros(&[8]));
        let t = Tensor::zeros(&[8]);
        let l = g.soft_iou_loss(p, &t, 1e-6).unwrap();
        assert!(close(g.value(l).item(), 0.0, 1e-12));
    }

    #[test]
    fn mul_scalar_and_row_bias() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let s = g.leaf(&Tensor::scalar(-2.0));
        let y = g.mul_scalar(x, s).unwrap();
        assert_eq!(g.value(y).data(), &[-2.0, -4.0, -6.0, -8.0]);

        let b = g.leaf(&Tensor::new(&[2], vec![10.0, 20.0]).unwrap());
        let z = g.add_row_bias(x, b).unwrap();
        assert_eq!(g.value(z).data(), &[11.0, 22.0, 13.0, 24.0]);
    }
}
