use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use super::kernels::{self, ConvGeometry};
use super::{NumericsError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Relu,
    Tanh,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Square,
    Neg,
    /// `x mod 2π` into `[0, 2π)`; the derivative is taken as 1.
    WrapPhase,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Tanh => libm::tanh(x),
            Unary::Sin => libm::sin(x),
            Unary::Cos => libm::cos(x),
            Unary::Exp => libm::exp(x),
            Unary::Ln => libm::log(x),
            Unary::Sqrt => libm::sqrt(x),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Neg => -x,
            Unary::WrapPhase => wrap_phase(x),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Sin => libm::cos(x),
            Unary::Cos => -libm::sin(x),
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Neg => -1.0,
            Unary::WrapPhase => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn wrap_phase(x: f64) -> f64 {
    let r = x - TAU * libm::floor(x / TAU);
    if r >= TAU || r < 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
    },
    MulRows {
        a: Var,
        s: Var,
    },
    Scale {
        a: Var,
        c: f64,
    },
    AddScalar {
        a: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    MatMulNt {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        transpose_b: bool,
    },
    Conv2d {
        input: Var,
        weight: Var,
        cols: Vec<f64>,
        geom: ConvGeometry,
        out_channels: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
    },
    Gather {
        a: Var,
        indices: Vec<usize>,
        width: usize,
    },
    Pick {
        a: Var,
        indices: Vec<usize>,
    },
    GatherRows {
        a: Var,
        rows: Vec<usize>,
    },
    Softmax {
        a: Var,
    },
    LogSoftmax {
        a: Var,
    },
    Unary {
        a: Var,
        kind: Unary,
    },
    LayerNorm {
        a: Var,
        inv_std: Vec<f64>,
    },
    MeanPool {
        a: Var,
        batch: usize,
        n: usize,
        d: usize,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Magnitude {
        re: Var,
        im: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records primitive operations during a forward pass for reverse-mode
/// differentiation. Nodes are stored in creation order, so every node's
/// inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// The leaf tensor with its `grad` buffer populated.
    pub fn leaf(&self, v: Var) -> Option<Tensor> {
        let mut t = self.leaves.get(v.0)?.clone()?;
        t.set_grad(self.get(v)?.to_vec()).ok()?;
        Some(t)
    }
}

fn is_suffix(shape: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= shape.len() && shape[shape.len() - suffix.len()..] == *suffix
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// True when gradients will flow into `v` during backward.
    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        let op = if tracked { op } else { Op::Constant };
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; it participates in backward when `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let tracked = tensor.requires_grad();
        let mut value = tensor;
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Constant, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var, name: &'static str) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !is_suffix(sa, sb) {
            return Err(NumericsError::ShapeMismatch {
                op: name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let shape = sa.to_vec();
        let (da, db) = (self.data(a), self.data(b));
        let period = db.len();
        let data: Vec<f64> = if period == 0 {
            Vec::new()
        } else {
            match kind {
                Binary::Add => da.iter().enumerate().map(|(i, x)| x + db[i % period]).collect(),
                Binary::Sub => da.iter().enumerate().map(|(i, x)| x - db[i % period]).collect(),
                Binary::Mul => da.iter().enumerate().map(|(i, x)| x * db[i % period]).collect(),
                Binary::Div => da.iter().enumerate().map(|(i, x)| x / db[i % period]).collect(),
            }
        };
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Binary { kind, a, b }, tracked))
    }

    /// Element-wise sum; the smaller operand's shape must be a suffix of the
    /// larger's and is repeated along the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a).len() < self.shape(b).len() {
            self.binary(Binary::Add, b, a, "add")
        } else {
            self.binary(Binary::Add, a, b, "add")
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(Binary::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a).len() < self.shape(b).len() {
            self.binary(Binary::Mul, b, a, "mul")
        } else {
            self.binary(Binary::Mul, a, b, "mul")
        }
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(Binary::Div, a, b, "div")
    }

    /// Scales each leading-axis slice of `a` by the matching entry of `s`.
    pub fn mul_rows(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let (sa, ss) = (self.shape(a), self.shape(s));
        if ss.len() != 1 || sa.is_empty() || sa[0] != ss[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "mul_rows",
                lhs: sa.to_vec(),
                rhs: ss.to_vec(),
            });
        }
        let shape = sa.to_vec();
        let rows = ss[0];
        let block = if rows == 0 { 0 } else { self.value(a).len() / rows };
        let (da, ds) = (self.data(a), self.data(s));
        let data = da.iter().enumerate().map(|(i, x)| x * ds[i / block]).collect();
        let tracked = self.tracked(&[a, s]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::MulRows { a, s }, tracked))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a);
        let data = value.data().iter().map(|x| x * c).collect();
        let t = Tensor::from_parts(value.shape().to_vec(), data);
        let tracked = self.tracked(&[a]);
        self.push(t, Op::Scale { a, c }, tracked)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a);
        let data = value.data().iter().map(|x| x + c).collect();
        let t = Tensor::from_parts(value.shape().to_vec(), data);
        let tracked = self.tracked(&[a]);
        self.push(t, Op::AddScalar { a }, tracked)
    }

    /// `a[..., k] · b[k, n] -> [..., n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).len() / k.max(1);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b, m, k, n }, tracked))
    }

    /// `a[..., k] · b[n, k]ᵀ -> [..., n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[1] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul_nt",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let k = sb[1];
        let n = sb[0];
        let m = self.value(a).len() / k.max(1);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMulNt { a, b, m, k, n }, tracked))
    }

    /// Batched product of `a[B, m, k]` with `b[B, k, n]`, or with `b[B, n, k]`
    /// transposed when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mismatch = || NumericsError::ShapeMismatch {
            op: "bmm",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b {
            if sb[2] != k {
                return Err(mismatch());
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(mismatch());
            }
            sb[2]
        };
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..batch {
            let a_blk = &da[i * m * k..(i + 1) * m * k];
            let b_blk = &db[i * k * n..(i + 1) * k * n];
            let o_blk = &mut out[i * m * n..(i + 1) * m * n];
            if transpose_b {
                kernels::matmul_nt_acc(a_blk, b_blk, o_blk, m, k, n);
            } else {
                kernels::matmul_acc(a_blk, b_blk, o_blk, m, k, n);
            }
        }
        let tracked = self.tracked(&[a, b]);
        let op = Op::Bmm {
            a,
            b,
            batch,
            m,
            k,
            n,
            transpose_b,
        };
        Ok(self.push(Tensor::from_parts(vec![batch, m, n], out), op, tracked))
    }

    /// Square-kernel convolution of `input[B, H, W, C]` with
    /// `weight[kernel·kernel·C, C_out]` via im2col and a matrix product.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var, NumericsError> {
        let (si, sw) = (self.shape(input), self.shape(weight));
        let mismatch = || NumericsError::ShapeMismatch {
            op: "conv2d",
            lhs: si.to_vec(),
            rhs: sw.to_vec(),
        };
        if si.len() != 4 || sw.len() != 2 || kernel == 0 || stride == 0 {
            return Err(mismatch());
        }
        let (batch, height, width, channels) = (si[0], si[1], si[2], si[3]);
        if sw[0] != kernel * kernel * channels {
            return Err(mismatch());
        }
        if height + 2 * padding < kernel || width + 2 * padding < kernel {
            return Err(NumericsError::InvalidShape {
                op: "conv2d",
                shape: si.to_vec(),
                reason: "spatial size smaller than kernel",
            });
        }
        let geom = ConvGeometry {
            batch,
            height,
            width,
            channels,
            kernel,
            stride,
            padding,
            out_height: (height + 2 * padding - kernel) / stride + 1,
            out_width: (width + 2 * padding - kernel) / stride + 1,
        };
        let out_channels = sw[1];
        let cols = geom.im2col(self.data(input));
        let mut out = vec![0.0; geom.positions() * out_channels];
        kernels::matmul_acc(&cols, self.data(weight), &mut out, geom.positions(), geom.patch_len(), out_channels);
        let shape = vec![batch, geom.out_height, geom.out_width, out_channels];
        let tracked = self.tracked(&[input, weight]);
        let op = Op::Conv2d {
            input,
            weight,
            cols: if tracked { cols } else { Vec::new() },
            geom,
            out_channels,
        };
        Ok(self.push(Tensor::from_parts(shape, out), op, tracked))
    }

    /// Concatenates along the trailing axis; leading shapes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or(NumericsError::InvalidShape {
            op: "concat",
            shape: Vec::new(),
            reason: "no inputs",
        })?;
        let lead = self.shape(*first);
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(*first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let tracked = self.tracked(parts);
        let op = Op::Concat {
            parts: parts.iter().copied().zip(widths).collect(),
        };
        Ok(self.push(Tensor::from_parts(shape, out), op, tracked))
    }

    /// Selects trailing-axis entries: `out[..., j] = a[..., indices[j]]`.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        let width = s.last().copied().unwrap_or(1);
        if let Some(&bad) = indices.iter().find(|&&i| i >= width) {
            return Err(NumericsError::IndexOutOfRange { index: bad, size: width });
        }
        let mut shape = s[..s.len().saturating_sub(1)].to_vec();
        shape.push(indices.len());
        let rows = self.value(a).rows();
        let d = self.data(a);
        let mut out = Vec::with_capacity(rows * indices.len());
        for r in 0..rows {
            let row = &d[r * width..(r + 1) * width];
            out.extend(indices.iter().map(|&i| row[i]));
        }
        let tracked = self.tracked(&[a]);
        let op = Op::Gather {
            a,
            indices: indices.to_vec(),
            width,
        };
        Ok(self.push(Tensor::from_parts(shape, out), op, tracked))
    }

    /// Trailing-axis slice `[start, start + len)`.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather(a, &idx)
    }

    /// One entry per row: `out[r] = a[r, indices[r]]` for `a[R, K]`.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != indices.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "pick",
                lhs: s.to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let k = s[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(NumericsError::IndexOutOfRange { index: bad, size: k });
        }
        let d = self.data(a);
        let out = indices.iter().enumerate().map(|(r, &i)| d[r * k + i]).collect();
        let tracked = self.tracked(&[a]);
        let op = Op::Pick {
            a,
            indices: indices.to_vec(),
        };
        Ok(self.push(Tensor::from_parts(vec![indices.len()], out), op, tracked))
    }

    /// Selects leading-axis slices (batch rows).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.is_empty() {
            return Err(NumericsError::InvalidShape {
                op: "gather_rows",
                shape: Vec::new(),
                reason: "scalar has no rows",
            });
        }
        let n = s[0];
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(NumericsError::IndexOutOfRange { index: bad, size: n });
        }
        let block = if n == 0 { 0 } else { self.value(a).len() / n };
        let mut shape = s.to_vec();
        shape[0] = rows.len();
        let d = self.data(a);
        let mut out = Vec::with_capacity(rows.len() * block);
        for &r in rows {
            out.extend_from_slice(&d[r * block..(r + 1) * block]);
        }
        let tracked = self.tracked(&[a]);
        let op = Op::GatherRows { a, rows: rows.to_vec() };
        Ok(self.push(Tensor::from_parts(shape, out), op, tracked))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let w = v.last_dim();
        let mut out = vec![0.0; v.len()];
        for (src, dst) in v.data().chunks_exact(w.max(1)).zip(out.chunks_exact_mut(w.max(1))) {
            kernels::softmax_row(src, dst);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let tracked = self.tracked(&[a]);
        self.push(t, Op::Softmax { a }, tracked)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let w = v.last_dim();
        let mut out = vec![0.0; v.len()];
        for (src, dst) in v.data().chunks_exact(w.max(1)).zip(out.chunks_exact_mut(w.max(1))) {
            kernels::log_softmax_row(src, dst);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let tracked = self.tracked(&[a]);
        self.push(t, Op::LogSoftmax { a }, tracked)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| kind.apply(x)).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        let tracked = self.tracked(&[a]);
        self.push(t, Op::Unary { a, kind }, tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    /// Normalizes each trailing-axis row to zero mean and unit variance.
    pub fn layernorm(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a);
        let w = v.last_dim().max(1);
        let mut out = vec![0.0; v.len()];
        let mut inv_std = Vec::with_capacity(v.rows());
        for (src, dst) in v.data().chunks_exact(w).zip(out.chunks_exact_mut(w)) {
            let mean = src.iter().sum::<f64>() / w as f64;
            let var = src.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w as f64;
            let denom = libm::sqrt(var + eps);
            let inv = if denom > 0.0 { 1.0 / denom } else { 0.0 };
            for (o, x) in dst.iter_mut().zip(src) {
                *o = (x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let tracked = self.tracked(&[a]);
        self.push(t, Op::LayerNorm { a, inv_std }, tracked)
    }

    /// Mean over the middle axis: `[B, N, d] -> [B, d]`.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 3 || s[1] == 0 {
            return Err(NumericsError::InvalidShape {
                op: "mean_pool",
                shape: s.to_vec(),
                reason: "expected [batch, positions > 0, channels]",
            });
        }
        let (batch, n, d) = (s[0], s[1], s[2]);
        let src = self.data(a);
        let mut out = vec![0.0; batch * d];
        for b in 0..batch {
            let o = &mut out[b * d..(b + 1) * d];
            for p in 0..n {
                kernels::add_into(o, &src[(b * n + p) * d..(b * n + p + 1) * d]);
            }
            for x in o.iter_mut() {
                *x /= n as f64;
            }
        }
        let tracked = self.tracked(&[a]);
        Ok(self.push(Tensor::from_parts(vec![batch, d], out), Op::MeanPool { a, batch, n, d }, tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let tracked = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let tracked = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Mean { a }, tracked)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a).reshaped(shape)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(t, Op::Reshape { a }, tracked))
    }

    /// `sqrt(re² + im²)`; the gradient at the origin is taken as zero.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Result<Var, NumericsError> {
        let (sr, si) = (self.shape(re), self.shape(im));
        if sr != si {
            return Err(NumericsError::ShapeMismatch {
                op: "magnitude",
                lhs: sr.to_vec(),
                rhs: si.to_vec(),
            });
        }
        let data = self
            .data(re)
            .iter()
            .zip(self.data(im))
            .map(|(&x, &y)| libm::hypot(x, y))
            .collect();
        let t = Tensor::from_parts(sr.to_vec(), data);
        let tracked = self.tracked(&[re, im]);
        Ok(self.push(t, Op::Magnitude { re, im }, tracked))
    }

    /// Per-row softmax cross-entropy of `logits[R, C]` against class ids.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NumericsError> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(NumericsError::IndexOutOfRange { index: bad, size: c });
        }
        let d = self.data(logits);
        let mut probs = vec![0.0; d.len()];
        let mut logp = vec![0.0; c];
        let mut out = Vec::with_capacity(labels.len());
        for (r, &label) in labels.iter().enumerate() {
            let row = &d[r * c..(r + 1) * c];
            kernels::log_softmax_row(row, &mut logp);
            out.push(-logp[label]);
            kernels::softmax_row(row, &mut probs[r * c..(r + 1) * c]);
        }
        let tracked = self.tracked(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs: if tracked { probs } else { Vec::new() },
        };
        Ok(self.push(Tensor::from_parts(vec![labels.len()], out), op, tracked))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape and returns the
    /// gradient of every `requires_grad` leaf (zeros when unreachable).
    pub fn backward(self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].tracked {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&nodes, &mut grads, node, &g);
        }
        let mut out_grads = Vec::with_capacity(nodes.len());
        let mut leaves = Vec::with_capacity(nodes.len());
        for (node, g) in nodes.into_iter().zip(grads) {
            if matches!(node.op, Op::Leaf) && node.tracked {
                let len = node.value.len();
                out_grads.push(Some(g.unwrap_or_else(|| vec![0.0; len])));
                leaves.push(Some(node.value.with_requires_grad(true)));
            } else {
                out_grads.push(None);
                leaves.push(None);
            }
        }
        Ok(Gradients {
            grads: out_grads,
            leaves,
        })
    }
}

/// Adds into the gradient buffer of `v` (allocating it on first touch) when
/// `v` is tracked.
fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    let node = &nodes[v.0];
    if !node.tracked {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
    f(buf);
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| nodes[v.0].value.data();
    let out = node.value.data();
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::Binary { kind, a, b } => {
            let (a, b, kind) = (*a, *b, *kind);
            let (da, db) = (val(a), val(b));
            let period = db.len();
            accumulate(nodes, grads, a, |ga| match kind {
                Binary::Add | Binary::Sub => kernels::add_into(ga, g),
                Binary::Mul => {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i] * db[i % period];
                    }
                }
                Binary::Div => {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i] / db[i % period];
                    }
                }
            });
            accumulate(nodes, grads, b, |gb| match kind {
                Binary::Add => kernels::fold_into(gb, g),
                Binary::Sub => {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % period] -= gi;
                    }
                }
                Binary::Mul => {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % period] += gi * da[i];
                    }
                }
                Binary::Div => {
                    for (i, gi) in g.iter().enumerate() {
                        let bv = db[i % period];
                        gb[i % period] -= gi * da[i] / (bv * bv);
                    }
                }
            });
        }
        Op::MulRows { a, s } => {
            let (a, s) = (*a, *s);
            let (da, ds) = (val(a), val(s));
            let block = if ds.is_empty() { 0 } else { da.len() / ds.len() };
            accumulate(nodes, grads, a, |ga| {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i] * ds[i / block];
                }
            });
            accumulate(nodes, grads, s, |gs| {
                for (r, x) in gs.iter_mut().enumerate() {
                    *x += kernels::dot(&g[r * block..(r + 1) * block], &da[r * block..(r + 1) * block]);
                }
            });
        }
        Op::Scale { a, c } => {
            let c = *c;
            accumulate(nodes, grads, *a, |ga| {
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += gi * c;
                }
            });
        }
        Op::AddScalar { a } | Op::Reshape { a } => {
            accumulate(nodes, grads, *a, |ga| kernels::add_into(ga, g));
        }
        Op::MatMul { a, b, m, k, n } => {
            let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
            let (da, db) = (val(a), val(b));
            accumulate(nodes, grads, a, |ga| kernels::matmul_nt_acc(g, db, ga, m, n, k));
            accumulate(nodes, grads, b, |gb| kernels::matmul_tn_acc(da, g, gb, m, k, n));
        }
        Op::MatMulNt { a, b, m, k, n } => {
            let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
            let (da, db) = (val(a), val(b));
            accumulate(nodes, grads, a, |ga| kernels::matmul_acc(g, db, ga, m, n, k));
            accumulate(nodes, grads, b, |gb| kernels::matmul_tn_acc(g, da, gb, m, n, k));
        }
        Op::Bmm {
            a,
            b,
            batch,
            m,
            k,
            n,
            transpose_b,
        } => {
            let (a, b, batch, m, k, n, tb) = (*a, *b, *batch, *m, *k, *n, *transpose_b);
            let (da, db) = (val(a), val(b));
            accumulate(nodes, grads, a, |ga| {
                for i in 0..batch {
                    let gblk = &g[i * m * n..(i + 1) * m * n];
                    let bblk = &db[i * k * n..(i + 1) * k * n];
                    let out = &mut ga[i * m * k..(i + 1) * m * k];
                    if tb {
                        kernels::matmul_acc(gblk, bblk, out, m, n, k);
                    } else {
                        kernels::matmul_nt_acc(gblk, bblk, out, m, n, k);
                    }
                }
            });
            accumulate(nodes, grads, b, |gb| {
                for i in 0..batch {
                    let gblk = &g[i * m * n..(i + 1) * m * n];
                    let ablk = &da[i * m * k..(i + 1) * m * k];
                    let out = &mut gb[i * k * n..(i + 1) * k * n];
                    if tb {
                        kernels::matmul_tn_acc(gblk, ablk, out, m, n, k);
                    } else {
                        kernels::matmul_tn_acc(ablk, gblk, out, m, k, n);
                    }
                }
            });
        }
        Op::Conv2d {
            input,
            weight,
            cols,
            geom,
            out_channels,
        } => {
            let (input, weight, oc) = (*input, *weight, *out_channels);
            let rows = geom.positions();
            let patch = geom.patch_len();
            let dw = val(weight);
            accumulate(nodes, grads, weight, |gw| kernels::matmul_tn_acc(cols, g, gw, rows, patch, oc));
            accumulate(nodes, grads, input, |gi| {
                let mut gcols = vec![0.0; rows * patch];
                kernels::matmul_nt_acc(g, dw, &mut gcols, rows, oc, patch);
                geom.col2im_acc(&gcols, gi);
            });
        }
        Op::Concat { parts } => {
            let total: usize = parts.iter().map(|p| p.1).sum();
            let rows = if total == 0 { 0 } else { g.len() / total };
            let mut offset = 0;
            for &(p, w) in parts {
                accumulate(nodes, grads, p, |gp| {
                    for r in 0..rows {
                        kernels::add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                    }
                });
                offset += w;
            }
        }
        Op::Gather { a, indices, width } => {
            let k = indices.len();
            let width = *width;
            accumulate(nodes, grads, *a, |ga| {
                let rows = if k == 0 { 0 } else { g.len() / k };
                for r in 0..rows {
                    for (j, &i) in indices.iter().enumerate() {
                        ga[r * width + i] += g[r * k + j];
                    }
                }
            });
        }
        Op::Pick { a, indices } => {
            let k = nodes[a.0].value.last_dim();
            accumulate(nodes, grads, *a, |ga| {
                for (r, &i) in indices.iter().enumerate() {
                    ga[r * k + i] += g[r];
                }
            });
        }
        Op::GatherRows { a, rows } => {
            let n = nodes[a.0].value.shape()[0];
            let block = if n == 0 { 0 } else { nodes[a.0].value.len() / n };
            accumulate(nodes, grads, *a, |ga| {
                for (j, &r) in rows.iter().enumerate() {
                    kernels::add_into(&mut ga[r * block..(r + 1) * block], &g[j * block..(j + 1) * block]);
                }
            });
        }
        Op::Softmax { a } => {
            let w = node.value.last_dim().max(1);
            accumulate(nodes, grads, *a, |ga| {
                for ((gr, yr), dst) in g.chunks_exact(w).zip(out.chunks_exact(w)).zip(ga.chunks_exact_mut(w)) {
                    let s = kernels::dot(gr, yr);
                    for ((d, gi), yi) in dst.iter_mut().zip(gr).zip(yr) {
                        *d += yi * (gi - s);
                    }
                }
            });
        }
        Op::LogSoftmax { a } => {
            let w = node.value.last_dim().max(1);
            accumulate(nodes, grads, *a, |ga| {
                for ((gr, yr), dst) in g.chunks_exact(w).zip(out.chunks_exact(w)).zip(ga.chunks_exact_mut(w)) {
                    let s: f64 = gr.iter().sum();
                    for ((d, gi), yi) in dst.iter_mut().zip(gr).zip(yr) {
                        *d += gi - libm::exp(*yi) * s;
                    }
                }
            });
        }
        Op::Unary { a, kind } => {
            let (a, kind) = (*a, *kind);
            let x = val(a);
            accumulate(nodes, grads, a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * kind.derivative(x[i], out[i]);
                }
            });
        }
        Op::LayerNorm { a, inv_std } => {
            let w = node.value.last_dim().max(1);
            let n = w as f64;
            accumulate(nodes, grads, *a, |ga| {
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &g[r * w..(r + 1) * w];
                    let yr = &out[r * w..(r + 1) * w];
                    let sg: f64 = gr.iter().sum();
                    let sgy = kernels::dot(gr, yr);
                    for j in 0..w {
                        ga[r * w + j] += inv / n * (n * gr[j] - sg - yr[j] * sgy);
                    }
                }
            });
        }
        Op::MeanPool { a, batch, n, d } => {
            let (batch, n, d) = (*batch, *n, *d);
            let inv = 1.0 / n as f64;
            accumulate(nodes, grads, *a, |ga| {
                for b in 0..batch {
                    for p in 0..n {
                        let dst = &mut ga[(b * n + p) * d..(b * n + p + 1) * d];
                        for (x, gi) in dst.iter_mut().zip(&g[b * d..(b + 1) * d]) {
                            *x += gi * inv;
                        }
                    }
                }
            });
        }
        Op::Sum { a } => {
            let g0 = g[0];
            accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g0));
        }
        Op::Mean { a } => {
            let len = nodes[a.0].value.len().max(1) as f64;
            let g0 = g[0] / len;
            accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g0));
        }
        Op::Magnitude { re, im } => {
            let (re, im) = (*re, *im);
            let (dr, di) = (val(re), val(im));
            accumulate(nodes, grads, re, |gr| {
                for i in 0..gr.len() {
                    if out[i] > 0.0 {
                        gr[i] += g[i] * dr[i] / out[i];
                    }
                }
            });
            accumulate(nodes, grads, im, |gi| {
                for i in 0..gi.len() {
                    if out[i] > 0.0 {
                        gi[i] += g[i] * di[i] / out[i];
                    }
                }
            });
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let c = nodes[logits.0].value.last_dim();
            accumulate(nodes, grads, *logits, |gl| {
                for (r, &label) in labels.iter().enumerate() {
                    for j in 0..c {
                        let target = if j == label { 1.0 } else { 0.0 };
                        gl[r * c + j] += g[r] * (probs[r * c + j] - target);
                    }
                }
            });
        }
    }
}
