use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation tags.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Log,
    Clamp {
        lo: f64,
        hi: f64,
    },
    Abs,
    Square,
    Sqrt,
    /// `scale * x + shift`
    Affine {
        scale: f64,
        shift: f64,
    },
}

impl Elementwise {
    fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Sub | Elementwise::Mul)
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Elementwise::Sigmoid => sigmoid(x),
            Elementwise::Tanh => x.tanh(),
            Elementwise::Relu => x.max(0.0),
            Elementwise::Log => x.ln(),
            Elementwise::Clamp { lo, hi } => x.clamp(lo, hi),
            Elementwise::Abs => x.abs(),
            Elementwise::Square => x * x,
            Elementwise::Sqrt => x.sqrt(),
            Elementwise::Affine { scale, shift } => scale * x + shift,
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => unreachable!(),
        }
    }

    /// d(apply)/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Elementwise::Sigmoid => y * (1.0 - y),
            Elementwise::Tanh => 1.0 - y * y,
            Elementwise::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Elementwise::Log => 1.0 / x,
            Elementwise::Clamp { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0
                } else {
                    0.0
                }
            }
            Elementwise::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Elementwise::Square => 2.0 * x,
            Elementwise::Sqrt => 0.5 / y,
            Elementwise::Affine { scale, .. } => scale,
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => unreachable!(),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    images: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    fn out_h(&self) -> usize {
        self.height - self.kh + 1
    }
    fn out_w(&self) -> usize {
        self.width - self.kw + 1
    }
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// cols[(c, i, j), (oy, ox)] = image[c, oy + i, ox + j]
    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let (oh, ow, p) = (self.out_h(), self.out_w(), self.positions());
        for c in 0..self.channels {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..oh {
                        let src = (c * self.height + oy + i) * self.width + j;
                        cols[row + oy * ow..row + oy * ow + ow].copy_from_slice(&image[src..src + ow]);
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], image: &mut [f64]) {
        let (oh, ow, p) = (self.out_h(), self.out_w(), self.positions());
        for c in 0..self.channels {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..oh {
                        let dst = (c * self.height + oy + i) * self.width + j;
                        for ox in 0..ow {
                            image[dst + ox] += cols[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(Elementwise, usize),
    /// Second operand may be broadcast (its length divides the first's).
    Binary(Elementwise, usize, usize),
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
        rows: usize,
        inp: usize,
        out: usize,
    },
    Conv2d {
        x: usize,
        k: usize,
        b: usize,
        geom: ConvGeom,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Sum(usize),
    SumRows {
        x: usize,
        cols: usize,
    },
    Reshape(usize),
    ConcatCols {
        parts: Vec<(usize, usize)>,
        rows: usize,
    },
    NormalizeRows {
        x: usize,
        cols: usize,
        norms: Vec<f64>,
    },
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], j: usize) -> &'a mut Vec<f64> {
    grads[j].get_or_insert_with(|| vec![0.0; nodes[j].value.len()])
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a differentiable computation.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// a reverse sweep is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a copy of `t` as a leaf; trainable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// Records `t` as a leaf, taking ownership of its storage.
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t.shape, t.data, Op::Leaf, rg)
    }

    /// Non-trainable leaf from raw parts.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.input(t))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Gradient of the last [`Tape::backward`] root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- elementwise -------------------------------------------------------

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (op.is_binary(), b) {
            (true, Some(b)) => self.binary(op, a, b),
            (false, None) => Ok(self.unary(op, a)),
            (true, None) => Err(Error::invalid("elementwise", format!("{op:?} needs two operands"))),
            (false, Some(_)) => Err(Error::invalid("elementwise", format!("{op:?} takes one operand"))),
        }
    }

    fn unary(&mut self, op: Elementwise, a: Var) -> Var {
        let n = self.node(a);
        let value = n.value.iter().map(|&x| op.apply(x)).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push(shape, value, Op::Unary(op, a.0), rg)
    }

    fn binary(&mut self, op: Elementwise, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        // Put the full-size operand first; only Sub is order-sensitive.
        if nb.value.len() > na.value.len() {
            return match op {
                Elementwise::Sub => {
                    let neg = self.affine(b, -1.0, 0.0);
                    self.binary(Elementwise::Add, neg, a)
                }
                _ => self.binary(op, b, a),
            };
        }
        let broadcast_ok = na.shape == nb.shape
            || nb.value.len() == 1
            || (nb.shape.len() == 1 && na.shape.last() == Some(&nb.value.len()));
        if !broadcast_ok {
            return Err(Error::shape("elementwise", &na.shape, &nb.shape));
        }
        let lb = nb.value.len();
        let value = na
            .value
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = nb.value[i % lb];
                match op {
                    Elementwise::Add => x + y,
                    Elementwise::Sub => x - y,
                    _ => x * y,
                }
            })
            .collect();
        let shape = na.shape.clone();
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(shape, value, Op::Binary(op, a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Relu, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Log, a)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(Elementwise::Clamp { lo, hi }, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Abs, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Square, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Sqrt, a)
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(Elementwise::Affine { scale, shift }, a)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
            return Err(Error::shape("matmul", &na.shape, &nb.shape));
        }
        let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
        let mut value = vec![0.0; m * n];
        gemm(m, k, n, &na.value, false, &nb.value, false, 0.0, &mut value);
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(
            vec![m, n],
            value,
            Op::Matmul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    /// `x · wᵀ + b` for `x` of shape `[in]` or `[rows, in]` and `w` of shape
    /// `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (nx, nw) = (self.node(x), self.node(w));
        if nw.shape.len() != 2 || nx.shape.is_empty() || nx.shape.len() > 2 {
            return Err(Error::shape("linear", &nx.shape, &nw.shape));
        }
        let (out, inp) = (nw.shape[0], nw.shape[1]);
        let rows = if nx.shape.len() == 2 { nx.shape[0] } else { 1 };
        if *nx.shape.last().unwrap() != inp {
            return Err(Error::shape("linear", &nx.shape, &nw.shape));
        }
        let mut value = vec![0.0; rows * out];
        gemm(rows, inp, out, &nx.value, false, &nw.value, true, 0.0, &mut value);
        let mut rg = nx.requires_grad || nw.requires_grad;
        if let Some(b) = b {
            let nb = self.node(b);
            if nb.value.len() != out {
                return Err(Error::shape("linear bias", &nb.shape, &[out]));
            }
            for row in value.chunks_mut(out) {
                row.iter_mut().zip(&nb.value).for_each(|(v, bias)| *v += bias);
            }
            rg |= nb.requires_grad;
        }
        let shape = if nx.shape.len() == 2 {
            vec![rows, out]
        } else {
            vec![out]
        };
        let op = Op::Linear {
            x: x.0,
            w: w.0,
            b: b.map(|b| b.0),
            rows,
            inp,
            out,
        };
        Ok(self.push(shape, value, op, rg))
    }

    /// Valid (unpadded) stride-1 cross-correlation.
    ///
    /// `image` is `[C, H, W]` or `[N, C, H, W]`; `kernels` is `[F, C, kh, kw]`.
    pub fn conv2d(&mut self, image: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (ni, nk, nb) = (self.node(image), self.node(kernels), self.node(bias));
        let (images, dims) = match ni.shape.len() {
            3 => (1, &ni.shape[..]),
            4 => (ni.shape[0], &ni.shape[1..]),
            _ => return Err(Error::shape("conv2d", &ni.shape, &nk.shape)),
        };
        if nk.shape.len() != 4 || nk.shape[1] != dims[0] {
            return Err(Error::shape("conv2d", &ni.shape, &nk.shape));
        }
        if nb.value.len() != nk.shape[0] {
            return Err(Error::shape("conv2d bias", &nb.shape, &nk.shape[..1]));
        }
        let geom = ConvGeom {
            images,
            channels: dims[0],
            height: dims[1],
            width: dims[2],
            filters: nk.shape[0],
            kh: nk.shape[2],
            kw: nk.shape[3],
        };
        if geom.kh > geom.height || geom.kw > geom.width {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "kernel {}x{} larger than image {}x{}",
                    geom.kh, geom.kw, geom.height, geom.width
                ),
            ));
        }
        let (p, patch, f) = (geom.positions(), geom.patch(), geom.filters);
        let in_len = geom.channels * geom.height * geom.width;
        let mut value = vec![0.0; images * f * p];
        let mut cols = vec![0.0; patch * p];
        for img in 0..images {
            geom.im2col(&ni.value[img * in_len..(img + 1) * in_len], &mut cols);
            let out = &mut value[img * f * p..(img + 1) * f * p];
            for (fi, row) in out.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = nb.value[fi]);
            }
            gemm(f, patch, p, &nk.value, false, &cols, false, 1.0, out);
        }
        let mut shape = vec![f, geom.out_h(), geom.out_w()];
        if ni.shape.len() == 4 {
            shape.insert(0, images);
        }
        let rg = ni.requires_grad || nk.requires_grad || nb.requires_grad;
        let op = Op::Conv2d {
            x: image.0,
            k: kernels.0,
            b: bias.0,
            geom,
        };
        Ok(self.push(shape, value, op, rg))
    }

    /// 2×2 max pooling with stride 2 over `[C, H, W]` or `[N, C, H, W]`.
    /// Ties resolve to the first cell in row-major order.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let nx = self.node(x);
        let r = nx.shape.len();
        if !(3..=4).contains(&r) {
            return Err(Error::invalid(
                "maxpool2d",
                format!("expected rank 3 or 4, got {:?}", nx.shape),
            ));
        }
        let (h, w) = (nx.shape[r - 2], nx.shape[r - 1]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid("maxpool2d", format!("odd extent {h}x{w}")));
        }
        let planes: usize = nx.shape[..r - 2].iter().product();
        let (oh, ow) = (h / 2, w / 2);
        let mut value = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for pl in 0..planes {
            let base = pl * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if nx.value[idx] > nx.value[best] {
                            best = idx;
                        }
                    }
                    value.push(nx.value[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = nx.shape.clone();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let rg = nx.requires_grad;
        Ok(self.push(shape, value, Op::MaxPool { x: x.0, argmax }, rg))
    }

    // ---- reductions and reshaping -----------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let nx = self.node(x);
        let s = nx.value.iter().sum();
        let rg = nx.requires_grad;
        self.push(Vec::new(), vec![s], Op::Sum(x.0), rg)
    }

    /// Row sums of a `[rows, cols]` matrix, giving `[rows]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let nx = self.node(x);
        if nx.shape.len() != 2 {
            return Err(Error::invalid(
                "sum_rows",
                format!("expected a matrix, got {:?}", nx.shape),
            ));
        }
        let cols = nx.shape[1];
        let value: Vec<f64> = nx.value.chunks(cols).map(|r| r.iter().sum()).collect();
        let rg = nx.requires_grad;
        Ok(self.push(vec![nx.shape[0]], value, Op::SumRows { x: x.0, cols }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let nx = self.node(x);
        if shape.iter().product::<usize>() != nx.value.len() {
            return Err(Error::shape("reshape", &nx.shape, shape));
        }
        let (value, rg) = (nx.value.clone(), nx.requires_grad);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x.0), rg))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("concat_cols", "no inputs"));
        };
        let rows = self.node(*first).shape[0];
        let mut meta = Vec::with_capacity(parts.len());
        let mut rg = false;
        for &p in parts {
            let np = self.node(p);
            if np.shape.len() != 2 || np.shape[0] != rows {
                return Err(Error::shape("concat_cols", &self.node(*first).shape, &np.shape));
            }
            meta.push((p.0, np.shape[1]));
            rg |= np.requires_grad;
        }
        let total: usize = meta.iter().map(|m| m.1).sum();
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(idx, c) in &meta {
                value.extend_from_slice(&self.nodes[idx].value[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(vec![rows, total], value, Op::ConcatCols { parts: meta, rows }, rg))
    }

    /// Scales each row (or the single vector) to unit L2 norm; zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let nx = self.node(x);
        let cols = *nx.shape.last().unwrap_or(&1);
        let mut value = nx.value.clone();
        let mut norms = Vec::with_capacity(value.len() / cols.max(1));
        for row in value.chunks_mut(cols) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
            norms.push(n);
        }
        let (shape, rg) = (nx.shape.clone(), nx.requires_grad);
        self.push(shape, value, Op::NormalizeRows { x: x.0, cols, norms }, rg)
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Computes d`root`/d`leaf` for every trainable leaf, replacing any
    /// gradients from a previous call.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rn = self.node(root);
        if rn.value.len() != 1 {
            return Err(Error::NonScalarRoot(rn.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let wants = |j: usize| nodes[j].requires_grad;
        macro_rules! acc {
            ($j:expr) => {
                slot(grads, nodes, $j)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Unary(op, a) => {
                if wants(*a) {
                    let x = &nodes[*a].value;
                    let ga = acc!(*a);
                    for (k, gk) in g.iter().enumerate() {
                        ga[k] += gk * op.derivative(x[k], node.value[k]);
                    }
                }
            }
            Op::Binary(op, a, b) => {
                let (xa, xb) = (&nodes[*a].value, &nodes[*b].value);
                let lb = xb.len();
                if wants(*a) {
                    let ga = acc!(*a);
                    for (k, gk) in g.iter().enumerate() {
                        ga[k] += match op {
                            Elementwise::Mul => gk * xb[k % lb],
                            _ => *gk,
                        };
                    }
                }
                if wants(*b) {
                    let gb = acc!(*b);
                    for (k, gk) in g.iter().enumerate() {
                        gb[k % lb] += match op {
                            Elementwise::Mul => gk * xa[k],
                            Elementwise::Sub => -gk,
                            _ => *gk,
                        };
                    }
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                if wants(*a) {
                    let ga = acc!(*a);
                    gemm(*m, *n, *k, g, false, &nodes[*b].value, true, 1.0, ga);
                }
                if wants(*b) {
                    let gb = acc!(*b);
                    gemm(*k, *m, *n, &nodes[*a].value, true, g, false, 1.0, gb);
                }
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                inp,
                out,
            } => {
                if wants(*x) {
                    let gx = acc!(*x);
                    gemm(*rows, *out, *inp, g, false, &nodes[*w].value, false, 1.0, gx);
                }
                if wants(*w) {
                    let gw = acc!(*w);
                    gemm(*out, *rows, *inp, g, true, &nodes[*x].value, false, 1.0, gw);
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let gb = acc!(*b);
                        for row in g.chunks(*out) {
                            gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                        }
                    }
                }
            }
            Op::Conv2d { x, k, b, geom } => {
                let (p, patch, f) = (geom.positions(), geom.patch(), geom.filters);
                let in_len = geom.channels * geom.height * geom.width;
                let mut cols = vec![0.0; patch * p];
                let mut dcols = vec![0.0; patch * p];
                for img in 0..geom.images {
                    let gout = &g[img * f * p..(img + 1) * f * p];
                    if wants(*b) {
                        let gb = acc!(*b);
                        for (fi, row) in gout.chunks(p).enumerate() {
                            gb[fi] += row.iter().sum::<f64>();
                        }
                    }
                    if wants(*k) {
                        let image = &nodes[*x].value[img * in_len..(img + 1) * in_len];
                        geom.im2col(image, &mut cols);
                        let gk = acc!(*k);
                        gemm(f, p, patch, gout, false, &cols, true, 1.0, gk);
                    }
                    if wants(*x) {
                        gemm(patch, f, p, &nodes[*k].value, true, gout, false, 0.0, &mut dcols);
                        let gx = acc!(*x);
                        geom.col2im_add(&dcols, &mut gx[img * in_len..(img + 1) * in_len]);
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if wants(*x) {
                    let gx = acc!(*x);
                    for (gk, &src) in g.iter().zip(argmax) {
                        gx[src] += gk;
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let gx = acc!(*x);
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::SumRows { x, cols } => {
                if wants(*x) {
                    let gx = acc!(*x);
                    for (row, gr) in gx.chunks_mut(*cols).zip(g) {
                        row.iter_mut().for_each(|v| *v += gr);
                    }
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    let gx = acc!(*x);
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(idx, c) in parts {
                    if wants(idx) {
                        let gp = acc!(idx);
                        for r in 0..*rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            gp[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += c;
                }
            }
            Op::NormalizeRows { x, cols, norms } => {
                if wants(*x) {
                    let gx = acc!(*x);
                    let y = &node.value;
                    for (r, &n) in norms.iter().enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let span = r * cols..(r + 1) * cols;
                        let dot: f64 = y[span.clone()].iter().zip(&g[span.clone()]).map(|(a, b)| a * b).sum();
                        for k in span {
                            gx[k] += (g[k] - y[k] * dot) / n;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_fixed_points() {
        let mut tape = Tape::new();
        let z = tape.leaf(&Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(z);
        let th = tape.tanh(z);
        assert_eq!(tape.value(s), &[0.5]);
        assert_eq!(tape.value(th), &[0.0]);
        let x = tape.leaf(&Tensor::vector(vec![-1.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r), &[0.0, 2.0]);
    }

    #[test]
    fn elementwise_tag_dispatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let b = tape.leaf(&Tensor::vector(vec![3.0, 5.0]));
        let c = tape.elementwise(Elementwise::Sub, a, Some(b)).unwrap();
        assert_eq!(tape.value(c), &[-2.0, -3.0]);
        assert!(tape.elementwise(Elementwise::Mul, a, None).is_err());
        assert!(tape.elementwise(Elementwise::Log, a, Some(b)).is_err());
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 3], &[0.0; 6]));
        let b = tape.leaf(&t(&[2, 2], &[0.0; 4]));
        match tape.add(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn broadcast_row_and_scalar() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).with_grad());
        let row = tape.leaf(&Tensor::vector(vec![10.0, 20.0]).with_grad());
        let s = tape.leaf(&Tensor::scalar(2.0).with_grad());
        let y = tape.add(a, row).unwrap();
        let y = tape.mul(s, y).unwrap();
        assert_eq!(tape.value(y), &[22.0, 44.0, 26.0, 48.0]);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(row).unwrap(), &[4.0, 4.0]);
        assert_eq!(tape.grad(s).unwrap(), &[70.0]);
        // scalar minus matrix keeps operand order
        let c = tape.leaf(&Tensor::scalar(1.0));
        let d = tape.sub(c, a).unwrap();
        assert_eq!(tape.value(d), &[0.0, -1.0, -2.0, -3.0]);
    }

    #[test]
    fn matmul_hand_values() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(&t(&[2, 1], &[1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[3.0, 7.0]);
        assert_eq!(tape.shape(c), &[2, 1]);
        let bad = tape.leaf(&t(&[3, 1], &[1.0; 3]));
        assert!(matches!(tape.matmul(a, bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn conv_and_pool_hand_values() {
        let mut tape = Tape::new();
        let img = tape.leaf(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.leaf(&t(&[1, 1, 2, 2], &[1.0; 4]));
        let b = tape.leaf(&Tensor::vector(vec![0.0]));
        let y = tape.conv2d(img, k, b).unwrap();
        assert_eq!(tape.value(y), &[10.0]);
        assert_eq!(tape.shape(y), &[1, 1, 1]);

        let ones = tape.leaf(&t(&[1, 3, 3], &[1.0; 9]));
        let k3 = tape.leaf(&t(&[1, 1, 3, 3], &[1.0; 9]));
        let y = tape.conv2d(ones, k3, b).unwrap();
        assert_eq!(tape.value(y), &[9.0]);

        let small = tape.leaf(&t(&[1, 2, 2], &[0.0; 4]));
        assert!(tape.conv2d(small, k3, b).is_err());

        let p = tape.maxpool2d(img).unwrap();
        assert_eq!(tape.value(p), &[4.0]);
        let c = tape.leaf(&t(&[1, 4, 4], &[0.3; 16]));
        let p = tape.maxpool2d(c).unwrap();
        assert_eq!(tape.value(p), &[0.3; 4]);
        assert_eq!(tape.shape(p), &[1, 2, 2]);
        let odd = tape.leaf(&t(&[1, 3, 2], &[0.0; 6]));
        assert!(tape.maxpool2d(odd).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first_cell() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 2, 2], &[1.0, 1.0, 1.0, 1.0]).with_grad());
        let p = tape.maxpool2d(x).unwrap();
        let l = tape.sum(p);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_power_rule_and_accumulation() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0).with_grad());
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.0).with_grad());
        let y = tape.add(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]).with_grad());
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(&t(&[1, 2], &[1.0, 2.0]));
        let x = tape.leaf(&Tensor::vector(vec![3.0, 4.0]).with_grad());
        let y = tape.linear(x, w, None).unwrap();
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert!(tape.grad(w).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn normalize_rows_handles_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 2], &[3.0, 4.0, 0.0, 0.0]));
        let y = tape.normalize_rows(x);
        assert_eq!(tape.value(y), &[0.6, 0.8, 0.0, 0.0]);
    }
}
