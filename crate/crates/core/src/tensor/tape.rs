//! The tape: an append-only record of executed ops. `TensorId` indexes
//! into it. Shape violations are programming errors and panic with the
//! op name and both shapes.

use super::Array;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Affine { x: TensorId, mul: f64 },
    Sigmoid(TensorId),
    Tanh(TensorId),
    Exp(TensorId),
    Log(TensorId),
    Softmax(TensorId),
    LogSoftmax(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    ConcatRows(Vec<TensorId>),
    SliceRows { x: TensorId, start: usize },
    GatherRows { x: TensorId, rows: Vec<usize> },
    Transpose(TensorId),
    TriSolveLower { l: TensorId, b: TensorId },
}

struct Node {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Maps an output position to the read position of a possibly-broadcast
/// operand: dimensions of size 1 are pinned to index 0.
#[inline]
fn bcast_index(r: usize, c: usize, rows: usize, cols: usize) -> usize {
    let rr = if rows == 1 { 0 } else { r };
    let cc = if cols == 1 { 0 } else { c };
    rr * cols + cc
}

fn broadcast_dims(op: &str, a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let out_r = match (a.0, b.0) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => panic!("{op}: shapes {}x{} and {}x{} do not broadcast", a.0, a.1, b.0, b.1),
    };
    let out_c = match (a.1, b.1) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => panic!("{op}: shapes {}x{} and {}x{} do not broadcast", a.0, a.1, b.0, b.1),
    };
    (out_r, out_c)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, needs_grad: bool) -> TensorId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            data,
            rows,
            cols,
            op,
            needs_grad,
            grad: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn node(&self, id: TensorId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.node(id).data
    }

    pub fn dims(&self, id: TensorId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows, n.cols)
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.node(id).needs_grad
    }

    /// Gradient accumulated by `backward`. None when the node needs no
    /// gradient or backward has not reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.node(id).grad.as_deref()
    }

    // ── construction ──

    pub fn leaf(&mut self, value: &Array, requires_grad: bool) -> TensorId {
        let (r, c) = value.dims2();
        self.push(r, c, value.data.clone(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: &Array) -> TensorId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(1, 1, vec![v], Op::Leaf, false)
    }

    // ── ops ──

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            panic!("matmul: lhs {m}x{k} incompatible with rhs {k2}x{n}");
        }
        let data = crate::linalg::matmul(&self.node(a).data, &self.node(b).data, m, k, n);
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(m, n, data, Op::MatMul(a, b), ng)
    }

    fn elementwise2(&mut self, op_name: &str, a: TensorId, b: TensorId, f: impl Fn(f64, f64) -> f64, op: Op) -> TensorId {
        let da = self.dims(a);
        let db = self.dims(b);
        let (r, c) = broadcast_dims(op_name, da, db);
        let mut out = vec![0.0; r * c];
        {
            let na = &self.node(a).data;
            let nb = &self.node(b).data;
            for i in 0..r {
                for j in 0..c {
                    let va = na[bcast_index(i, j, da.0, da.1)];
                    let vb = nb[bcast_index(i, j, db.0, db.1)];
                    out[i * c + j] = f(va, vb);
                }
            }
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(r, c, out, op, ng)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.elementwise2("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.elementwise2("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.elementwise2("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// y = mul * x + add, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: TensorId, mul: f64, add: f64) -> TensorId {
        let (r, c) = self.dims(x);
        let data: Vec<f64> = self.node(x).data.iter().map(|v| mul * v + add).collect();
        let ng = self.node(x).needs_grad;
        self.push(r, c, data, Op::Affine { x, mul }, ng)
    }

    pub fn scale(&mut self, x: TensorId, s: f64) -> TensorId {
        self.affine(x, s, 0.0)
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        self.affine(x, -1.0, 0.0)
    }

    fn unary(&mut self, x: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let (r, c) = self.dims(x);
        let data: Vec<f64> = self.node(x).data.iter().map(|v| f(*v)).collect();
        let ng = self.node(x).needs_grad;
        self.push(r, c, data, op, ng)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::ln, Op::Log(x))
    }

    /// Column-wise softmax (axis 0), max-shifted for stability.
    pub fn softmax(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.dims(x);
        let mut out = vec![0.0; r * c];
        {
            let d = &self.node(x).data;
            for j in 0..c {
                let mx = (0..r).map(|i| d[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..r {
                    let e = (d[i * c + j] - mx).exp();
                    out[i * c + j] = e;
                    z += e;
                }
                for i in 0..r {
                    out[i * c + j] /= z;
                }
            }
        }
        let ng = self.node(x).needs_grad;
        self.push(r, c, out, Op::Softmax(x), ng)
    }

    /// Column-wise log-softmax; agrees with log(softmax(x)) to rounding.
    pub fn log_softmax(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.dims(x);
        let mut out = vec![0.0; r * c];
        {
            let d = &self.node(x).data;
            for j in 0..c {
                let mx = (0..r).map(|i| d[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..r {
                    z += (d[i * c + j] - mx).exp();
                }
                let lz = z.ln() + mx;
                for i in 0..r {
                    out[i * c + j] = d[i * c + j] - lz;
                }
            }
        }
        let ng = self.node(x).needs_grad;
        self.push(r, c, out, Op::LogSoftmax(x), ng)
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.node(x).data.iter().sum();
        let ng = self.node(x).needs_grad;
        self.push(1, 1, vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x).data.len() as f64;
        let s: f64 = self.node(x).data.iter().sum();
        let ng = self.node(x).needs_grad;
        self.push(1, 1, vec![s / n], Op::Mean(x), ng)
    }

    /// Stacks tensors vertically; all must share the column count.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat: empty input list");
        let cols = self.dims(parts[0]).1;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut ng = false;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                panic!("concat: column mismatch, {}x{} after {}x{}", r, c, rows, cols);
            }
            rows += r;
            data.extend_from_slice(&self.node(p).data);
            ng |= self.node(p).needs_grad;
        }
        self.push(rows, cols, data, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> TensorId {
        let (r, c) = self.dims(x);
        if start + len > r {
            panic!("slice: rows {start}..{} out of bounds for {r}x{c}", start + len);
        }
        let data = self.node(x).data[start * c..(start + len) * c].to_vec();
        let ng = self.node(x).needs_grad;
        self.push(len, c, data, Op::SliceRows { x, start }, ng)
    }

    /// Row gather (embedding lookup). Duplicate indices accumulate
    /// gradient additively.
    pub fn gather_rows(&mut self, x: TensorId, rows: &[usize]) -> TensorId {
        let (r, c) = self.dims(x);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                panic!("gather: row {i} out of bounds for {r}x{c}");
            }
            data.extend_from_slice(&self.node(x).data[i * c..(i + 1) * c]);
        }
        let ng = self.node(x).needs_grad;
        self.push(rows.len(), c, data, Op::GatherRows { x, rows: rows.to_vec() }, ng)
    }

    pub fn transpose(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.dims(x);
        let data = crate::linalg::transpose(&self.node(x).data, r, c);
        let ng = self.node(x).needs_grad;
        self.push(c, r, data, Op::Transpose(x), ng)
    }

    /// Y = L^{-1} B for lower-triangular L; only the lower triangle of L
    /// (diagonal included) is read, and gradient flows only there.
    pub fn tri_solve_lower(&mut self, l: TensorId, b: TensorId) -> TensorId {
        let (n, n2) = self.dims(l);
        let (rb, cb) = self.dims(b);
        if n != n2 || n != rb {
            panic!("tri_solve: factor {n}x{n2} incompatible with rhs {rb}x{cb}");
        }
        let data = crate::linalg::solve_lower_mat(&self.node(l).data, &self.node(b).data, n, cb);
        let ng = self.node(l).needs_grad || self.node(b).needs_grad;
        self.push(n, cb, data, Op::TriSolveLower { l, b }, ng)
    }

    // ── backward ──

    /// Reverse pass from a scalar loss. Gradients accumulate: calling
    /// twice without a fresh tape doubles them.
    pub fn backward(&mut self, loss: TensorId) {
        {
            let n = self.node(loss);
            assert!(
                n.rows * n.cols == 1,
                "backward: loss must be scalar, got {}x{}",
                n.rows,
                n.cols
            );
        }
        if !self.node(loss).needs_grad {
            return;
        }
        // Each pass propagates through fresh buffers; grads from earlier
        // passes are set aside and merged back at the end, so repeated
        // calls add exactly one pass worth of gradient each.
        let saved: Vec<Option<Vec<f64>>> = self.nodes.iter_mut().map(|n| n.grad.take()).collect();
        self.accum(loss, 0, 1.0);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let g = self.nodes[idx].grad.clone().unwrap();
            self.step_backward(idx, &op, &g);
        }
        for (node, old) in self.nodes.iter_mut().zip(saved) {
            if let Some(old) = old {
                match &mut node.grad {
                    Some(g) => {
                        for (d, s) in g.iter_mut().zip(&old) {
                            *d += s;
                        }
                    }
                    None => node.grad = Some(old),
                }
            }
        }
    }

    fn accum(&mut self, id: TensorId, at: usize, v: f64) {
        let n = &mut self.nodes[id.0];
        let g = n.grad.get_or_insert_with(|| vec![0.0; n.data.len()]);
        g[at] += v;
    }

    fn grad_buf(&mut self, id: TensorId) -> &mut Vec<f64> {
        let n = &mut self.nodes[id.0];
        n.grad.get_or_insert_with(|| vec![0.0; n.data.len()])
    }

    fn step_backward(&mut self, idx: usize, op: &Op, g: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(a);
                let (_, n) = self.dims(b);
                if self.nodes[a.0].needs_grad {
                    // dA = G B^T
                    let bt = crate::linalg::transpose(&self.nodes[b.0].data, k, n);
                    let da = crate::linalg::matmul(g, &bt, m, n, k);
                    for (dst, s) in self.grad_buf(a).iter_mut().zip(&da) {
                        *dst += s;
                    }
                }
                if self.nodes[b.0].needs_grad {
                    // dB = A^T G
                    let at = crate::linalg::transpose(&self.nodes[a.0].data, m, k);
                    let db = crate::linalg::matmul(&at, g, k, m, n);
                    for (dst, s) in self.grad_buf(b).iter_mut().zip(&db) {
                        *dst += s;
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let da = self.dims(a);
                let db = self.dims(b);
                let (r, c) = (self.nodes[idx].rows, self.nodes[idx].cols);
                let is_mul = matches!(op, Op::Mul(..));
                let is_sub = matches!(op, Op::Sub(..));
                let a_data = if is_mul { self.nodes[a.0].data.clone() } else { Vec::new() };
                let b_data = if is_mul { self.nodes[b.0].data.clone() } else { Vec::new() };
                if self.nodes[a.0].needs_grad {
                    let buf = self.grad_buf(a);
                    for i in 0..r {
                        for j in 0..c {
                            let go = g[i * c + j];
                            let ai = bcast_index(i, j, da.0, da.1);
                            let contrib = if is_mul {
                                go * b_data[bcast_index(i, j, db.0, db.1)]
                            } else {
                                go
                            };
                            buf[ai] += contrib;
                        }
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let buf = self.grad_buf(b);
                    for i in 0..r {
                        for j in 0..c {
                            let go = g[i * c + j];
                            let bi = bcast_index(i, j, db.0, db.1);
                            let contrib = if is_mul {
                                go * a_data[bcast_index(i, j, da.0, da.1)]
                            } else if is_sub {
                                -go
                            } else {
                                go
                            };
                            buf[bi] += contrib;
                        }
                    }
                }
            }
            Op::Affine { x, mul } => {
                if self.nodes[x.0].needs_grad {
                    let buf = self.grad_buf(x);
                    for (dst, go) in buf.iter_mut().zip(g) {
                        *dst += mul * go;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.nodes[x.0].needs_grad {
                    let y = self.nodes[idx].data.clone();
                    let buf = self.grad_buf(x);
                    for ((dst, go), yo) in buf.iter_mut().zip(g).zip(&y) {
                        *dst += go * yo * (1.0 - yo);
                    }
                }
            }
            Op::Tanh(x) => {
                if self.nodes[x.0].needs_grad {
                    let y = self.nodes[idx].data.clone();
                    let buf = self.grad_buf(x);
                    for ((dst, go), yo) in buf.iter_mut().zip(g).zip(&y) {
                        *dst += go * (1.0 - yo * yo);
                    }
                }
            }
            Op::Exp(x) => {
                if self.nodes[x.0].needs_grad {
                    let y = self.nodes[idx].data.clone();
                    let buf = self.grad_buf(x);
                    for ((dst, go), yo) in buf.iter_mut().zip(g).zip(&y) {
                        *dst += go * yo;
                    }
                }
            }
            Op::Log(x) => {
                if self.nodes[x.0].needs_grad {
                    let xv = self.nodes[x.0].data.clone();
                    let buf = self.grad_buf(x);
                    for ((dst, go), xo) in buf.iter_mut().zip(g).zip(&xv) {
                        *dst += go / xo;
                    }
                }
            }
            Op::Softmax(x) => {
                if self.nodes[x.0].needs_grad {
                    let y = self.nodes[idx].data.clone();
                    let (r, c) = (self.nodes[idx].rows, self.nodes[idx].cols);
                    let buf = self.grad_buf(x);
                    for j in 0..c {
                        let mut dot = 0.0;
                        for i in 0..r {
                            dot += g[i * c + j] * y[i * c + j];
                        }
                        for i in 0..r {
                            buf[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if self.nodes[x.0].needs_grad {
                    let y = self.nodes[idx].data.clone();
                    let (r, c) = (self.nodes[idx].rows, self.nodes[idx].cols);
                    let buf = self.grad_buf(x);
                    for j in 0..c {
                        let mut gsum = 0.0;
                        for i in 0..r {
                            gsum += g[i * c + j];
                        }
                        for i in 0..r {
                            buf[i * c + j] += g[i * c + j] - y[i * c + j].exp() * gsum;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if self.nodes[x.0].needs_grad {
                    let go = g[0];
                    for dst in self.grad_buf(x).iter_mut() {
                        *dst += go;
                    }
                }
            }
            Op::Mean(x) => {
                if self.nodes[x.0].needs_grad {
                    let n = self.nodes[x.0].data.len() as f64;
                    let go = g[0] / n;
                    for dst in self.grad_buf(x).iter_mut() {
                        *dst += go;
                    }
                }
            }
            Op::ConcatRows(ref parts) => {
                let c = self.nodes[idx].cols;
                let mut row = 0;
                for &p in parts {
                    let (pr, _) = self.dims(p);
                    if self.nodes[p.0].needs_grad {
                        let src = &g[row * c..(row + pr) * c];
                        let src = src.to_vec();
                        for (dst, s) in self.grad_buf(p).iter_mut().zip(&src) {
                            *dst += s;
                        }
                    }
                    row += pr;
                }
            }
            Op::SliceRows { x, start } => {
                if self.nodes[x.0].needs_grad {
                    let c = self.nodes[idx].cols;
                    let len = self.nodes[idx].rows;
                    let buf = self.grad_buf(x);
                    for (k, go) in g.iter().enumerate() {
                        buf[start * c + k] += go;
                    }
                    let _ = len;
                }
            }
            Op::GatherRows { x, ref rows } => {
                if self.nodes[x.0].needs_grad {
                    let c = self.nodes[idx].cols;
                    let rows = rows.clone();
                    let buf = self.grad_buf(x);
                    for (k, &src_row) in rows.iter().enumerate() {
                        for j in 0..c {
                            buf[src_row * c + j] += g[k * c + j];
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if self.nodes[x.0].needs_grad {
                    let (r, c) = (self.nodes[idx].rows, self.nodes[idx].cols);
                    let gt = crate::linalg::transpose(g, r, c);
                    for (dst, s) in self.grad_buf(x).iter_mut().zip(&gt) {
                        *dst += s;
                    }
                }
            }
            Op::TriSolveLower { l, b } => {
                // Y = L^{-1} B. dB = L^{-T} G; dL = -dB Y^T on the lower
                // triangle (upper entries are never read by the solve).
                let (n, _) = self.dims(l);
                let cb = self.nodes[idx].cols;
                let y = self.nodes[idx].data.clone();
                let l_data = self.nodes[l.0].data.clone();
                let mut db = vec![0.0; n * cb];
                for c in 0..cb {
                    let col: Vec<f64> = (0..n).map(|r| g[r * cb + c]).collect();
                    let sol = crate::linalg::solve_lower_transpose(&l_data, &col, n);
                    for r in 0..n {
                        db[r * cb + c] = sol[r];
                    }
                }
                if self.nodes[b.0].needs_grad {
                    for (dst, s) in self.grad_buf(b).iter_mut().zip(&db) {
                        *dst += s;
                    }
                }
                if self.nodes[l.0].needs_grad {
                    let yt = crate::linalg::transpose(&y, n, cb);
                    let dl = crate::linalg::matmul(&db, &yt, n, cb, n);
                    let buf = self.grad_buf(l);
                    for i in 0..n {
                        for j in 0..=i {
                            buf[i * n + j] -= dl[i * n + j];
                        }
                    }
                }
            }
        }
    }
}
