//! Minimal 2-D tensor type and a tape-based reverse-mode differentiation
//! engine. Everything is double precision; shapes are (rows, cols).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn scalar(x: f64) -> Self {
        Self::from_vec(1, 1, vec![x])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `A @ B`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.cols, b.rows);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b.data[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::from_vec(m, n, out)
}

/// `A @ B^T`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.cols, b.cols);
    let (m, k, p) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for q in 0..p {
            let brow = &b.data[q * k..(q + 1) * k];
            let mut dot = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                dot += x * y;
            }
            out[i * p + q] = dot;
        }
    }
    Tensor::from_vec(m, p, out)
}

/// `A^T @ B`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.rows, b.rows);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let brow = &b.data[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::from_vec(k, n, out)
}

const GELU_C: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * k * (1.0 + 3.0 * GELU_C * x * x)
}

/// Node reference on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        rstd: Vec<f64>,
        xhat: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Row(Var, usize),
    Gather {
        table: Var,
        ids: Vec<u32>,
    },
    SliceRows {
        x: Var,
        len: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation tape: values are recorded in construction order and the
/// backward pass walks them in reverse, accumulating gradients.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(128) }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        self.push(value, Op::Matmul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(va.rows, va.cols, data);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let value = Tensor::from_vec(va.rows, va.cols, data);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(va.rows, va.cols, data);
        self.push(value, Op::Mul(a, b))
    }

    /// Broadcast-add a `[1, n]` row vector to every row of `[m, n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        debug_assert_eq!(vr.rows, 1);
        debug_assert_eq!(va.cols, vr.cols);
        let mut data = va.data.clone();
        for r in 0..va.rows {
            for (x, y) in data[r * va.cols..(r + 1) * va.cols].iter_mut().zip(&vr.data) {
                *x += y;
            }
        }
        let value = Tensor::from_vec(va.rows, va.cols, data);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let value = Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|x| x * c).collect());
        self.push(value, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = Tensor::from_vec(
            va.rows,
            va.cols,
            va.data.iter().map(|&x| gelu_scalar(x)).collect(),
        );
        self.push(value, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (m, n) = (va.rows, va.cols);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = va.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in data[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in &mut data[i * n..(i + 1) * n] {
                *o /= sum;
            }
        }
        let value = Tensor::from_vec(m, n, data);
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with learned gain and bias (both `[1, n]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let vx = self.value(x);
        let (m, n) = (vx.rows, vx.cols);
        let vg = self.value(gamma).data.clone();
        let vb = self.value(beta).data.clone();
        let mut rstd = vec![0.0; m];
        let mut xhat = vec![0.0; m * n];
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = vx.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + EPS).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                data[i * n + j] = h * vg[j] + vb[j];
            }
        }
        let value = Tensor::from_vec(m, n, data);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                rstd,
                xhat,
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let vx = self.value(x);
        let (m, n) = (vx.rows, vx.cols);
        debug_assert!(start + width <= n);
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&vx.data[i * n + start..i * n + start + width]);
        }
        let value = Tensor::from_vec(m, width, data);
        self.push(value, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                let vp = self.value(p);
                data.extend_from_slice(vp.row(i));
            }
        }
        let value = Tensor::from_vec(rows, total, data);
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let (m, n) = (vx.rows, vx.cols);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = vx.data[i * n + j];
            }
        }
        let value = Tensor::from_vec(n, m, data);
        self.push(value, Op::Transpose(x))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Var {
        let vx = self.value(x);
        let value = Tensor::from_vec(1, vx.cols, vx.row(i).to_vec());
        self.push(value, Op::Row(x, i))
    }

    /// Look up `ids` as rows of `table`.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Var {
        let vt = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * vt.cols);
        for &id in ids {
            data.extend_from_slice(vt.row(id as usize));
        }
        let value = Tensor::from_vec(ids.len(), vt.cols, data);
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn slice_rows(&mut self, x: Var, len: usize) -> Var {
        let vx = self.value(x);
        let value = Tensor::from_vec(len, vx.cols, vx.data[..len * vx.cols].to_vec());
        self.push(value, Op::SliceRows { x, len })
    }

    /// Inverted dropout with a caller-supplied keep mask already scaled by
    /// `1/(1-p)`; entries are either `0` or `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let vx = self.value(x);
        debug_assert_eq!(mask.len(), vx.data.len());
        let data = vx.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::from_vec(vx.rows, vx.cols, data);
        self.push(value, Op::Dropout { x, mask })
    }

    /// Gradients of scalar node `loss` with respect to every tape node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::Shape("backward expects a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.accumulate(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, idx: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut add_to = |v: Var, delta: Tensor| {
            match &mut grads[v.0] {
                Some(g) => g.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                add_to(*a, matmul_nt(gy, vb));
                add_to(*b, matmul_tn(va, gy));
            }
            Op::Add(a, b) => {
                add_to(*a, gy.clone());
                add_to(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                add_to(*a, gy.clone());
                let neg = Tensor::from_vec(gy.rows, gy.cols, gy.data.iter().map(|x| -x).collect());
                add_to(*b, neg);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let ga = Tensor::from_vec(
                    gy.rows,
                    gy.cols,
                    gy.data.iter().zip(&vb.data).map(|(g, y)| g * y).collect(),
                );
                let gb = Tensor::from_vec(
                    gy.rows,
                    gy.cols,
                    gy.data.iter().zip(&va.data).map(|(g, x)| g * x).collect(),
                );
                add_to(*a, ga);
                add_to(*b, gb);
            }
            Op::AddRow(a, row) => {
                add_to(*a, gy.clone());
                let n = gy.cols;
                let mut sum = vec![0.0; n];
                for i in 0..gy.rows {
                    for (s, g) in sum.iter_mut().zip(gy.row(i)) {
                        *s += g;
                    }
                }
                add_to(*row, Tensor::from_vec(1, n, sum));
            }
            Op::Scale(a, c) => {
                let ga = Tensor::from_vec(
                    gy.rows,
                    gy.cols,
                    gy.data.iter().map(|g| g * c).collect(),
                );
                add_to(*a, ga);
            }
            Op::Gelu(a) => {
                let va = &self.nodes[a.0].value;
                let ga = Tensor::from_vec(
                    gy.rows,
                    gy.cols,
                    gy.data
                        .iter()
                        .zip(&va.data)
                        .map(|(g, &x)| g * gelu_grad_scalar(x))
                        .collect(),
                );
                add_to(*a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (m, n) = (y.rows, y.cols);
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row(i);
                    let gr = gy.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        ga[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_to(*a, Tensor::from_vec(m, n, ga));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                rstd,
                xhat,
            } => {
                let vg = &self.nodes[gamma.0].value;
                let (m, n) = (gy.rows, gy.cols);
                let mut gx = vec![0.0; m * n];
                let mut ggamma = vec![0.0; n];
                let mut gbeta = vec![0.0; n];
                for i in 0..m {
                    let gr = gy.row(i);
                    let hr = &xhat[i * n..(i + 1) * n];
                    let mut mean_h = 0.0;
                    let mut mean_hx = 0.0;
                    for j in 0..n {
                        let h = gr[j] * vg.data[j];
                        mean_h += h;
                        mean_hx += h * hr[j];
                        ggamma[j] += gr[j] * hr[j];
                        gbeta[j] += gr[j];
                    }
                    mean_h /= n as f64;
                    mean_hx /= n as f64;
                    for j in 0..n {
                        let h = gr[j] * vg.data[j];
                        gx[i * n + j] = rstd[i] * (h - mean_h - hr[j] * mean_hx);
                    }
                }
                add_to(*x, Tensor::from_vec(m, n, gx));
                add_to(*gamma, Tensor::from_vec(1, n, ggamma));
                add_to(*beta, Tensor::from_vec(1, n, gbeta));
            }
            Op::SliceCols { x, start } => {
                let vx = &self.nodes[x.0].value;
                let mut gx = Tensor::zeros(vx.rows, vx.cols);
                for i in 0..gy.rows {
                    for j in 0..gy.cols {
                        gx.data[i * vx.cols + start + j] = gy.data[i * gy.cols + j];
                    }
                }
                add_to(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0usize;
                for &p in parts {
                    let vp = &self.nodes[p.0].value;
                    let mut gp = Tensor::zeros(vp.rows, vp.cols);
                    for i in 0..gy.rows {
                        for j in 0..vp.cols {
                            gp.data[i * vp.cols + j] = gy.data[i * gy.cols + offset + j];
                        }
                    }
                    add_to(p, gp);
                    offset += vp.cols;
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (gy.rows, gy.cols);
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[j * m + i] = gy.data[i * n + j];
                    }
                }
                add_to(*x, Tensor::from_vec(n, m, gx));
            }
            Op::Row(x, i) => {
                let vx = &self.nodes[x.0].value;
                let mut gx = Tensor::zeros(vx.rows, vx.cols);
                gx.data[i * vx.cols..(i + 1) * vx.cols].copy_from_slice(&gy.data);
                add_to(*x, gx);
            }
            Op::Gather { table, ids } => {
                let vt = &self.nodes[table.0].value;
                let mut gt = Tensor::zeros(vt.rows, vt.cols);
                for (k, &id) in ids.iter().enumerate() {
                    let dst = id as usize * vt.cols;
                    for j in 0..vt.cols {
                        gt.data[dst + j] += gy.data[k * vt.cols + j];
                    }
                }
                add_to(*table, gt);
            }
            Op::SliceRows { x, len } => {
                let vx = &self.nodes[x.0].value;
                let mut gx = Tensor::zeros(vx.rows, vx.cols);
                gx.data[..len * vx.cols].copy_from_slice(&gy.data);
                add_to(*x, gx);
            }
            Op::Dropout { x, mask } => {
                let ga = Tensor::from_vec(
                    gy.rows,
                    gy.cols,
                    gy.data.iter().zip(mask).map(|(g, m)| g * m).collect(),
                );
                add_to(*x, ga);
            }
        }
    }
}

/// Gradient store produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}
