//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse and accumulates vector-Jacobian products.
//! Parameters enter the tape by reference, so recording a forward pass never
//! copies weight matrices.

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::tensor::{gemm, Tensor};
use super::NnError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Gradient of a scalar loss with respect to each named parameter.
pub type Gradients = BTreeMap<String, Tensor>;

enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    CRelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    RowSum(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    StopGradient,
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
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

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Borrowed constant input (e.g. an initialization snapshot).
    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Named trainable leaf.
    pub fn param(&mut self, name: &str, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Param(name.to_string()), true)
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize), NnError> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(NnError::Shape(format!("{what}: expected matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NnError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NnError::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// `[m,k] @ [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(NnError::Shape(format!(
                "matmul: [{m},{k}] @ [{k2},{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of an `[m,n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(row).len() != n {
            return Err(NnError::Shape(format!(
                "add_row: row of {} for width {n}",
                self.value(row).len()
            )));
        }
        let mut out = self.value(a).data().to_vec();
        let r = self.value(row).data();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += b;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::AddRow(a, row), &[a, row]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "add")?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push_owned(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "sub")?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push_owned(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "mul")?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push_owned(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "min")?;
        let t = self.value(a).zip_map(self.value(b), f64::min);
        Ok(self.push_owned(t, Op::Min(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push_owned(t, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push_owned(t, Op::Relu(a), &[a])
    }

    /// `concat(relu(x), relu(-x))` along the feature axis: `[m,n] -> [m,2n]`.
    pub fn crelu(&mut self, a: Var) -> Result<Var, NnError> {
        let (m, n) = self.dims2(a, "crelu")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * 2 * n];
        for i in 0..m {
            for j in 0..n {
                let v = x[i * n + j];
                out[i * 2 * n + j] = v.max(0.0);
                out[i * 2 * n + n + j] = (-v).max(0.0);
            }
        }
        let t = Tensor::new(vec![m, 2 * n], out)?;
        Ok(self.push_owned(t, Op::CRelu(a), &[a]))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NnError> {
        let (m, d) = self.dims2(x, "layer_norm")?;
        if d == 0 {
            return Err(NnError::Shape("layer_norm over zero features".into()));
        }
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(NnError::Shape(format!(
                "layer_norm: gain/bias must have {d} entries"
            )));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j];
            }
        }
        let t = Tensor::new(vec![m, d], out)?;
        let normed = self.push_owned(
            t,
            Op::LayerNorm {
                x,
                gain,
                xhat,
                inv_std,
            },
            &[x, gain],
        );
        self.add_row(normed, bias)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NnError> {
        let (m, n) = self.dims2(a, "log_softmax")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::LogSoftmax(a), &[a]))
    }

    /// Picks `a[i, idx[i]]` for every row: `[m,n] -> [m]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var, NnError> {
        let (m, n) = self.dims2(a, "gather")?;
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(NnError::Shape(format!(
                "gather: {} indices into [{m},{n}]",
                idx.len()
            )));
        }
        let x = self.value(a).data();
        let out = idx.iter().enumerate().map(|(i, &j)| x[i * n + j]).collect();
        let t = Tensor::new(vec![m], out)?;
        Ok(self.push_owned(t, Op::Gather(a, idx.to_vec()), &[a]))
    }

    /// `[m,n] -> [m]`
    pub fn row_sum(&mut self, a: Var) -> Result<Var, NnError> {
        let (m, n) = self.dims2(a, "row_sum")?;
        let x = self.value(a).data();
        let out = (0..m).map(|i| x[i * n..(i + 1) * n].iter().sum()).collect();
        let t = Tensor::new(vec![m], out)?;
        Ok(self.push_owned(t, Op::RowSum(a), &[a]))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push_owned(t, Op::Exp(a), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(a).map(|x| x.clamp(lo, hi));
        self.push_owned(t, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        self.push_owned(t, Op::Square(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::sqrt);
        self.push_owned(t, Op::Sqrt(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).data().iter().sum());
        self.push_owned(t, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::scalar(v.data().iter().sum::<f64>() / v.len().max(1) as f64);
        self.push_owned(t, Op::Mean(a), &[a])
    }

    /// Identity in the forward pass; blocks all gradient flow.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.push(Cow::Owned(t), Op::StopGradient, false)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NnError::Usage(
                "backward called before a forward pass was recorded".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(NnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let send = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf | Op::StopGradient => {}
                Op::Param(name) => match out.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.insert(name.clone(), g);
                    }
                },
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k) = (va.shape()[0], va.shape()[1]);
                    let n = vb.shape()[1];
                    if self.nodes[a.0].needs_grad {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), false, vb.data(), true, &mut da, 0.0);
                        send(*a, Tensor::new(vec![m, k], da)?, &mut grads);
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, va.data(), true, g.data(), false, &mut db, 0.0);
                        send(*b, Tensor::new(vec![k, n], db)?, &mut grads);
                    }
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    let mut dr = vec![0.0; n];
                    for r in 0..g.rows() {
                        for (d, v) in dr.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    let rshape = self.value(*row).shape().to_vec();
                    send(*row, Tensor::new(rshape, dr)?, &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Add(a, b) => {
                    send(*b, g.clone(), &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v), &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |gv, bv| gv * bv);
                    let db = g.zip_map(self.value(*a), |gv, av| gv * av);
                    send(*a, da, &mut grads);
                    send(*b, db, &mut grads);
                }
                Op::Min(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let pick_a: Vec<bool> = va.iter().zip(vb).map(|(x, y)| x <= y).collect();
                    let mut da = g.clone();
                    let mut db = g;
                    for (j, &pa) in pick_a.iter().enumerate() {
                        if pa {
                            db.data_mut()[j] = 0.0;
                        } else {
                            da.data_mut()[j] = 0.0;
                        }
                    }
                    send(*a, da, &mut grads);
                    send(*b, db, &mut grads);
                }
                Op::Scale(a, s) => send(*a, g.map(|v| v * s), &mut grads),
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    send(*a, d, &mut grads);
                }
                Op::CRelu(a) => {
                    let x = self.value(*a);
                    let (m, n) = (x.shape()[0], x.shape()[1]);
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        for j in 0..n {
                            let v = x.data()[r * n + j];
                            let gp = g.data()[r * 2 * n + j];
                            let gn = g.data()[r * 2 * n + n + j];
                            d[r * n + j] = if v > 0.0 {
                                gp
                            } else if v < 0.0 {
                                -gn
                            } else {
                                0.0
                            };
                        }
                    }
                    send(*a, Tensor::new(vec![m, n], d)?, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain).data();
                    let (m, d) = (g.rows(), g.cols());
                    let mut dgain = vec![0.0; d];
                    let mut dx = vec![0.0; m * d];
                    for r in 0..m {
                        let gr = g.row(r);
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..d {
                            dgain[j] += gr[j] * xh[j];
                            let dxh = gr[j] * gv[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let scale = inv_std[r] / d as f64;
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            dx[r * d + j] =
                                scale * (d as f64 * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                        }
                    }
                    let gshape = self.value(*gain).shape().to_vec();
                    send(*gain, Tensor::new(gshape, dgain)?, &mut grads);
                    send(*x, Tensor::new(vec![m, d], dx)?, &mut grads);
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref();
                    let (m, n) = (y.shape()[0], y.shape()[1]);
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        let gs: f64 = g.row(r).iter().sum();
                        for j in 0..n {
                            d[r * n + j] = g.data()[r * n + j] - y.data()[r * n + j].exp() * gs;
                        }
                    }
                    send(*a, Tensor::new(vec![m, n], d)?, &mut grads);
                }
                Op::Gather(a, idx) => {
                    let n = self.value(*a).cols();
                    let m = idx.len();
                    let mut d = vec![0.0; m * n];
                    for (r, &j) in idx.iter().enumerate() {
                        d[r * n + j] = g.data()[r];
                    }
                    send(*a, Tensor::new(vec![m, n], d)?, &mut grads);
                }
                Op::RowSum(a) => {
                    let n = self.value(*a).cols();
                    let m = g.len();
                    let d = (0..m * n).map(|k| g.data()[k / n]).collect();
                    send(*a, Tensor::new(vec![m, n], d)?, &mut grads);
                }
                Op::Exp(a) => {
                    let d = g.zip_map(node.value.as_ref(), |gv, y| gv * y);
                    send(*a, d, &mut grads);
                }
                Op::Clamp(a, lo, hi) => {
                    let d = g.zip_map(self.value(*a), |gv, x| {
                        if x >= *lo && x <= *hi {
                            gv
                        } else {
                            0.0
                        }
                    });
                    send(*a, d, &mut grads);
                }
                Op::Square(a) => {
                    let d = g.zip_map(self.value(*a), |gv, x| 2.0 * x * gv);
                    send(*a, d, &mut grads);
                }
                Op::Sqrt(a) => {
                    let d = g.zip_map(node.value.as_ref(), |gv, y| {
                        if y > 0.0 {
                            gv / (2.0 * y)
                        } else {
                            0.0
                        }
                    });
                    send(*a, d, &mut grads);
                }
                Op::Sum(a) => {
                    let s = self.value(*a).shape().to_vec();
                    let gv = g.item();
                    send(*a, Tensor::full(&s, gv), &mut grads);
                }
                Op::Mean(a) => {
                    let v = self.value(*a);
                    let gv = g.item() / v.len().max(1) as f64;
                    let s = v.shape().to_vec();
                    send(*a, Tensor::full(&s, gv), &mut grads);
                }
            }
        }

        for node in &self.nodes {
            if let Op::Param(name) = &node.op {
                out.entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }
}
