//! A small reverse-mode autodiff tape over dense `f64` tensors.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep from
//! the loss visits every node after all of its consumers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense tensor. Scalars have shape `[1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!(
                    "shape {:?} needs {} values, got {}",
                    shape,
                    count,
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let count = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; count],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            _ => (1, self.data.len()),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LogSigmoid(Var),
    Gather(Var, Vec<usize>),
    LogSumExp(Var),
    Sum(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    Embedding(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Parameters and constants alike enter as leaves.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let data = matmul_raw(&self.value(a).data, &self.value(b).data, m, k, n);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul(a, b),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let data = transpose_raw(&self.value(a).data, m, n);
        Ok(self.push(
            Tensor {
                shape: vec![n, m],
                data,
            },
            Op::Transpose(a),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let va = self.value(a);
        let data = va
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = va.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// `a[m, n] + b[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(b).len() != n {
            return Err(shape_err(
                "add_row",
                format!("row of {} vs matrix [{m},{n}]", self.value(b).len()),
            ));
        }
        let bias = &self.value(b).data;
        let mut data = self.value(a).data.clone();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(bias) {
                *x += y;
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::AddRow(a, b),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let va = self.value(a);
        let data = va
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = va.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let t = Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().map(|x| x * c).collect(),
        };
        self.push(t, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let t = Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().map(|&x| x.max(0.0)).collect(),
        };
        self.push(t, Op::Relu(a))
    }

    /// Softmax along the last axis; `-inf` entries get zero weight.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (_, n) = va.rows_cols();
        let mut data = va.data.clone();
        for row in data.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let shape = va.shape.clone();
        self.push(Tensor { shape, data }, Op::SoftmaxRows(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let t = Tensor {
            shape: va.shape.clone(),
            data: va
                .data
                .iter()
                .map(|&x| crate::reverse::log_sigmoid(x))
                .collect(),
        };
        self.push(t, Op::LogSigmoid(a))
    }

    /// Picks entries by flat index into a vector of shape `[len]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.len()) {
            return Err(shape_err(
                "gather",
                format!("index {bad} out of {}", va.len()),
            ));
        }
        let data: Vec<f64> = idx.iter().map(|&i| va.data[i]).collect();
        Ok(self.push(
            Tensor {
                shape: vec![idx.len()],
                data,
            },
            Op::Gather(a, idx.to_vec()),
        ))
    }

    /// `ln Σ exp(a)` over all entries; `[1]`.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let v = crate::reverse::logsumexp(self.value(a).data.iter().copied());
        self.push(Tensor::scalar(v), Op::LogSumExp(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut cols = None;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if *cols.get_or_insert(c) != c {
                return Err(shape_err("concat_rows", "column counts differ".into()));
            }
            rows += r;
            data.extend_from_slice(&self.value(p).data);
        }
        let cols = cols.ok_or_else(|| shape_err("concat_rows", "nothing to concatenate".into()))?;
        Ok(self.push(
            Tensor {
                shape: vec![rows, cols],
                data,
            },
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if *rows.get_or_insert(r) != r {
                return Err(shape_err("concat_cols", "row counts differ".into()));
            }
            widths.push(c);
        }
        let rows = rows.ok_or_else(|| shape_err("concat_cols", "nothing to concatenate".into()))?;
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.value(p).data;
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            Tensor {
                shape: vec![rows, total],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "slice_rows")?;
        if start + len > m {
            return Err(shape_err(
                "slice_rows",
                format!("rows {start}..{} of {m}", start + len),
            ));
        }
        let data = self.value(a).data[start * n..(start + len) * n].to_vec();
        Ok(self.push(
            Tensor {
                shape: vec![len, n],
                data,
            },
            Op::SliceRows(a, start),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = Tensor::new(shape, self.value(a).data.clone())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Rows `ids` of `table[V, d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err("embedding", format!("id {bad} out of {v}")));
        }
        let src = &self.value(table).data;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), d],
                data,
            },
            Op::Embedding(table, ids.to_vec()),
        ))
    }

    /// `softmax(q kᵀ / sqrt(d_k) + mask) v`.
    pub fn masked_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&Tensor>,
    ) -> Result<Var> {
        let (_, dk) = self.dims2(q, "attention")?;
        let kt = self.transpose(k)?;
        let logits = self.matmul(q, kt)?;
        let mut scaled = self.scale(logits, 1.0 / (dk as f64).sqrt());
        if let Some(m) = mask {
            if m.shape != self.shape(scaled) {
                return Err(shape_err(
                    "attention",
                    format!("mask {:?} vs logits {:?}", m.shape, self.shape(scaled)),
                ));
            }
            let mv = self.leaf(m.clone());
            scaled = self.add(scaled, mv)?;
        }
        let weights = self.softmax_rows(scaled);
        self.matmul(weights, v)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |to: Var, t: Tensor| match &mut grads[to.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).rows_cols();
                    let (_, n) = self.value(*b).rows_cols();
                    let bt = transpose_raw(&self.value(*b).data, k, n);
                    let ga = matmul_raw(&g.data, &bt, m, n, k);
                    let at = transpose_raw(&self.value(*a).data, m, k);
                    let gb = matmul_raw(&at, &g.data, k, m, n);
                    send(
                        *a,
                        Tensor {
                            shape: vec![m, k],
                            data: ga,
                        },
                    );
                    send(
                        *b,
                        Tensor {
                            shape: vec![k, n],
                            data: gb,
                        },
                    );
                }
                Op::Transpose(a) => {
                    let (m, n) = self.value(*a).rows_cols();
                    send(
                        *a,
                        Tensor {
                            shape: vec![m, n],
                            data: transpose_raw(&g.data, n, m),
                        },
                    );
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddRow(a, b) => {
                    let n = self.value(*b).len();
                    let mut gb = vec![0.0; n];
                    for row in g.data.chunks(n) {
                        for (x, y) in gb.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                    let bshape = self.value(*b).shape.clone();
                    send(
                        *b,
                        Tensor {
                            shape: bshape,
                            data: gb,
                        },
                    );
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let va = &self.value(*a).data;
                    let vb = &self.value(*b).data;
                    let ga = g.data.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb = g.data.iter().zip(va).map(|(x, y)| x * y).collect();
                    send(
                        *a,
                        Tensor {
                            shape: g.shape.clone(),
                            data: ga,
                        },
                    );
                    send(
                        *b,
                        Tensor {
                            shape: g.shape,
                            data: gb,
                        },
                    );
                }
                Op::Scale(a, c) => {
                    let data = g.data.iter().map(|x| x * c).collect();
                    send(
                        *a,
                        Tensor {
                            shape: g.shape,
                            data,
                        },
                    );
                }
                Op::Relu(a) => {
                    let va = &self.value(*a).data;
                    let data = g
                        .data
                        .iter()
                        .zip(va)
                        .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                        .collect();
                    send(
                        *a,
                        Tensor {
                            shape: g.shape,
                            data,
                        },
                    );
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let (_, n) = y.rows_cols();
                    let mut data = vec![0.0; y.len()];
                    for ((out, yr), gr) in data
                        .chunks_mut(n)
                        .zip(y.data.chunks(n))
                        .zip(g.data.chunks(n))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, p), q) in out.iter_mut().zip(yr).zip(gr) {
                            *o = p * (q - dot);
                        }
                    }
                    send(
                        *a,
                        Tensor {
                            shape: y.shape.clone(),
                            data,
                        },
                    );
                }
                Op::LogSigmoid(a) => {
                    let va = &self.value(*a).data;
                    // d/dx ln φ(x) = φ(-x)
                    let data = g
                        .data
                        .iter()
                        .zip(va)
                        .map(|(q, &x)| q * crate::reverse::log_sigmoid(-x).exp())
                        .collect();
                    send(
                        *a,
                        Tensor {
                            shape: g.shape,
                            data,
                        },
                    );
                }
                Op::Gather(a, idx) => {
                    let mut t = Tensor::zeros(self.value(*a).shape.clone());
                    for (&i, q) in idx.iter().zip(&g.data) {
                        t.data[i] += q;
                    }
                    send(*a, t);
                }
                Op::LogSumExp(a) => {
                    let va = self.value(*a);
                    let lse = node.value.data[0];
                    let data = va
                        .data
                        .iter()
                        .map(|&x| g.data[0] * (x - lse).exp())
                        .collect();
                    send(
                        *a,
                        Tensor {
                            shape: va.shape.clone(),
                            data,
                        },
                    );
                }
                Op::Sum(a) => {
                    let va = self.value(*a);
                    send(
                        *a,
                        Tensor {
                            shape: va.shape.clone(),
                            data: vec![g.data[0]; va.len()],
                        },
                    );
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        send(
                            p,
                            Tensor {
                                shape: self.value(p).shape.clone(),
                                data: g.data[offset..offset + len].to_vec(),
                            },
                        );
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.rows_cols();
                    let mut offset = 0;
                    for &p in parts {
                        let (_, w) = self.value(p).rows_cols();
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(
                                &g.data[r * total + offset..r * total + offset + w],
                            );
                        }
                        send(
                            p,
                            Tensor {
                                shape: vec![rows, w],
                                data,
                            },
                        );
                        offset += w;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut t = Tensor::zeros(self.value(*a).shape.clone());
                    let (_, n) = t.rows_cols();
                    t.data[start * n..start * n + g.len()].copy_from_slice(&g.data);
                    send(*a, t);
                }
                Op::Reshape(a) => {
                    send(
                        *a,
                        Tensor {
                            shape: self.value(*a).shape.clone(),
                            data: g.data,
                        },
                    );
                }
                Op::Embedding(table, ids) => {
                    let mut t = Tensor::zeros(self.value(*table).shape.clone());
                    let (_, d) = t.rows_cols();
                    for (row, &i) in g.data.chunks(d).zip(ids) {
                        for (x, y) in t.data[i * d..(i + 1) * d].iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                    send(*table, t);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Output of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or zeros of `shape` when the loss does not reach it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    /// Central differences of `f` at `x`.
    fn finite_diff<F: Fn(&Tensor) -> f64>(f: F, x: &Tensor, h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut plus = x.clone();
                plus.data[i] += h;
                let mut minus = x.clone();
                minus.data[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }

    fn random(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn relu_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data, vec![0.0, 1.0]);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let x0 = random(vec![4, 4], 1);
        let w = random(vec![4, 4], 2);
        let f = |x: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let s = tape.softmax_rows(xv);
            let m = tape.mul(s, wv).unwrap();
            let out = tape.sum(m);
            tape.value(out).data[0]
        };
        let mut tape = Tape::new();
        let xv = tape.leaf(x0.clone());
        let wv = tape.leaf(w.clone());
        let s = tape.softmax_rows(xv);
        let m = tape.mul(s, wv).unwrap();
        let out = tape.sum(m);
        let g = tape.backward(out).unwrap();
        let fd = finite_diff(f, &x0, 1e-5);
        let err = rel_err(&g.get(xv).unwrap().data, &fd);
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        // One composite exercising each op once.
        let a0 = random(vec![3, 4], 3);
        let b0 = random(vec![4, 2], 4);
        let table = random(vec![5, 2], 5);
        let mask = Tensor::new(
            vec![3, 3],
            vec![
                0.0,
                f64::NEG_INFINITY,
                0.0,
                0.0,
                0.0,
                0.0,
                f64::NEG_INFINITY,
                0.0,
                0.0,
            ],
        )
        .unwrap();
        let build = |tape: &mut Tape, a: Var, b: Var, e: Var| -> Var {
            let ab = tape.matmul(a, b).unwrap(); // [3,2]
            let emb = tape.embedding(e, &[4, 0, 2]).unwrap(); // [3,2]
            let sum = tape.add(ab, emb).unwrap();
            let bias = tape.slice_rows(e, 1, 1).unwrap();
            let biased = tape.add_row(sum, bias).unwrap();
            let r = tape.relu(biased);
            let both = tape.concat_cols(&[r, biased]).unwrap(); // [3,4]
            let att = tape
                .masked_attention(both, both, both, Some(&mask))
                .unwrap();
            let t = tape.transpose(att).unwrap(); // [4,3]
            let stacked = tape.concat_rows(&[t, t]).unwrap(); // [8,3]
            let sq = tape.mul(stacked, stacked).unwrap();
            let sm = tape.softmax_rows(sq);
            let flat = tape.reshape(sm, vec![24]).unwrap();
            let picked = tape.gather(flat, &[0, 5, 7, 7, 23]).unwrap();
            let ls = tape.log_sigmoid(picked);
            let lse = tape.logsumexp(ls);
            let s = tape.sum(biased);
            let s2 = tape.scale(s, 0.3);
            tape.sub(lse, s2).unwrap()
        };
        let eval = |a: &Tensor, b: &Tensor, e: &Tensor| {
            let mut tape = Tape::new();
            let (av, bv, ev) = (
                tape.leaf(a.clone()),
                tape.leaf(b.clone()),
                tape.leaf(e.clone()),
            );
            let out = build(&mut tape, av, bv, ev);
            tape.value(out).data[0]
        };
        let mut tape = Tape::new();
        let (av, bv, ev) = (
            tape.leaf(a0.clone()),
            tape.leaf(b0.clone()),
            tape.leaf(table.clone()),
        );
        let out = build(&mut tape, av, bv, ev);
        let g = tape.backward(out).unwrap();
        let fa = finite_diff(|a| eval(a, &b0, &table), &a0, 1e-6);
        let fb = finite_diff(|b| eval(&a0, b, &table), &b0, 1e-6);
        let fe = finite_diff(|e| eval(&a0, &b0, e), &table, 1e-6);
        assert!(rel_err(&g.get(av).unwrap().data, &fa) < 1e-6);
        assert!(rel_err(&g.get(bv).unwrap().data, &fb) < 1e-6);
        assert!(rel_err(&g.get(ev).unwrap().data, &fe) < 1e-6);
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        assert!(tape.matmul(a, b).is_err());
        let c = tape.leaf(Tensor::zeros(vec![3]));
        assert!(tape.add(a, c).is_err());
        assert!(tape.gather(c, &[3]).is_err());
        assert!(tape.slice_rows(a, 1, 2).is_err());
        assert!(tape.backward(a).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }
}
