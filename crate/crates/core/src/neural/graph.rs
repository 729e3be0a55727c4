//! Tape-based reverse-mode automatic differentiation over 2-D arrays.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use super::{NeuralError, Real};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulT(usize, usize),
    Add(usize, usize),
    /// `(n, d) + (1, d)` broadcast over rows.
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Embedding(usize, Vec<u32>),
    Dropout(usize, Array2<T>),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Array2<T>,
        inv_std: Array1<T>,
    },
    CausalSoftmax(usize),
    SoftmaxCrossEntropy {
        logits: usize,
        targets: Vec<Option<u32>>,
        probs: Array2<T>,
        count: usize,
    },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, usize>,
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> NeuralError {
    NeuralError::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input whose gradient is readable after backward.
    pub fn variable(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf holding the current value of a parameter; repeated calls reuse the node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&n) = self.params.get(&id) {
            return Var(n);
        }
        let v = self.variable(store.value(id).clone());
        self.params.insert(id, v.0);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.ncols() != y.nrows() {
            return Err(shape_err("matmul", x.shape(), y.shape()));
        }
        let v = x.dot(y);
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(v, Op::MatMul(a.0, b.0), ng))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.ncols() != y.ncols() {
            return Err(shape_err("matmul_t", x.shape(), y.shape()));
        }
        let v = x.dot(&y.t());
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(v, Op::MatMulT(a.0, b.0), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.dim() != y.dim() {
            return Err(shape_err("add", x.shape(), y.shape()));
        }
        let v = x + y;
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(v, Op::Add(a.0, b.0), ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NeuralError> {
        let (x, r) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        if r.nrows() != 1 || x.ncols() != r.ncols() {
            return Err(shape_err("add_row", x.shape(), r.shape()));
        }
        let v = x + r;
        let ng = self.ng(&[a.0, row.0]);
        Ok(self.push(v, Op::AddRow(a.0, row.0), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.dim() != y.dim() {
            return Err(shape_err("mul", x.shape(), y.shape()));
        }
        let v = x * y;
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(v, Op::Mul(a.0, b.0), ng))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = &self.nodes[a.0].value * k;
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Scale(a.0, k), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| T::one() / (T::one() + (-x).exp()));
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Sigmoid(a.0), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.tanh());
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Tanh(a.0), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.max(T::zero()));
        let ng = self.ng(&[a.0]);
        self.push(v, Op::Relu(a.0), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NeuralError> {
        let views: Vec<ArrayView2<T>> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = concatenate(Axis(1), &views)
            .map_err(|_| NeuralError::Shape("concat_cols: row counts differ".into()))?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.ng(&ids);
        Ok(self.push(v, Op::ConcatCols(ids), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NeuralError> {
        let views: Vec<ArrayView2<T>> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = concatenate(Axis(0), &views)
            .map_err(|_| NeuralError::Shape("concat_rows: column counts differ".into()))?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.ng(&ids);
        Ok(self.push(v, Op::ConcatRows(ids), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NeuralError> {
        let x = &self.nodes[a.0].value;
        if start > end || end > x.ncols() {
            return Err(NeuralError::Shape(format!("slice_cols {start}..{end} of {:?}", x.shape())));
        }
        let v = x.slice(s![.., start..end]).to_owned();
        let ng = self.ng(&[a.0]);
        Ok(self.push(v, Op::SliceCols(a.0, start), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NeuralError> {
        let x = &self.nodes[a.0].value;
        if start > end || end > x.nrows() {
            return Err(NeuralError::Shape(format!("slice_rows {start}..{end} of {:?}", x.shape())));
        }
        let v = x.slice(s![start..end, ..]).to_owned();
        let ng = self.ng(&[a.0]);
        Ok(self.push(v, Op::SliceRows(a.0, start), ng))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var, NeuralError> {
        let t = &self.nodes[table.0].value;
        let mut v = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            if id as usize >= t.nrows() {
                return Err(NeuralError::Shape(format!("embedding id {id} out of {} rows", t.nrows())));
            }
            v.row_mut(r).assign(&t.row(id as usize));
        }
        let ng = self.ng(&[table.0]);
        Ok(self.push(v, Op::Embedding(table.0, ids.to_vec()), ng))
    }

    /// Inverted dropout with a precomputed keep mask already scaled by `1/(1-p)`.
    pub fn dropout(&mut self, a: Var, mask: Array2<T>) -> Result<Var, NeuralError> {
        let x = &self.nodes[a.0].value;
        if x.dim() != mask.dim() {
            return Err(shape_err("dropout", x.shape(), mask.shape()));
        }
        let v = x * &mask;
        let ng = self.ng(&[a.0]);
        Ok(self.push(v, Op::Dropout(a.0, mask), ng))
    }

    /// Row-wise layer normalization with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NeuralError> {
        let xv = &self.nodes[x.0].value;
        let (n, d) = xv.dim();
        for p in [gain, bias] {
            if self.nodes[p.0].value.dim() != (1, d) {
                return Err(shape_err("layer_norm", xv.shape(), self.nodes[p.0].value.shape()));
            }
        }
        let eps = T::from(1e-5).expect("representable");
        let dn = T::from(d).expect("representable");
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Array1::zeros(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.sum() / dn;
            let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            Zip::from(xhat.row_mut(r)).and(row).for_each(|h, &v| *h = (v - mean) * is);
        }
        let v = &xhat * &self.nodes[gain.0].value + &self.nodes[bias.0].value;
        let ng = self.ng(&[x.0, gain.0, bias.0]);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Row-wise softmax of a square score matrix where entry `(i, j)` with
    /// `j > i` is masked to exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var, NeuralError> {
        let x = &self.nodes[a.0].value;
        let (n, m) = x.dim();
        if n != m {
            return Err(NeuralError::Shape(format!("causal_softmax needs a square matrix, got {:?}", x.shape())));
        }
        let mut v = Array2::zeros((n, n));
        for i in 0..n {
            let row = x.row(i);
            let mx = (0..=i).map(|j| row[j]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for j in 0..=i {
                let e = (row[j] - mx).exp();
                v[[i, j]] = e;
                z += e;
            }
            for j in 0..=i {
                v[[i, j]] = v[[i, j]] / z;
            }
        }
        let ng = self.ng(&[a.0]);
        Ok(self.push(v, Op::CausalSoftmax(a.0), ng))
    }

    /// Mean cross-entropy of row-wise softmax(logits) against targets;
    /// `None` targets are ignored. Produces a 1×1 node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<u32>]) -> Result<Var, NeuralError> {
        let x = &self.nodes[logits.0].value;
        let (n, v) = x.dim();
        if n != targets.len() {
            return Err(NeuralError::Shape(format!("{n} logit rows but {} targets", targets.len())));
        }
        let probs = softmax_rows(x);
        let mut loss = T::zero();
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t as usize >= v {
                    return Err(NeuralError::Shape(format!("target {t} out of {v} classes")));
                }
                loss = loss - log_softmax_at(x.row(r), t as usize);
                count += 1;
            }
        }
        let denom = T::from(count.max(1)).expect("representable");
        let value = Array2::from_elem((1, 1), loss / denom);
        let ng = self.ng(&[logits.0]);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
                count,
            },
            ng,
        ))
    }

    /// Back-propagates from a 1×1 node, seeding its gradient with 1.
    pub fn backward(&mut self, loss: Var) -> Result<(), NeuralError> {
        if self.nodes[loss.0].value.dim() != (1, 1) {
            return Err(NeuralError::Shape("backward needs a scalar node".into()));
        }
        self.backward_with(loss, Array2::from_elem((1, 1), T::one()))
    }

    /// Back-propagates an arbitrary upstream gradient into `out`.
    pub fn backward_with(&mut self, out: Var, seed: Array2<T>) -> Result<(), NeuralError> {
        if self.nodes[out.0].value.dim() != seed.dim() {
            return Err(shape_err("backward seed", self.nodes[out.0].value.shape(), seed.shape()));
        }
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |j: usize, delta: Array2<T>| {
            if !nodes[j].needs_grad {
                return;
            }
            match &mut grads[j] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |j: usize| &nodes[j].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if nodes[*a].needs_grad {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if nodes[*b].needs_grad {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if nodes[*a].needs_grad {
                    acc(*a, g.dot(val(*b)));
                }
                if nodes[*b].needs_grad {
                    acc(*b, g.t().dot(val(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Mul(a, b) => {
                if nodes[*a].needs_grad {
                    acc(*a, g * val(*b));
                }
                if nodes[*b].needs_grad {
                    acc(*b, g * val(*a));
                }
            }
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::Sigmoid(a) => {
                let y = &nodes[i].value;
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d = *d * y * (T::one() - y));
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let y = &nodes[i].value;
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d = *d * (T::one() - y * y));
                acc(*a, d);
            }
            Op::Relu(a) => {
                let x = val(*a);
                let mut d = g.clone();
                Zip::from(&mut d).and(x).for_each(|d, &x| {
                    if x <= T::zero() {
                        *d = T::zero();
                    }
                });
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    acc(p, g.slice(s![.., c..c + w]).to_owned());
                    c += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    acc(p, g.slice(s![r..r + h, ..]).to_owned());
                    r += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                acc(*a, d);
            }
            Op::Embedding(t, ids) => {
                let mut d = Array2::zeros(val(*t).dim());
                for (r, &id) in ids.iter().enumerate() {
                    let mut row = d.row_mut(id as usize);
                    row += &g.row(r);
                }
                acc(*t, d);
            }
            Op::Dropout(a, mask) => acc(*a, g * mask),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(*gain, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                if nodes[*x].needs_grad {
                    let dxhat = g * val(*gain);
                    let (n, d) = dxhat.dim();
                    let dn = T::from(d).expect("representable");
                    let mut dx = Array2::zeros((n, d));
                    for r in 0..n {
                        let dh = dxhat.row(r);
                        let h = xhat.row(r);
                        let s1 = dh.sum();
                        let s2 = Zip::from(&dh).and(&h).fold(T::zero(), |a, &p, &q| a + p * q);
                        let is = inv_std[r] / dn;
                        Zip::from(dx.row_mut(r))
                            .and(&dh)
                            .and(&h)
                            .for_each(|o, &p, &q| *o = is * (dn * p - s1 - q * s2));
                    }
                    acc(*x, dx);
                }
            }
            Op::CausalSoftmax(a) => {
                let y = &nodes[i].value;
                let mut d = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot = Zip::from(g.row(r)).and(y.row(r)).fold(T::zero(), |s, &p, &q| s + p * q);
                    Zip::from(d.row_mut(r))
                        .and(g.row(r))
                        .and(y.row(r))
                        .for_each(|o, &gp, &yp| *o = yp * (gp - dot));
                }
                acc(*a, d);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let scale = g[[0, 0]] / T::from((*count).max(1)).expect("representable");
                let mut d = probs.clone();
                for (r, t) in targets.iter().enumerate() {
                    match t {
                        Some(t) => d[[r, *t as usize]] = d[[r, *t as usize]] - T::one(),
                        None => d.row_mut(r).fill(T::zero()),
                    }
                }
                d.mapv_inplace(|v| v * scale);
                acc(*logits, d);
            }
        }
    }

    /// Gradient of a node after [`Graph::backward`], if any flowed into it.
    pub fn grad(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter leaf used in this graph.
    pub fn param_grads(&self) -> Vec<(ParamId, &Array2<T>)> {
        let mut out: Vec<(ParamId, &Array2<T>)> = self
            .params
            .iter()
            .filter_map(|(&p, &n)| self.grads.get(n).and_then(Option::as_ref).map(|g| (p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

/// Row-wise softmax.
pub fn softmax_rows<T: Real>(x: &Array2<T>) -> Array2<T> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mx = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - mx).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

/// `log softmax(row)[k]`, computed stably.
pub fn log_softmax_at<T: Real>(row: ndarray::ArrayView1<T>, k: usize) -> T {
    let mx = row.fold(T::neg_infinity(), |a, &b| a.max(b));
    let z = row.fold(T::zero(), |a, &b| a + (b - mx).exp());
    row[k] - mx - z.ln()
}
