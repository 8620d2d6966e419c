use std::collections::BTreeMap;

use super::graph::{Graph, Op, Var, NORM_EPS};
use super::kernels;
use super::{Result, Tensor, TensorError};

/// Gradients of a scalar loss with respect to every trainable leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_leaf: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_leaf.get(&v)
    }

    /// Gradient for `v`; panics if `v` is not a trainable leaf of the graph.
    pub fn wrt(&self, v: Var) -> &Tensor {
        self.by_leaf
            .get(&v)
            .unwrap_or_else(|| panic!("no gradient recorded for node {}", v.0))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.by_leaf.remove(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.by_leaf.iter()
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn check_scalar(g: &Graph, loss: Var) -> Result<()> {
    let s = g.shape(loss);
    if g.value(loss).len() != 1 {
        return Err(TensorError::NonScalarLoss(s.to_vec()));
    }
    Ok(())
}

impl Graph {
    /// Reverse pass from a scalar `loss`. Every trainable leaf receives a
    /// gradient of its own shape, zeros when it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        check_scalar(self, loss)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, gi) in self.vjp(i, &g) {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], gi);
                }
            }
        }
        let mut by_leaf = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                by_leaf.insert(Var(i), g);
            }
        }
        Ok(Gradients { by_leaf })
    }

    /// Numeric vector-Jacobian products of node `i` for upstream gradient `g`.
    fn vjp(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let like = |shape: &[usize], data: Vec<f64>| Tensor {
            shape: shape.to_vec(),
            data,
        };
        let reduce = |v: &Var, data: Vec<f64>| {
            let s = val(v).shape();
            like(s, kernels::sum_to(&data, g.shape(), s))
        };
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut ga = vec![0.0; m * k];
                kernels::gemm(m, n, k, g.data(), false, tb.data(), true, &mut ga);
                let mut gb = vec![0.0; k * n];
                kernels::gemm(k, m, n, ta.data(), true, g.data(), false, &mut gb);
                vec![(*a, like(ta.shape(), ga)), (*b, like(tb.shape(), gb))]
            }
            Op::Add(a, b) => vec![
                (*a, reduce(a, g.data.clone())),
                (*b, reduce(b, g.data.clone())),
            ],
            Op::Sub(a, b) => vec![
                (*a, reduce(a, g.data.clone())),
                (*b, reduce(b, g.data.iter().map(|v| -v).collect())),
            ],
            Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let bb = kernels::broadcast_to(tb.data(), tb.shape(), g.shape());
                let ab = kernels::broadcast_to(ta.data(), ta.shape(), g.shape());
                let ga: Vec<f64> = g.data.iter().zip(&bb).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.data.iter().zip(&ab).map(|(x, y)| x * y).collect();
                vec![(*a, reduce(a, ga)), (*b, reduce(b, gb))]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Recip(a) => {
                let d = g.data.iter().zip(&y.data).map(|(g, y)| -g * y * y).collect();
                vec![(*a, like(y.shape(), d))]
            }
            Op::Relu(a) => {
                let x = val(a);
                let d = g
                    .data
                    .iter()
                    .zip(&x.data)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*a, like(x.shape(), d))]
            }
            Op::Exp(a) => {
                let d = g.data.iter().zip(&y.data).map(|(g, y)| g * y).collect();
                vec![(*a, like(y.shape(), d))]
            }
            Op::Log(a) => {
                let x = val(a);
                let d = g.data.iter().zip(&x.data).map(|(g, x)| g / x).collect();
                vec![(*a, like(x.shape(), d))]
            }
            Op::Softmax(a) => {
                let cols = *y.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for ((gr, yr), dr) in g
                    .data
                    .chunks(cols)
                    .zip(y.data.chunks(cols))
                    .zip(d.chunks_mut(cols))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![(*a, like(y.shape(), d))]
            }
            Op::LogSoftmax(a) => {
                let cols = *y.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for ((gr, yr), dr) in g
                    .data
                    .chunks(cols)
                    .zip(y.data.chunks(cols))
                    .zip(d.chunks_mut(cols))
                {
                    let total: f64 = gr.iter().sum();
                    for ((o, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *o = gv - yv.exp() * total;
                    }
                }
                vec![(*a, like(y.shape(), d))]
            }
            Op::SumTo(a) => {
                let s = val(a).shape();
                vec![(*a, like(s, kernels::broadcast_to(g.data(), g.shape(), s)))]
            }
            Op::BroadcastTo(a) => {
                let s = val(a).shape();
                vec![(*a, like(s, kernels::sum_to(g.data(), g.shape(), s)))]
            }
            Op::Transpose(a) => {
                let s = val(a).shape();
                vec![(*a, like(s, kernels::transpose(g.data(), s[1], s[0])))]
            }
            Op::Reshape(a) => vec![(*a, like(val(a).shape(), g.data.clone()))],
            Op::Concat { inputs, axis } => {
                let out_shape = y.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let row = out_shape[*axis] * inner;
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|v| {
                        let s = val(v).shape();
                        let chunk = s[*axis] * inner;
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let start = o * row + offset;
                            d.extend_from_slice(&g.data[start..start + chunk]);
                        }
                        offset += chunk;
                        (*v, like(s, d))
                    })
                    .collect()
            }
            Op::RowNorm(a) => {
                let x = val(a);
                let cols = *x.shape().last().unwrap();
                let mut d = vec![0.0; x.len()];
                for (r, (xr, dr)) in x.data.chunks(cols).zip(d.chunks_mut(cols)).enumerate() {
                    let n = y.data[r];
                    if n > 0.0 {
                        for (o, xv) in dr.iter_mut().zip(xr) {
                            *o = g.data[r] * xv / n;
                        }
                    }
                }
                vec![(*a, like(x.shape(), d))]
            }
            Op::L2Normalize(a) => {
                let x = val(a);
                let cols = *x.shape().last().unwrap();
                let mut d = vec![0.0; x.len()];
                for ((xr, (gr, yr)), dr) in x
                    .data
                    .chunks(cols)
                    .zip(g.data.chunks(cols).zip(y.data.chunks(cols)))
                    .zip(d.chunks_mut(cols))
                {
                    let r = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let n = r + NORM_EPS;
                    let gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    let k = if r > 0.0 { gy * n / r } else { 0.0 };
                    for ((o, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *o = (gv - yv * k) / n;
                    }
                }
                vec![(*a, like(x.shape(), d))]
            }
            Op::CrossEntropy { logits, targets } => {
                let x = val(logits);
                let c = x.shape()[1];
                let mut p = kernels::softmax_rows(x.data(), c);
                let scale = g.data[0] / targets.len() as f64;
                for (row, &t) in p.chunks_mut(c).zip(targets) {
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                vec![(*logits, like(x.shape(), p))]
            }
        }
    }

    /// Gradients of `loss` w.r.t. `wrt`, recorded as new graph nodes so they
    /// can be differentiated again. Only ops with a graph-form adjoint may lie
    /// on the path from `wrt` to `loss`.
    pub fn grad_graph(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        check_scalar(self, loss)?;
        let mut grads: Vec<Option<Var>> = vec![None; loss.0 + 1];
        let seed = self.constant(Tensor::full(self.shape(loss), 1.0));
        grads[loss.0] = Some(seed);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            for (input, gi) in self.vjp_graph(i, g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                grads[input.0] = Some(match grads[input.0] {
                    Some(acc) => self.add(acc, gi)?,
                    None => gi,
                });
            }
        }
        wrt.iter()
            .map(|v| match grads.get(v.0).copied().flatten() {
                Some(gv) => Ok(gv),
                None => {
                    let z = Tensor::zeros(self.shape(*v));
                    Ok(self.constant(z))
                }
            })
            .collect()
    }

    fn vjp_graph(&mut self, i: usize, g: Var) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[i].op.clone();
        let y = Var(i);
        let shape_of = |gr: &Graph, v: &Var| gr.shape(*v).to_vec();
        Ok(match op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let bt = self.transpose(b)?;
                let ga = self.matmul(g, bt)?;
                let at = self.transpose(a)?;
                let gb = self.matmul(at, g)?;
                vec![(a, ga), (b, gb)]
            }
            Op::Add(a, b) => {
                let (sa, sb) = (shape_of(self, &a), shape_of(self, &b));
                let ga = self.sum_to(g, &sa)?;
                let gb = self.sum_to(g, &sb)?;
                vec![(a, ga), (b, gb)]
            }
            Op::Sub(a, b) => {
                let (sa, sb) = (shape_of(self, &a), shape_of(self, &b));
                let ga = self.sum_to(g, &sa)?;
                let gb = self.sum_to(g, &sb)?;
                let gb = self.scale(gb, -1.0)?;
                vec![(a, ga), (b, gb)]
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (shape_of(self, &a), shape_of(self, &b));
                let gb_full = self.mul(g, a)?;
                let ga_full = self.mul(g, b)?;
                let ga = self.sum_to(ga_full, &sa)?;
                let gb = self.sum_to(gb_full, &sb)?;
                vec![(a, ga), (b, gb)]
            }
            Op::Scale(a, c) => vec![(a, self.scale(g, c)?)],
            Op::AddScalar(a) => vec![(a, g)],
            Op::Recip(a) => {
                let yy = self.mul(y, y)?;
                let t = self.mul(g, yy)?;
                vec![(a, self.scale(t, -1.0)?)]
            }
            Op::Softmax(a) => {
                let gy = self.mul(g, y)?;
                let mut keep = shape_of(self, &a);
                *keep.last_mut().unwrap() = 1;
                let s = self.sum_to(gy, &keep)?;
                let diff = self.sub(g, s)?;
                vec![(a, self.mul(y, diff)?)]
            }
            Op::LogSoftmax(a) => {
                let p = self.softmax(a)?;
                let mut keep = shape_of(self, &a);
                *keep.last_mut().unwrap() = 1;
                let s = self.sum_to(g, &keep)?;
                let ps = self.mul(p, s)?;
                vec![(a, self.sub(g, ps)?)]
            }
            Op::SumTo(a) => {
                let s = shape_of(self, &a);
                vec![(a, self.broadcast_to(g, &s)?)]
            }
            Op::BroadcastTo(a) => {
                let s = shape_of(self, &a);
                vec![(a, self.sum_to(g, &s)?)]
            }
            Op::Transpose(a) => vec![(a, self.transpose(g)?)],
            Op::Reshape(a) => {
                let s = shape_of(self, &a);
                vec![(a, self.reshape(g, &s)?)]
            }
            Op::RowNorm(a) => {
                let inv = self.recip(y)?;
                let gx = self.mul(g, a)?;
                vec![(a, self.mul(gx, inv)?)]
            }
            Op::L2Normalize(a) => {
                // gx = g / n - y (g·y) / r  with r = ‖x‖, n = r + eps
                let r = self.row_norm(a)?;
                let n = self.add_scalar(r, NORM_EPS)?;
                let inv_n = self.recip(n)?;
                let inv_r = self.recip(r)?;
                let gy = self.mul(g, y)?;
                let keep = self.shape(r).to_vec();
                let dot = self.sum_to(gy, &keep)?;
                let first = self.mul(g, inv_n)?;
                let coef = self.mul(dot, inv_r)?;
                let second = self.mul(y, coef)?;
                vec![(a, self.sub(first, second)?)]
            }
            Op::CrossEntropy { logits, targets } => {
                let s = shape_of(self, &logits);
                let c = s[1];
                let mut onehot = Tensor::zeros(&s);
                for (r, &t) in targets.iter().enumerate() {
                    onehot.data_mut()[r * c + t] = 1.0;
                }
                let oh = self.constant(onehot);
                let p = self.softmax(logits)?;
                let d = self.sub(p, oh)?;
                let d = self.scale(d, 1.0 / targets.len() as f64)?;
                vec![(logits, self.mul(d, g)?)]
            }
            other @ (Op::Relu(_) | Op::Exp(_) | Op::Log(_) | Op::Concat { .. }) => {
                return Err(TensorError::NotDoubleDifferentiable(other.kind().name()));
            }
        })
    }
}
