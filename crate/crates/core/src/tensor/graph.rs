use super::kernels;
use super::{numel, Result, Tensor, TensorError};

/// Guard added to row norms before dividing.
pub const NORM_EPS: f64 = 1e-9;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SumTo(Var),
    BroadcastTo(Var),
    Transpose(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    RowNorm(Var),
    L2Normalize(Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

/// Public tag for an op, mostly for reports and error messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Recip,
    Relu,
    Exp,
    Log,
    Softmax,
    LogSoftmax,
    SumTo,
    BroadcastTo,
    Transpose,
    Reshape,
    Concat,
    RowNorm,
    L2Normalize,
    CrossEntropy,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Recip => "recip",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::SumTo => "sum_to",
            OpKind::BroadcastTo => "broadcast_to",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::Concat => "concat",
            OpKind::RowNorm => "row_norm",
            OpKind::L2Normalize => "l2_normalize",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Recip(..) => OpKind::Recip,
            Op::Relu(..) => OpKind::Relu,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::SumTo(..) => OpKind::SumTo,
            Op::BroadcastTo(..) => OpKind::BroadcastTo,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Concat { .. } => OpKind::Concat,
            Op::RowNorm(..) => OpKind::RowNorm,
            Op::L2Normalize(..) => OpKind::L2Normalize,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Recip(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::SumTo(a)
            | Op::BroadcastTo(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::RowNorm(a)
            | Op::L2Normalize(a) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Append-only computation record. Node order is a topological order.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                op: op.kind().name(),
            });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = kernels::broadcast_shape(ta.shape(), tb.shape())
            .ok_or_else(|| shape_err(name, ta.shape(), tb.shape()))?;
        let data = kernels::broadcast_binary(ta.data(), ta.shape(), tb.data(), tb.shape(), &out, f);
        self.push(Tensor::new(out, data)?, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a).map(f);
        self.push(t, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (broadcasting) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| 1.0 / x, Op::Recip(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log(a))
    }

    fn last_dim(&self, a: Var, op: &'static str) -> Result<usize> {
        match self.shape(a).last() {
            Some(&c) if c > 0 => Ok(c),
            _ => Err(TensorError::Invalid {
                op,
                msg: format!("needs a non-empty trailing axis, got {:?}", self.shape(a)),
            }),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let cols = self.last_dim(a, "softmax")?;
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), kernels::softmax_rows(t.data(), cols))?;
        self.push(out, Op::Softmax(a))
    }

    /// Log-softmax over the last axis, stabilized with log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let cols = self.last_dim(a, "log_softmax")?;
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), kernels::log_softmax_rows(t.data(), cols))?;
        self.push(out, Op::LogSoftmax(a))
    }

    /// Reduce by summation to a shape `a` broadcasts from.
    pub fn sum_to(&mut self, a: Var, target: &[usize]) -> Result<Var> {
        let t = self.value(a);
        match kernels::broadcast_shape(target, t.shape()) {
            Some(s) if s == t.shape() => {}
            _ => return Err(shape_err("sum_to", t.shape(), target)),
        }
        let data = kernels::sum_to(t.data(), t.shape(), target);
        self.push(Tensor::new(target.to_vec(), data)?, Op::SumTo(a))
    }

    pub fn broadcast_to(&mut self, a: Var, target: &[usize]) -> Result<Var> {
        let t = self.value(a);
        match kernels::broadcast_shape(t.shape(), target) {
            Some(s) if s == target => {}
            _ => return Err(shape_err("broadcast_to", t.shape(), target)),
        }
        let data = kernels::broadcast_to(t.data(), t.shape(), target);
        self.push(Tensor::new(target.to_vec(), data)?, Op::BroadcastTo(a))
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Invalid {
                op: "sum_axis",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let mut keep = shape.clone();
        keep[axis] = 1;
        let s = self.sum_to(a, &keep)?;
        let mut out = shape;
        out.remove(axis);
        self.reshape(s, &out)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = self.shape(a).get(axis).copied().unwrap_or(1);
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.sum_to(a, &[])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.shape();
        if s.len() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("expects rank 2, got {s:?}"),
            });
        }
        let (r, c) = (s[0], s[1]);
        let out = Tensor::new(vec![c, r], kernels::transpose(t.data(), r, c))?;
        self.push(out, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// Euclidean norm over the last axis, kept as a trailing axis of length 1.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let cols = self.last_dim(a, "row_norm")?;
        let t = self.value(a);
        let data: Vec<f64> = t
            .data()
            .chunks(cols)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        self.push(Tensor::new(shape, data)?, Op::RowNorm(a))
    }

    /// `x / (‖x‖ + 1e-9)` over the last axis.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let cols = self.last_dim(a, "l2_normalize")?;
        let t = self.value(a);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt() + NORM_EPS;
            row.iter_mut().for_each(|v| *v /= n);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push(out, Op::L2Normalize(a))
    }

    /// Row-wise cosine similarity of two equally shaped tensors.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("cosine_sim", self.shape(a), self.shape(b)));
        }
        let na = self.l2_normalize(a)?;
        let nb = self.l2_normalize(b)?;
        let p = self.mul(na, nb)?;
        let last = self.shape(p).len() - 1;
        self.sum_axis(p, last)
    }

    /// Mean cross-entropy of `[n, c]` logits against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let s = t.shape();
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return Err(shape_err("cross_entropy", s, &[targets.len()]));
        }
        let c = s[1];
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!("target {bad} out of range for {c} classes"),
            });
        }
        let ls = kernels::log_softmax_rows(t.data(), c);
        let loss = -targets
            .iter()
            .enumerate()
            .map(|(i, &y)| ls[i * c + y])
            .sum::<f64>()
            / targets.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert!(close(g.value(y).data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let y = g.l2_normalize(x).unwrap();
        assert!(close(g.value(y).data(), &[0.6, 0.8], 1e-9));
    }

    #[test]
    fn cosine_self_similarity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![7.0, 0.1, 3.0]]).unwrap());
        let c = g.cosine_sim(x, x).unwrap();
        assert!(close(g.value(c).data(), &[1.0, 1.0], 1e-9));
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0]));
        assert_eq!(g.log(x).unwrap_err(), TensorError::NonFinite { op: "log" });
        let big = g.constant(Tensor::vector(vec![1000.0]));
        assert!(g.exp(big).is_err());
    }

    #[test]
    fn concat_along_last_axis() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3]);
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn softmax_is_shift_stable() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1000.0, 1001.0]));
        let y = g.softmax(x).unwrap();
        let e = 1.0 / (1.0 + (-1.0f64).exp());
        assert!(close(g.value(y).data(), &[1.0 - e, e], 1e-12));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 4]));
        let l = g.cross_entropy(x, &[0, 3]).unwrap();
        assert!((g.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(g.cross_entropy(x, &[4, 0]).is_err());
    }
}
