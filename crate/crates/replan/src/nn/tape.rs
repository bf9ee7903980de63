//! Reverse-mode automatic differentiation over a tape of tensor operations.
//!
//! Each forward operation appends a node holding its cached value; `grad`
//! walks the tape backwards accumulating adjoints. The op set is the small
//! vocabulary needed for dense-skip networks, unrolled planning graphs and
//! the piecewise-linear reward expressions.

use super::tensor::Tensor;
use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    /// Optimization leaf (gradients requested here).
    Leaf,
    /// Constant; no gradient flows further back.
    Const,
    MatMul(NodeId, NodeId),
    /// Elementwise add; rhs may be 1 x n and is broadcast across rows.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Relu(NodeId),
    /// Subgradient at 0 is 0, matching the ReLU convention.
    Abs(NodeId),
    Square(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    /// Clamp into [lo, hi]; gradient is 1 strictly inside, 0 elsewhere.
    Clamp(NodeId, f64, f64),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    /// Sum of all elements, producing a 1 x 1 tensor.
    Sum(NodeId),
    /// Per-row sum, producing an m x 1 tensor.
    SumCols(NodeId),
    Transpose(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        let v = if tb.rows == 1 && ta.rows > 1 {
            assert_eq!(ta.cols, tb.cols, "broadcast add shape mismatch");
            let mut out = ta.clone();
            for r in 0..out.rows {
                for c in 0..out.cols {
                    out.data[r * out.cols + c] += tb.data[c];
                }
            }
            out
        } else {
            ta.zip(tb, |x, y| x + y)
        };
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::MulElem(a, b), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(Op::Recip(a), v)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| k * x);
        self.push(Op::Scale(a, k), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        self.push(Op::AddScalar(a), v)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat row mismatch");
            for r in 0..rows {
                for c in 0..t.cols {
                    out.data[r * cols + off + c] = t.data[r * t.cols + c];
                }
            }
            off += t.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let t = self.value(a);
        assert!(start + len <= t.cols, "slice out of range");
        let mut out = Tensor::zeros(t.rows, len);
        for r in 0..t.rows {
            for c in 0..len {
                out.data[r * len + c] = t.data[r * t.cols + start + c];
            }
        }
        self.push(Op::SliceCols(a, start, len), out)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), Tensor::from_vec(1, 1, vec![s]))
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows, 1);
        for r in 0..t.rows {
            out.data[r] = t.row(r).iter().sum();
        }
        self.push(Op::SumCols(a), out)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    /// Gradients of the scalar at `root` with respect to each node in `wrt`.
    pub fn grad(&self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>, NnError> {
        for &w in wrt {
            if w.0 >= self.nodes.len() {
                return Err(NnError::NotOnTape(w.0));
            }
        }
        let rt = self.value(root);
        assert_eq!(rt.rows * rt.cols, 1, "grad root must be scalar");

        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            // put back for possible wrt lookup
            let g_ref = g;
            match &self.nodes[idx].op {
                Op::Leaf | Op::Const => {
                    adj[idx] = Some(g_ref);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g_ref.matmul(&self.value(*b).transpose());
                    let gb = self.value(*a).transpose().matmul(&g_ref);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    let tb = self.value(*b);
                    if tb.rows == 1 && g_ref.rows > 1 {
                        let mut gb = Tensor::zeros(1, tb.cols);
                        for r in 0..g_ref.rows {
                            for c in 0..tb.cols {
                                gb.data[c] += g_ref.data[r * g_ref.cols + c];
                            }
                        }
                        accumulate(&mut adj, *a, g_ref.clone());
                        accumulate(&mut adj, *b, gb);
                    } else {
                        accumulate(&mut adj, *a, g_ref.clone());
                        accumulate(&mut adj, *b, g_ref.clone());
                    }
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, g_ref.clone());
                    accumulate(&mut adj, *b, g_ref.map(|x| -x));
                }
                Op::MulElem(a, b) => {
                    let ga = g_ref.zip(self.value(*b), |g, y| g * y);
                    let gb = g_ref.zip(self.value(*a), |g, x| g * x);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Relu(a) => {
                    let ga = g_ref.zip(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut adj, *a, ga);
                }
                Op::Abs(a) => {
                    let ga = g_ref.zip(self.value(*a), |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g_ref.zip(self.value(*a), |g, x| 2.0 * x * g);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g_ref.zip(&self.nodes[idx].value, |g, y| g * y);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sqrt(a) => {
                    let ga = g_ref.zip(&self.nodes[idx].value, |g, y| {
                        if y > 0.0 {
                            g / (2.0 * y)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, *a, ga);
                }
                Op::Recip(a) => {
                    let ga = g_ref.zip(self.value(*a), |g, x| -g / (x * x));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut adj, *a, g_ref.map(|g| k * g));
                }
                Op::AddScalar(a) => {
                    accumulate(&mut adj, *a, g_ref.clone());
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = g_ref.zip(self.value(*a), |g, x| {
                        if x > lo && x < hi {
                            g
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let mut gp = Tensor::zeros(t.rows, t.cols);
                        for r in 0..t.rows {
                            for c in 0..t.cols {
                                gp.data[r * t.cols + c] = g_ref.data[r * g_ref.cols + off + c];
                            }
                        }
                        off += t.cols;
                        accumulate(&mut adj, p, gp);
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let t = self.value(*a);
                    let mut ga = Tensor::zeros(t.rows, t.cols);
                    for r in 0..t.rows {
                        for c in 0..*len {
                            ga.data[r * t.cols + start + c] = g_ref.data[r * len + c];
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let t = self.value(*a);
                    let g = g_ref.data[0];
                    accumulate(&mut adj, *a, Tensor::from_vec(t.rows, t.cols, vec![g; t.rows * t.cols]));
                }
                Op::SumCols(a) => {
                    let t = self.value(*a);
                    let mut ga = Tensor::zeros(t.rows, t.cols);
                    for r in 0..t.rows {
                        for c in 0..t.cols {
                            ga.data[r * t.cols + c] = g_ref.data[r];
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Transpose(a) => {
                    accumulate(&mut adj, *a, g_ref.transpose());
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| {
                adj[w.0].clone().unwrap_or_else(|| {
                    let t = self.value(w);
                    Tensor::zeros(t.rows, t.cols)
                })
            })
            .collect())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut adj[id.0] {
        Some(existing) => {
            for (e, v) in existing.data.iter_mut().zip(g.data.iter()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
