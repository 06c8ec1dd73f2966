use super::gemm::{gemm, GemmOp};
use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::gates::GateSpec;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Element> {
    Leaf,
    /// `a · b`, or `a · bᵀ` when `trans_b`.
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    /// Adds a length-h vector to every row of a batch×h matrix.
    AddRowBias {
        x: Var,
        bias: Var,
    },
    /// Pointwise map; the derivative at each element is saved during forward.
    Unary {
        a: Var,
        deriv: Vec<T>,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only computation graph. Node inputs always precede the node.
#[derive(Debug, Default)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    parallel: bool,
    consumed: bool,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            parallel: false,
            consumed: false,
        }
    }

    /// Split matmul rows across rayon workers. Off by default (deterministic).
    pub fn with_parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn output(&self, shape: Vec<usize>, data: Vec<T>, inputs: &[Var]) -> Tensor<T> {
        let rg = inputs.iter().any(|&v| self.needs_grad(v));
        Tensor {
            shape,
            data,
            requires_grad: rg,
            grad: None,
        }
    }

    /// Add a tensor as a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, mut t: Tensor<T>) -> Var {
        t.grad = None;
        self.push(t, Op::Leaf)
    }

    /// Add a trainable leaf (copied, `requires_grad = true`).
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        let mut t = t.clone();
        t.requires_grad = true;
        self.leaf(t)
    }

    /// Add a constant leaf (`requires_grad = false`).
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v`, if any.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dims(op, sa, sb));
        }
        Ok(())
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · bᵀ` with `b` stored as `[n×k]` (row-major weight layout).
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let name = if trans_b { "matmul_bt" } else { "matmul" };
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        let (m, k, n) = match (&sa[..], &sb[..], trans_b) {
            (&[m, k], &[k2, n], false) if k == k2 => (m, k, n),
            (&[m, k], &[n, k2], true) if k == k2 => (m, k, n),
            _ => return Err(Error::dims(name, &sa, &sb)),
        };
        let mut out = vec![T::ZERO; m * n];
        let op_b = if trans_b { GemmOp::T } else { GemmOp::N };
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            GemmOp::N,
            self.value(b).data(),
            op_b,
            &mut out,
            false,
            self.parallel,
        );
        let t = self.output(vec![m, n], out, &[a, b]);
        Ok(self.push(t, Op::MatMul { a, b, trans_b }))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.output(self.value(a).shape().to_vec(), data, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        let t = self.output(self.value(a).shape().to_vec(), data, &[a]);
        self.push(t, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x + s).collect();
        let t = self.output(self.value(a).shape().to_vec(), data, &[a]);
        self.push(t, Op::AddScalar(a))
    }

    /// `x[b×h] + bias[h]` applied row by row.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        let h = match (&sx[..], &sb[..]) {
            (&[_, h], &[h2]) if h == h2 => h,
            _ => return Err(Error::dims("add_row_bias", &sx, &sb)),
        };
        let bv = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(h.max(1))
            .flat_map(|row| row.iter().zip(bv).map(|(&a, &b)| a + b))
            .collect();
        let t = self.output(sx, data, &[x, bias]);
        Ok(self.push(t, Op::AddRowBias { x, bias }))
    }

    /// Pointwise map. `f` returns `(value, derivative)` evaluated in `f64`.
    pub fn map_unary(&mut self, a: Var, f: impl Fn(f64) -> (f64, f64)) -> Var {
        let keep = self.needs_grad(a);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(src.len());
        let mut deriv = Vec::with_capacity(if keep { src.len() } else { 0 });
        for &x in src {
            let (y, dy) = f(x.to_f64());
            data.push(T::from_f64(y));
            if keep {
                deriv.push(T::from_f64(dy));
            }
        }
        let t = self.output(self.value(a).shape().to_vec(), data, &[a]);
        self.push(t, Op::Unary { a, deriv })
    }

    /// Apply a gate function elementwise.
    pub fn gate(&mut self, a: Var, spec: &GateSpec) -> Var {
        let spec = *spec;
        self.map_unary(a, move |x| spec.eval(x))
    }

    /// Sum of all elements (accumulated in `f64`), as a scalar node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|v| v.to_f64()).sum();
        let t = self.output(vec![], vec![T::from_f64(s)], &[a]);
        self.push(t, Op::Sum(a))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = self.value(logits).dims2()?;
        if batch == 0 {
            return Err(Error::Contract("cross-entropy over an empty batch".into()));
        }
        if labels.len() != batch {
            return Err(Error::dims("softmax_cross_entropy", &[batch], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                bound: classes,
            });
        }
        let z = self.value(logits).data();
        let mut probs = Vec::with_capacity(z.len());
        let mut total = 0.0f64;
        for (row, &label) in z.chunks(classes).zip(labels) {
            let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
            let norm: f64 = exps.iter().sum();
            total += norm.ln() - (row[label].to_f64() - max);
            probs.extend(exps.iter().map(|e| T::from_f64(e / norm)));
        }
        let loss = total / batch as f64;
        let t = self.output(vec![], vec![T::from_f64(loss)], &[logits]);
        Ok(self.push(
            t,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Populate gradients of `root` with respect to every node that requires one.
    ///
    /// A graph can be differentiated once; build a new graph for the next step.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be a scalar, got shape {:?}",
                rv.shape()
            )));
        }
        if !rv.requires_grad {
            return Err(Error::Contract(
                "backward root does not depend on any tensor requiring grad".into(),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::ONE]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b, trans_b } => {
                    let (m, n) = node.value.dims2()?;
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let k = va.shape()[1];
                    if va.requires_grad {
                        // dA = dC · Bᵀ   (or dC · B when C = A·Bᵀ)
                        let op_b = if *trans_b { GemmOp::N } else { GemmOp::T };
                        let ga = slot(&mut grads, *a, m * k);
                        gemm(m, n, k, &g, GemmOp::N, vb.data(), op_b, ga, true, self.parallel);
                    }
                    if vb.requires_grad {
                        if *trans_b {
                            // dB[n×k] = dCᵀ · A
                            let gb = slot(&mut grads, *b, n * k);
                            gemm(n, m, k, &g, GemmOp::T, va.data(), GemmOp::N, gb, true, self.parallel);
                        } else {
                            // dB[k×n] = Aᵀ · dC
                            let gb = slot(&mut grads, *b, k * n);
                            gemm(k, m, n, va.data(), GemmOp::T, &g, GemmOp::N, gb, true, self.parallel);
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let negate_b = matches!(node.op, Op::Sub(..));
                    if self.needs_grad(*a) {
                        accumulate(slot(&mut grads, *a, g.len()), &g, |x| x);
                    }
                    if self.needs_grad(*b) {
                        if negate_b {
                            accumulate(slot(&mut grads, *b, g.len()), &g, |x| -x);
                        } else {
                            accumulate(slot(&mut grads, *b, g.len()), &g, |x| x);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs_grad(a) {
                        let other = self.nodes[b.0].value.data();
                        let ga = slot(&mut grads, a, g.len());
                        for ((d, &gi), &o) in ga.iter_mut().zip(&g).zip(other) {
                            *d += gi * o;
                        }
                    }
                    if self.needs_grad(b) {
                        let other = self.nodes[a.0].value.data();
                        let gb = slot(&mut grads, b, g.len());
                        for ((d, &gi), &o) in gb.iter_mut().zip(&g).zip(other) {
                            *d += gi * o;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if self.needs_grad(*a) {
                        let s = *s;
                        accumulate(slot(&mut grads, *a, g.len()), &g, |x| x * s);
                    }
                }
                Op::AddScalar(a) => {
                    if self.needs_grad(*a) {
                        accumulate(slot(&mut grads, *a, g.len()), &g, |x| x);
                    }
                }
                Op::AddRowBias { x, bias } => {
                    if self.needs_grad(*x) {
                        accumulate(slot(&mut grads, *x, g.len()), &g, |v| v);
                    }
                    if self.needs_grad(*bias) {
                        let h = self.nodes[bias.0].value.len();
                        let mut col = vec![0.0f64; h];
                        for row in g.chunks(h.max(1)) {
                            for (c, v) in col.iter_mut().zip(row) {
                                *c += v.to_f64();
                            }
                        }
                        let gb = slot(&mut grads, *bias, h);
                        for (d, c) in gb.iter_mut().zip(col) {
                            *d += T::from_f64(c);
                        }
                    }
                }
                Op::Unary { a, deriv } => {
                    if self.needs_grad(*a) {
                        let ga = slot(&mut grads, *a, g.len());
                        for ((d, &gi), &di) in ga.iter_mut().zip(&g).zip(deriv) {
                            *d += gi * di;
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.needs_grad(*a) {
                        let n = self.nodes[a.0].value.len();
                        let g0 = g[0];
                        for d in slot(&mut grads, *a, n).iter_mut() {
                            *d += g0;
                        }
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    labels,
                } => {
                    if self.needs_grad(*logits) {
                        let batch = labels.len();
                        let classes = probs.len() / batch;
                        let scale = g[0].to_f64() / batch as f64;
                        let gl = slot(&mut grads, *logits, probs.len());
                        for (r, &label) in labels.iter().enumerate() {
                            for c in 0..classes {
                                let onehot = if c == label { 1.0 } else { 0.0 };
                                let p = probs[r * classes + c].to_f64();
                                gl[r * classes + c] += T::from_f64((p - onehot) * scale);
                            }
                        }
                    }
                }
            }
            self.nodes[i].value.set_grad(g);
        }
        Ok(())
    }
}

fn slot<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::ZERO; len])
}

fn accumulate<T: Element>(dst: &mut [T], src: &[T], f: impl Fn(T) -> T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += f(s);
    }
}
