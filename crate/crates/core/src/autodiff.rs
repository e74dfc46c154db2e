//! A define-by-run reverse-mode tape over [`Matrix`] values.
//!
//! Each operation appends a node holding its forward value and whatever it
//! needs for the backward pass. Nodes only track gradients when at least one
//! input does, so constant inputs (clips, labels, detached features) cost
//! nothing on the way back.

use crate::error::Result;
use crate::hsic::{hsic_biased_with_grad, KernelSpec};
use crate::scalar::Scalar;
use crate::tensor::{dot, log_sum_exp, softmax_in_place, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    AddTiled(Var, Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
    },
    Attention {
        qkv: Var,
        heads: usize,
        group: usize,
        probs: Vec<T>,
    },
    GroupMean(Var, usize),
    Reverse(Var, T),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix<T>,
    },
    SoftKl {
        logits: Var,
        target: Matrix<T>,
        probs: Matrix<T>,
    },
    Hsic {
        x: Var,
        y: Var,
        grad_x: Matrix<T>,
        grad_y: Matrix<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when no gradient reached `v`.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when none reached it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a + bias` with a `1 x m` bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (x, &b) in value.row_mut(i).iter_mut().zip(bv.row(0)) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        self.push(value, Op::AddBias(a, bias), rg)
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Adds the `p x m` matrix `pattern` to every consecutive block of `p` rows.
    pub fn add_tiled(&mut self, a: Var, pattern: Var) -> Var {
        let (av, pv) = (self.value(a), self.value(pattern));
        let p = pv.rows();
        assert_eq!(av.cols(), pv.cols(), "tiled add width mismatch");
        assert_eq!(av.rows() % p, 0, "rows not a multiple of the tile period");
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (x, &b) in value.row_mut(i).iter_mut().zip(pv.row(i % p)) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, pattern]);
        self.push(value, Op::AddTiled(a, pattern), rg)
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (c, k) = (T::lit(GELU_C), T::lit(GELU_A));
        let half = T::lit(0.5);
        let value = self
            .value(a)
            .map(|x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        let rg = self.rg(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (`1 x m`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.shape();
        let mf = T::from_usize(m).unwrap();
        let eps = T::lit(LN_EPS);
        let mut xhat = Matrix::zeros(n, m);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / mf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (h, &v) in xhat.row_mut(i).iter_mut().zip(row) {
                *h = (v - mean) * inv;
            }
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut value = xhat.clone();
        for i in 0..n {
            for ((y, &gg), &bb) in value.row_mut(i).iter_mut().zip(g.row(0)).zip(b.row(0)) {
                *y = *y * gg + bb;
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` is `n x 3d` with queries, keys and values side by side. Rows are
    /// split into consecutive groups of `group` tokens that attend only within
    /// their group. Returns the `n x d` concatenated head outputs.
    pub fn attention(&mut self, qkv: Var, heads: usize, group: usize) -> Var {
        let qv = self.value(qkv);
        let (n, w) = qv.shape();
        assert_eq!(w % 3, 0, "qkv width must be a multiple of 3");
        let d = w / 3;
        assert_eq!(d % heads, 0, "width not divisible by heads");
        assert_eq!(n % group, 0, "rows not divisible by attention group");
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let groups = n / group;
        let mut probs = vec![T::zero(); groups * heads * group * group];
        let mut out = Matrix::zeros(n, d);
        let mut scores = vec![T::zero(); group];
        for gi in 0..groups {
            let base = gi * group;
            for h in 0..heads {
                let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                let pbase = ((gi * heads) + h) * group * group;
                for i in 0..group {
                    let q = &qv.row(base + i)[qo..qo + dh];
                    for (j, s) in scores.iter_mut().enumerate() {
                        *s = dot(q, &qv.row(base + j)[ko..ko + dh]) * scale;
                    }
                    softmax_in_place(&mut scores);
                    probs[pbase + i * group..pbase + (i + 1) * group].copy_from_slice(&scores);
                    let orow = &mut out.row_mut(base + i)[h * dh..(h + 1) * dh];
                    for (j, &p) in scores.iter().enumerate() {
                        let v = &qv.row(base + j)[vo..vo + dh];
                        for (o, &vv) in orow.iter_mut().zip(v) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[qkv]);
        self.push(
            out,
            Op::Attention {
                qkv,
                heads,
                group,
                probs,
            },
            rg,
        )
    }

    /// Mean over consecutive blocks of `group` rows.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Var {
        let av = self.value(a);
        let (n, m) = av.shape();
        assert!(group > 0 && n % group == 0, "rows not divisible by group");
        let inv = T::one() / T::from_usize(group).unwrap();
        let mut value = Matrix::zeros(n / group, m);
        for r in 0..n / group {
            let out = value.row_mut(r);
            for i in r * group..(r + 1) * group {
                for (o, &x) in out.iter_mut().zip(av.row(i)) {
                    *o += x;
                }
            }
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::GroupMean(a, group), rg)
    }

    /// Gradient reversal: identity forward, gradient scaled by `-strength`
    /// on the way back.
    pub fn grl(&mut self, a: Var, strength: T) -> Var {
        let value = self.value(a).clone();
        let rg = self.rg(&[a]);
        self.push(value, Op::Reverse(a, strength), rg)
    }

    /// Mean cross-entropy of row-wise logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), labels.len(), "one label per row");
        let n = T::from_usize(labels.len()).unwrap();
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            total += log_sum_exp(row) - row[y];
        }
        let probs = lv.softmax_rows();
        let rg = self.rg(&[logits]);
        self.push(
            Matrix::scalar(total / n),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Mean over rows of `KL(target || softmax(logits))`.
    pub fn soft_kl(&mut self, logits: Var, target: &Matrix<T>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.shape(), target.shape(), "soft target shape mismatch");
        let value = kl_rows(lv, target);
        let probs = lv.softmax_rows();
        let rg = self.rg(&[logits]);
        self.push(
            Matrix::scalar(value),
            Op::SoftKl {
                logits,
                target: target.clone(),
                probs,
            },
            rg,
        )
    }

    /// Biased HSIC between the row sets of `x` and `y`.
    pub fn hsic(&mut self, x: Var, y: Var, kx: &KernelSpec, ky: &KernelSpec) -> Result<Var> {
        let r = hsic_biased_with_grad(self.value(x), self.value(y), kx, ky)?;
        let rg = self.rg(&[x, y]);
        Ok(self.push(
            Matrix::scalar(r.value),
            Op::Hsic {
                x,
                y,
                grad_x: r.grad_x,
                grad_y: r.grad_y,
            },
            rg,
        ))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let mut acc = |v: Var, delta: Matrix<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(*a, g.matmul_nt(self.value(*b)));
                }
                if needs(*b) {
                    acc(*b, self.value(*a).matmul_tn(g));
                }
            }
            Op::AddBias(a, bias) => {
                if needs(*bias) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, &x) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    acc(*bias, db);
                }
                acc(*a, g.clone());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::AddTiled(a, pattern) => {
                if needs(*pattern) {
                    let p = self.value(*pattern).rows();
                    let mut dp = Matrix::zeros(p, g.cols());
                    for i in 0..g.rows() {
                        for (d, &x) in dp.row_mut(i % p).iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    acc(*pattern, dp);
                }
                acc(*a, g.clone());
            }
            Op::Gelu(a) => {
                let (c, k) = (T::lit(GELU_C), T::lit(GELU_A));
                let (half, three) = (T::lit(0.5), T::lit(3.0));
                let xv = self.value(*a);
                let mut dx = g.clone();
                for (d, &x) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let deriv = half * (T::one() + t)
                        + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x);
                    *d *= deriv;
                }
                acc(*a, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, m) = xhat.shape();
                let gv = self.value(*gamma);
                if needs(*gamma) || needs(*beta) {
                    let mut dg = Matrix::zeros(1, m);
                    let mut db = Matrix::zeros(1, m);
                    for i in 0..n {
                        for j in 0..m {
                            dg[(0, j)] += g[(i, j)] * xhat[(i, j)];
                            db[(0, j)] += g[(i, j)];
                        }
                    }
                    acc(*gamma, dg);
                    acc(*beta, db);
                }
                if needs(*x) {
                    let mf = T::from_usize(m).unwrap();
                    let mut dx = Matrix::zeros(n, m);
                    let mut dxhat = vec![T::zero(); m];
                    for i in 0..n {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..m {
                            dxhat[j] = g[(i, j)] * gv[(0, j)];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xhat[(i, j)];
                        }
                        let inv = inv_std[i] / mf;
                        for j in 0..m {
                            dx[(i, j)] = inv * (mf * dxhat[j] - s1 - xhat[(i, j)] * s2);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::Attention {
                qkv,
                heads,
                group,
                probs,
            } => {
                let (heads, group) = (*heads, *group);
                let qv = self.value(*qkv);
                let (n, w) = qv.shape();
                let d = w / 3;
                let dh = d / heads;
                let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
                let mut dqkv = Matrix::zeros(n, w);
                let mut dp = vec![T::zero(); group];
                let mut dq = vec![T::zero(); group * dh];
                let mut dk = vec![T::zero(); group * dh];
                let mut dv = vec![T::zero(); group * dh];
                for gi in 0..n / group {
                    let base = gi * group;
                    for h in 0..heads {
                        let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                        let pbase = ((gi * heads) + h) * group * group;
                        dq.fill(T::zero());
                        dk.fill(T::zero());
                        dv.fill(T::zero());
                        for i in 0..group {
                            let p = &probs[pbase + i * group..pbase + (i + 1) * group];
                            let dout = &g.row(base + i)[h * dh..(h + 1) * dh];
                            let qi = &qv.row(base + i)[qo..qo + dh];
                            for (j, slot) in dp.iter_mut().enumerate() {
                                *slot = dot(dout, &qv.row(base + j)[vo..vo + dh]);
                            }
                            let pdp: T = p.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                            let dqi = &mut dq[i * dh..(i + 1) * dh];
                            for j in 0..group {
                                let pij = p[j];
                                for (t, &o) in dv[j * dh..(j + 1) * dh].iter_mut().zip(dout) {
                                    *t += pij * o;
                                }
                                let ds = pij * (dp[j] - pdp) * scale;
                                let kj = &qv.row(base + j)[ko..ko + dh];
                                for (t, &kk) in dqi.iter_mut().zip(kj) {
                                    *t += ds * kk;
                                }
                                for (t, &qq) in dk[j * dh..(j + 1) * dh].iter_mut().zip(qi) {
                                    *t += ds * qq;
                                }
                            }
                        }
                        for i in 0..group {
                            let row = dqkv.row_mut(base + i);
                            row[qo..qo + dh].copy_from_slice(&dq[i * dh..(i + 1) * dh]);
                            row[ko..ko + dh].copy_from_slice(&dk[i * dh..(i + 1) * dh]);
                            row[vo..vo + dh].copy_from_slice(&dv[i * dh..(i + 1) * dh]);
                        }
                    }
                }
                acc(*qkv, dqkv);
            }
            Op::GroupMean(a, group) => {
                let group = *group;
                let (n, m) = self.value(*a).shape();
                let inv = T::one() / T::from_usize(group).unwrap();
                let mut dx = Matrix::zeros(n, m);
                for i in 0..n {
                    for (d, &x) in dx.row_mut(i).iter_mut().zip(g.row(i / group)) {
                        *d = x * inv;
                    }
                }
                acc(*a, dx);
            }
            Op::Reverse(a, strength) => acc(*a, g.scale(-*strength)),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let upstream = g.item() / T::from_usize(labels.len()).unwrap();
                let mut dz = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    dz[(i, y)] -= T::one();
                }
                acc(*logits, dz.scale(upstream));
            }
            Op::SoftKl {
                logits,
                target,
                probs,
            } => {
                let upstream = g.item() / T::from_usize(target.rows()).unwrap();
                acc(*logits, probs.sub(target).scale(upstream));
            }
            Op::Hsic {
                x,
                y,
                grad_x,
                grad_y,
            } => {
                let upstream = g.item();
                if needs(*x) {
                    acc(*x, grad_x.scale(upstream));
                }
                if needs(*y) {
                    acc(*y, grad_y.scale(upstream));
                }
            }
        }
    }
}

/// Mean over rows of `sum_j p_j (ln p_j - ln softmax(z)_j)`, with `0 ln 0 = 0`.
pub(crate) fn kl_rows<T: Scalar>(logits: &Matrix<T>, target: &Matrix<T>) -> T {
    let mut total = T::zero();
    for i in 0..logits.rows() {
        let z = logits.row(i);
        let lse = log_sum_exp(z);
        for (&p, &zj) in target.row(i).iter().zip(z) {
            if p > T::zero() {
                total += p * (p.ln() - (zj - lse));
            }
        }
    }
    total / T::from_usize(logits.rows()).unwrap()
}
