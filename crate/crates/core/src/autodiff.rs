//! Reverse-mode differentiation over matrix-valued operations.
//!
//! A [`Tape`] records every operation of a forward pass together with its
//! value. [`Tape::backward`] then propagates adjoints from a scalar output
//! back to the parameter leaves registered through [`Tape::param`].

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{matmul_into, Mat};
use crate::params::ParamStore;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Ssp(Var),
    Exp(Var),
    Square(Var),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    Concat(Vec<Var>),
    MeanRows(Var),
    BroadcastRows(Var),
    Sum(Var),
}

struct Node {
    op: Op,
    value: Mat,
}

/// Shifted softplus, `ln(1 + eˣ) − ln 2`, zero at the origin.
#[inline]
pub fn ssp(x: f64) -> f64 {
    let sp = if x > 0.0 { x + libm::log1p(libm::exp(-x)) } else { libm::log1p(libm::exp(x)) };
    sp - core::f64::consts::LN_2
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Gradients for every block of a [`ParamStore`], indexed like the store.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub blocks: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { blocks: store.blocks().iter().map(|b| Mat::zeros(b.value.rows(), b.value.cols())).collect() }
    }

    pub fn add_scaled(&mut self, other: &Grads, s: f64) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += s * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(Mat::is_finite)
    }

    /// Euclidean norm over every block.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.blocks.iter().map(Mat::sum_sq).sum())
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm {
            let s = max_norm / norm;
            self.blocks.iter_mut().for_each(|b| b.as_mut_slice().iter_mut().for_each(|v| *v *= s));
        }
        norm
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(Op::Const, m)
    }

    /// Leaf for parameter block `id`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        if self.param_vars.len() <= id {
            self.param_vars.resize(id + 1, None);
        }
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(Op::Param(id), store.value(id).clone());
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul shape mismatch");
        let mut out = Mat::zeros(va.rows(), vb.cols());
        matmul_into(va, vb, &mut out);
        self.push(Op::MatMul(a, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    /// Adds the 1×c row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.rows(), 1);
        assert_eq!(va.cols(), vb.cols(), "add_row shape mismatch");
        let mut out = va.clone();
        for i in 0..out.rows() {
            for (o, &x) in out.row_mut(i).iter_mut().zip(vb.row(0)) {
                *o += x;
            }
        }
        self.push(Op::AddRow(a, b), out)
    }

    /// Scales row `i` of `a` by the scalar `s[i, 0]`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Var {
        let (va, vs) = (self.value(a), self.value(s));
        assert_eq!(vs.cols(), 1);
        assert_eq!(va.rows(), vs.rows(), "mul_col shape mismatch");
        let mut out = va.clone();
        for i in 0..out.rows() {
            let k = vs[(i, 0)];
            out.row_mut(i).iter_mut().for_each(|o| *o *= k);
        }
        self.push(Op::MulCol(a, s), out)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scale(k);
        self.push(Op::Scale(a, k), out)
    }

    pub fn ssp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ssp);
        self.push(Op::Ssp(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), out)
    }

    /// Row `k` of the output is row `idx[k]` of `a`.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let va = self.value(a);
        let mut out = Mat::zeros(idx.len(), va.cols());
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(va.row(i));
        }
        self.push(Op::Gather(a, idx), out)
    }

    /// Output has `n` rows; row `idx[k]` accumulates row `k` of `a`.
    pub fn scatter_add(&mut self, a: Var, idx: Vec<usize>, n: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.rows(), idx.len(), "scatter index length mismatch");
        let mut out = Mat::zeros(n, va.cols());
        for (k, &i) in idx.iter().enumerate() {
            for (o, &x) in out.row_mut(i).iter_mut().zip(va.row(k)) {
                *o += x;
            }
        }
        self.push(Op::ScatterAdd(a, idx), out)
    }

    /// Horizontal concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Mat::hcat(&mats);
        self.push(Op::Concat(parts.to_vec()), out)
    }

    /// Column means as a 1×c row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Mat::from_vec(1, va.cols(), va.col_mean());
        self.push(Op::MeanRows(a), out)
    }

    /// Repeats the 1×c row `a` into an n×c matrix.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.rows(), 1);
        let mut out = Mat::zeros(n, va.cols());
        for i in 0..n {
            out.row_mut(i).copy_from_slice(va.row(0));
        }
        self.push(Op::BroadcastRows(a), out)
    }

    /// Sum of all entries as a 1×1 matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Mat::from_vec(1, 1, vec![s]))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        self.sum(sq)
    }

    /// Subtracts the column mean from every row (zero centre of mass).
    pub fn center_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).rows();
        let m = self.mean_rows(a);
        let b = self.broadcast_rows(m, n);
        self.sub(a, b)
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m[(0, 0)]
    }

    /// Back-propagates from the scalar `out` and returns parameter gradients.
    pub fn backward(&self, out: Var, store: &ParamStore) -> Grads {
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[out.0] = Some(Mat::filled(1, 1, 1.0));
        let mut grads = Grads::zeros_like(store);

        for idx in (0..=out.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => grads.blocks[*id].add_assign(&g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let gb = Mat::from_vec(1, g.cols(), g.col_mean()).scale(g.rows() as f64);
                    accumulate(&mut adj, *b, gb);
                    accumulate(&mut adj, *a, g);
                }
                Op::MulCol(a, s) => {
                    let va = self.value(*a);
                    let vs = self.value(*s);
                    let mut gs = Mat::zeros(vs.rows(), 1);
                    let mut ga = g.clone();
                    for i in 0..g.rows() {
                        gs[(i, 0)] = crate::linalg::dot(g.row(i), va.row(i));
                        let k = vs[(i, 0)];
                        ga.row_mut(i).iter_mut().for_each(|x| *x *= k);
                    }
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *s, gs);
                }
                Op::Scale(a, k) => accumulate(&mut adj, *a, g.scale(*k)),
                Op::Ssp(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * y);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Gather(a, ix) => {
                    let va = self.value(*a);
                    let mut ga = Mat::zeros(va.rows(), va.cols());
                    for (k, &i) in ix.iter().enumerate() {
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::ScatterAdd(a, ix) => {
                    let mut ga = Mat::zeros(ix.len(), g.cols());
                    for (k, &i) in ix.iter().enumerate() {
                        ga.row_mut(k).copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut adj, p, g.cols_range(off, w));
                        off += w;
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows();
                    let mut ga = Mat::zeros(n, g.cols());
                    let inv = 1.0 / n as f64;
                    for i in 0..n {
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(0)) {
                            *o = x * inv;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    let ga = Mat::from_vec(1, g.cols(), g.col_mean()).scale(g.rows() as f64);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let va = self.value(*a);
                    accumulate(&mut adj, *a, Mat::filled(va.rows(), va.cols(), g[(0, 0)]));
                }
            }
        }
        grads
    }
}

fn accumulate(adj: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn fd_check(store: &mut ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Var) {
        let mut tape = Tape::new();
        let out = f(&mut tape, store);
        let grads = tape.backward(out, store);
        let h = 1e-6;
        for id in 0..store.len() {
            for k in 0..store.value(id).as_slice().len() {
                let orig = store.value(id).as_slice()[k];
                store.value_mut(id).as_mut_slice()[k] = orig + h;
                let mut tp = Tape::new();
                let v = f(&mut tp, store);
                let up = tp.scalar(v);
                store.value_mut(id).as_mut_slice()[k] = orig - h;
                let mut tm = Tape::new();
                let v = f(&mut tm, store);
                let dn = tm.scalar(v);
                store.value_mut(id).as_mut_slice()[k] = orig;
                let fd = (up - dn) / (2.0 * h);
                let an = grads.blocks[id].as_slice()[k];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "block {id}[{k}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut store = ParamStore::new();
        let w = store.push("w", Mat::from_rows(&[&[0.3, -0.2], &[0.1, 0.5], &[-0.7, 0.4]]));
        let b = store.push("b", Mat::from_rows(&[&[0.05, -0.1]]));
        let s = store.push("s", Mat::from_rows(&[&[0.9], &[-1.1], &[0.4], &[0.2]]));
        let x = Mat::from_rows(&[&[1.0, 2.0, -1.0], &[0.5, -0.3, 0.8]]);
        fd_check(&mut store, |tape, st| {
            let xv = tape.constant(x.clone());
            let wv = tape.param(st, w);
            let bv = tape.param(st, b);
            let sv = tape.param(st, s);
            let h = tape.matmul(xv, wv);
            let h = tape.add_row(h, bv);
            let h = tape.ssp(h);
            let g = tape.gather(h, alloc::vec![0, 1, 1, 0]);
            let g = tape.mul_col(g, sv);
            let e = tape.exp(g);
            let sc = tape.scatter_add(e, alloc::vec![1, 0, 1, 2], 3);
            let c = tape.concat(&[sc, sc]);
            let m = tape.mean_rows(c);
            let bc = tape.broadcast_rows(m, 2);
            let hh = tape.mul(h, h);
            let mixed = tape.concat(&[hh, h]);
            let d = tape.sub(bc, mixed);
            let d = tape.scale(d, 0.7);
            let cen = tape.center_rows(d);
            let a = tape.add(cen, d);
            tape.sum_sq(a)
        });
    }

    #[test]
    fn ssp_is_zero_at_origin_and_stable() {
        assert_eq!(ssp(0.0), 0.0);
        assert!((ssp(800.0) - (800.0 - core::f64::consts::LN_2)).abs() < 1e-9);
        assert!((ssp(-800.0) + core::f64::consts::LN_2).abs() < 1e-12);
    }
}
