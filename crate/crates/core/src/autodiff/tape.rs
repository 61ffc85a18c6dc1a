//! Reverse-mode recording over jet-valued nodes.
//!
//! Every node on the tape holds a whole [`Jet2`]. The backward pass carries a
//! six-component adjoint per node (one per jet slot), so a single sweep yields
//! parameter gradients of values *and* of coordinate derivatives such as
//! `u_xx`. This is what makes residual losses differentiable with respect to
//! grid cells and network weights.

use std::cell::RefCell;

use super::jet::{Jet2, Slot, PAIRS};
use super::ops::{affine_value, gather_value, JetOps};
use crate::error::{PixelError, Result};

/// Handle to a recorded node together with its forward value.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    val: Jet2,
}

impl Var {
    pub fn value(&self) -> Jet2 {
        self.val
    }
    pub fn index(&self) -> usize {
        self.idx as usize
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(u32),
    Param(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Sin(u32),
    Cos(u32),
    Tanh(u32),
    Exp(u32),
    Square(u32),
    Scale(u32, f64),
    Offset(u32, f64),
    Slot(u32, u8),
    /// Weights and indices live at `[start, start + len)` of the arenas.
    Gather { start: u32, len: u32, offset: u32 },
    /// Inputs live at `[links, links + len)` of the link arena.
    Affine { bias: u32, weights: u32, links: u32, len: u32 },
}

#[derive(Default)]
struct Inner {
    ops: Vec<Op>,
    vals: Vec<Jet2>,
    consts: Vec<Jet2>,
    weights: Vec<Jet2>,
    indices: Vec<u32>,
    links: Vec<u32>,
}

impl Inner {
    fn push(&mut self, op: Op, val: Jet2) -> Var {
        let idx = self.ops.len() as u32;
        self.ops.push(op);
        self.vals.push(val);
        Var { idx, val }
    }
}

/// Append-only operation record over a fixed parameter vector.
///
/// A tape has a single owner; concurrent loss evaluation uses one tape per
/// batch of points.
pub struct Tape<'p> {
    params: &'p [f64],
    inner: RefCell<Inner>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape { params, inner: RefCell::new(Inner::default()) }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grow every arena to hold `factor` times its current contents.
    pub fn reserve_scaled(&self, factor: usize) {
        let mut inner = self.inner.borrow_mut();
        let Inner { ops, vals, consts, weights, indices, links } = &mut *inner;
        ops.reserve(ops.len() * factor);
        vals.reserve(vals.len() * factor);
        consts.reserve(consts.len() * factor);
        weights.reserve(weights.len() * factor);
        indices.reserve(indices.len() * factor);
        links.reserve(links.len() * factor);
    }

    /// Recompute every node value from the recorded operations using
    /// `params`. With the recording parameters this reproduces the forward
    /// pass bit for bit.
    pub fn replay(&self, params: &[f64]) -> Result<Vec<Jet2>> {
        if params.len() != self.params.len() {
            return Err(PixelError::SizeMismatch { expected: self.params.len(), got: params.len() });
        }
        let inner = self.inner.borrow();
        let mut vals: Vec<Jet2> = Vec::with_capacity(inner.ops.len());
        for op in &inner.ops {
            let v = match *op {
                Op::Const(c) => inner.consts[c as usize],
                Op::Param(i) => Jet2::constant(params[i as usize]),
                Op::Add(a, b) => vals[a as usize] + vals[b as usize],
                Op::Sub(a, b) => vals[a as usize] - vals[b as usize],
                Op::Mul(a, b) => vals[a as usize].mul(vals[b as usize]),
                Op::Div(a, b) => vals[a as usize].div(vals[b as usize])?,
                Op::Neg(a) => -vals[a as usize],
                Op::Sin(a) => vals[a as usize].sin(),
                Op::Cos(a) => vals[a as usize].cos(),
                Op::Tanh(a) => vals[a as usize].tanh(),
                Op::Exp(a) => vals[a as usize].exp(),
                Op::Square(a) => vals[a as usize].square(),
                Op::Scale(a, k) => vals[a as usize].scale(k),
                Op::Offset(a, k) => vals[a as usize].offset(k),
                Op::Slot(a, s) => Jet2::constant(vals[a as usize].to_array()[s as usize]),
                Op::Gather { start, len, offset } => {
                    let r = start as usize..(start + len) as usize;
                    gather_value(params, &inner.weights[r.clone()], &inner.indices[r], offset as usize)
                }
                Op::Affine { bias, weights, links, len } => {
                    let r = links as usize..(links + len) as usize;
                    affine_value(
                        params,
                        bias as usize,
                        weights as usize,
                        inner.links[r].iter().map(|&l| vals[l as usize]),
                    )
                }
            };
            vals.push(v);
        }
        Ok(vals)
    }

    /// Gradient of the value slot of `output` with respect to all parameters.
    pub fn gradient(&self, output: Var) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&[(output, 1.0)], &mut grad)?;
        Ok(grad)
    }

    /// Accumulate `Σ_k seed_k · ∂(value of node_k)/∂p` into `grad`.
    pub fn backward(&self, seeds: &[(Var, f64)], grad: &mut [f64]) -> Result<()> {
        let adj_seeds: Vec<(Var, [f64; 6])> =
            seeds.iter().map(|&(v, w)| (v, [w, 0.0, 0.0, 0.0, 0.0, 0.0])).collect();
        self.backward_jets(&adj_seeds, grad)
    }

    /// Backward pass with full six-slot adjoint seeds.
    ///
    /// Nodes are visited in strict reverse recording order, which is a
    /// reverse topological order; accumulation order is therefore fixed and
    /// repeated calls are bit-identical.
    pub fn backward_jets(&self, seeds: &[(Var, [f64; 6])], grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(PixelError::SizeMismatch { expected: self.params.len(), got: grad.len() });
        }
        let inner = self.inner.borrow();
        let n = inner.ops.len();
        let mut adj = vec![[0.0f64; 6]; n];
        for (v, s) in seeds {
            let a = &mut adj[v.idx as usize];
            for k in 0..6 {
                a[k] += s[k];
            }
        }
        let vals = &inner.vals;
        for node in (0..n).rev() {
            let z = adj[node];
            if z.iter().all(|&v| v == 0.0) {
                continue;
            }
            match inner.ops[node] {
                Op::Const(_) => {}
                Op::Param(i) => grad[i as usize] += z[0],
                Op::Add(a, b) => {
                    add_into(&mut adj[a as usize], &z, 1.0);
                    add_into(&mut adj[b as usize], &z, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(&mut adj[a as usize], &z, 1.0);
                    add_into(&mut adj[b as usize], &z, -1.0);
                }
                Op::Neg(a) => add_into(&mut adj[a as usize], &z, -1.0),
                Op::Scale(a, k) => add_into(&mut adj[a as usize], &z, k),
                Op::Offset(a, _) => add_into(&mut adj[a as usize], &z, 1.0),
                Op::Mul(a, b) => {
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    let da = mul_vjp(&z, &vb);
                    let db = mul_vjp(&z, &va);
                    add_into(&mut adj[a as usize], &da, 1.0);
                    add_into(&mut adj[b as usize], &db, 1.0);
                }
                Op::Div(a, b) => {
                    // a / b = a · r with r = 1/b.
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    let r = 1.0 / vb.val;
                    let vr = vb.chain(r, -r * r, 2.0 * r * r * r);
                    let da = mul_vjp(&z, &vr);
                    let dr = mul_vjp(&z, &va);
                    let db = chain_vjp(&dr, &vb, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r);
                    add_into(&mut adj[a as usize], &da, 1.0);
                    add_into(&mut adj[b as usize], &db, 1.0);
                }
                Op::Sin(a) => {
                    let va = vals[a as usize];
                    let (s, c) = va.val.sin_cos();
                    let da = chain_vjp(&z, &va, c, -s, -c);
                    add_into(&mut adj[a as usize], &da, 1.0);
                }
                Op::Cos(a) => {
                    let va = vals[a as usize];
                    let (s, c) = va.val.sin_cos();
                    let da = chain_vjp(&z, &va, -s, -c, s);
                    add_into(&mut adj[a as usize], &da, 1.0);
                }
                Op::Tanh(a) => {
                    let va = vals[a as usize];
                    let y = vals[node].val;
                    let d = 1.0 - y * y;
                    let da = chain_vjp(&z, &va, d, -2.0 * y * d, d * (6.0 * y * y - 2.0));
                    add_into(&mut adj[a as usize], &da, 1.0);
                }
                Op::Exp(a) => {
                    let va = vals[a as usize];
                    let e = vals[node].val;
                    let da = chain_vjp(&z, &va, e, e, e);
                    add_into(&mut adj[a as usize], &da, 1.0);
                }
                Op::Square(a) => {
                    let va = vals[a as usize];
                    let da = chain_vjp(&z, &va, 2.0 * va.val, 2.0, 0.0);
                    add_into(&mut adj[a as usize], &da, 1.0);
                }
                Op::Slot(a, s) => adj[a as usize][s as usize] += z[0],
                Op::Gather { start, len, offset } => {
                    let r = start as usize..(start + len) as usize;
                    for (w, &i) in inner.weights[r.clone()].iter().zip(&inner.indices[r]) {
                        grad[i as usize + offset as usize] += dot6(&z, &w.to_array());
                    }
                }
                Op::Affine { bias, weights, links, len } => {
                    grad[bias as usize] += z[0];
                    let r = links as usize..(links + len) as usize;
                    for (k, &l) in inner.links[r].iter().enumerate() {
                        let w = self.params[weights as usize + k];
                        grad[weights as usize + k] += dot6(&z, &vals[l as usize].to_array());
                        add_into(&mut adj[l as usize], &z, w);
                    }
                }
            }
        }
        Ok(())
    }

    fn record(&self, op: Op, val: Jet2) -> Var {
        self.inner.borrow_mut().push(op, val)
    }
}

#[inline]
fn add_into(dst: &mut [f64; 6], src: &[f64; 6], k: f64) {
    for s in 0..6 {
        dst[s] += k * src[s];
    }
}

#[inline]
fn dot6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adjoint of `a` for `z = a · b`, given the adjoint of `z` and the value of `b`.
#[inline]
fn mul_vjp(z: &[f64; 6], b: &Jet2) -> [f64; 6] {
    let zg = [z[1], z[2]];
    let zh = [z[3], z[4], z[5]];
    let mut out = [0.0; 6];
    out[0] = z[0] * b.val + zg[0] * b.d1[0] + zg[1] * b.d1[1]
        + zh[0] * b.d2[0] + zh[1] * b.d2[1] + zh[2] * b.d2[2];
    for i in 0..2 {
        let mut g = zg[i] * b.val;
        for (k, &(p, q)) in PAIRS.iter().enumerate() {
            if p == i {
                g += zh[k] * b.d1[q];
            }
            if q == i {
                g += zh[k] * b.d1[p];
            }
        }
        out[1 + i] = g;
    }
    for k in 0..3 {
        out[3 + k] = zh[k] * b.val;
    }
    out
}

/// Adjoint of `a` for `z = f(a)` with `f1..f3` the derivatives of `f` at `a.val`.
#[inline]
fn chain_vjp(z: &[f64; 6], a: &Jet2, f1: f64, f2: f64, f3: f64) -> [f64; 6] {
    let g = a.d1;
    let zg = [z[1], z[2]];
    let zh = [z[3], z[4], z[5]];
    let mut out = [0.0; 6];
    let mut v = z[0] * f1 + f2 * (zg[0] * g[0] + zg[1] * g[1]);
    for (k, &(p, q)) in PAIRS.iter().enumerate() {
        v += zh[k] * (f2 * a.d2[k] + f3 * g[p] * g[q]);
    }
    out[0] = v;
    for i in 0..2 {
        let mut d = zg[i] * f1;
        for (k, &(p, q)) in PAIRS.iter().enumerate() {
            if p == i {
                d += zh[k] * f2 * g[q];
            }
            if q == i {
                d += zh[k] * f2 * g[p];
            }
        }
        out[1 + i] = d;
    }
    for k in 0..3 {
        out[3 + k] = zh[k] * f1;
    }
    out
}

impl JetOps for Tape<'_> {
    type V = Var;

    fn jet(&self, v: &Var) -> Jet2 {
        v.val
    }

    fn constant(&self, j: Jet2) -> Var {
        let mut inner = self.inner.borrow_mut();
        let c = inner.consts.len() as u32;
        inner.consts.push(j);
        inner.push(Op::Const(c), j)
    }

    fn param(&self, i: usize) -> Var {
        self.record(Op::Param(i as u32), Jet2::constant(self.params[i]))
    }

    fn add(&self, a: Var, b: Var) -> Var {
        self.record(Op::Add(a.idx, b.idx), a.val + b.val)
    }
    fn sub(&self, a: Var, b: Var) -> Var {
        self.record(Op::Sub(a.idx, b.idx), a.val - b.val)
    }
    fn mul(&self, a: Var, b: Var) -> Var {
        self.record(Op::Mul(a.idx, b.idx), a.val.mul(b.val))
    }
    fn div(&self, a: Var, b: Var) -> Result<Var> {
        let v = a.val.div(b.val)?;
        Ok(self.record(Op::Div(a.idx, b.idx), v))
    }
    fn neg(&self, a: Var) -> Var {
        self.record(Op::Neg(a.idx), -a.val)
    }
    fn sin(&self, a: Var) -> Var {
        self.record(Op::Sin(a.idx), a.val.sin())
    }
    fn cos(&self, a: Var) -> Var {
        self.record(Op::Cos(a.idx), a.val.cos())
    }
    fn tanh(&self, a: Var) -> Var {
        self.record(Op::Tanh(a.idx), a.val.tanh())
    }
    fn exp(&self, a: Var) -> Var {
        self.record(Op::Exp(a.idx), a.val.exp())
    }
    fn square(&self, a: Var) -> Var {
        self.record(Op::Square(a.idx), a.val.square())
    }
    fn scale(&self, a: Var, k: f64) -> Var {
        self.record(Op::Scale(a.idx, k), a.val.scale(k))
    }
    fn offset(&self, a: Var, k: f64) -> Var {
        self.record(Op::Offset(a.idx, k), a.val.offset(k))
    }
    fn slot(&self, a: Var, s: Slot) -> Var {
        self.record(Op::Slot(a.idx, s.index() as u8), Jet2::constant(a.val.get(s)))
    }

    fn gather(&self, weights: &[Jet2], indices: &[u32], offsets: &[usize], out: &mut Vec<Var>) {
        debug_assert_eq!(weights.len(), indices.len());
        let mut inner = self.inner.borrow_mut();
        let start = inner.weights.len() as u32;
        inner.weights.extend_from_slice(weights);
        inner.indices.extend_from_slice(indices);
        for &o in offsets {
            let v = gather_value(self.params, weights, indices, o);
            let op = Op::Gather { start, len: weights.len() as u32, offset: o as u32 };
            out.push(inner.push(op, v));
        }
    }

    fn affine(&self, bias: usize, weights: usize, inputs: &[Var]) -> Var {
        let v = affine_value(self.params, bias, weights, inputs.iter().map(|x| x.val));
        let mut inner = self.inner.borrow_mut();
        let links = inner.links.len() as u32;
        inner.links.extend(inputs.iter().map(|x| x.idx));
        let op = Op::Affine {
            bias: bias as u32,
            weights: weights as u32,
            links,
            len: inputs.len() as u32,
        };
        inner.push(op, v)
    }
}

/// Value and gradient of a scalar built on a fresh tape.
///
/// `f` records its computation on the tape and returns the output node; the
/// gradient is taken of that node's value slot.
pub fn grad<F>(params: &[f64], f: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&Tape) -> Result<Var>,
{
    let tape = Tape::new(params);
    let out = f(&tape)?;
    let g = tape.gradient(out)?;
    Ok((out.val.val, g))
}
