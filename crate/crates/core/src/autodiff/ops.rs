use super::jet::{Jet2, Slot};
use crate::error::Result;

/// Jet arithmetic over a parameter vector.
///
/// Model code is written once against this trait. [`Eval`] computes plain
/// jets; [`Tape`](super::Tape) additionally records every operation so the
/// result can be differentiated with respect to the parameters.
pub trait JetOps {
    type V: Copy;

    fn jet(&self, v: &Self::V) -> Jet2;
    fn constant(&self, j: Jet2) -> Self::V;
    /// Parameter `i` as a jet with zero coordinate derivatives.
    fn param(&self, i: usize) -> Self::V;

    fn add(&self, a: Self::V, b: Self::V) -> Self::V;
    fn sub(&self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&self, a: Self::V, b: Self::V) -> Self::V;
    fn div(&self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn neg(&self, a: Self::V) -> Self::V;
    fn sin(&self, a: Self::V) -> Self::V;
    fn cos(&self, a: Self::V) -> Self::V;
    fn tanh(&self, a: Self::V) -> Self::V;
    fn exp(&self, a: Self::V) -> Self::V;
    fn square(&self, a: Self::V) -> Self::V;
    fn scale(&self, a: Self::V, k: f64) -> Self::V;
    fn offset(&self, a: Self::V, k: f64) -> Self::V;

    /// One component of `a` promoted to a jet with zero derivatives.
    fn slot(&self, a: Self::V, s: Slot) -> Self::V;

    /// For each offset `o`, pushes `Σ_k weights[k] · p[indices[k] + o]`.
    ///
    /// The weights are constant jets; the parameters enter linearly.
    fn gather(&self, weights: &[Jet2], indices: &[u32], offsets: &[usize], out: &mut Vec<Self::V>);

    /// `p[bias] + Σ_k p[weights + k] · inputs[k]`.
    fn affine(&self, bias: usize, weights: usize, inputs: &[Self::V]) -> Self::V;
}

/// Plain evaluation with no recording.
#[derive(Clone, Copy)]
pub struct Eval<'p> {
    pub params: &'p [f64],
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Eval { params }
    }
}

impl JetOps for Eval<'_> {
    type V = Jet2;

    fn jet(&self, v: &Jet2) -> Jet2 {
        *v
    }
    fn constant(&self, j: Jet2) -> Jet2 {
        j
    }
    fn param(&self, i: usize) -> Jet2 {
        Jet2::constant(self.params[i])
    }
    fn add(&self, a: Jet2, b: Jet2) -> Jet2 {
        a + b
    }
    fn sub(&self, a: Jet2, b: Jet2) -> Jet2 {
        a - b
    }
    fn mul(&self, a: Jet2, b: Jet2) -> Jet2 {
        a.mul(b)
    }
    fn div(&self, a: Jet2, b: Jet2) -> Result<Jet2> {
        a.div(b)
    }
    fn neg(&self, a: Jet2) -> Jet2 {
        -a
    }
    fn sin(&self, a: Jet2) -> Jet2 {
        a.sin()
    }
    fn cos(&self, a: Jet2) -> Jet2 {
        a.cos()
    }
    fn tanh(&self, a: Jet2) -> Jet2 {
        a.tanh()
    }
    fn exp(&self, a: Jet2) -> Jet2 {
        a.exp()
    }
    fn square(&self, a: Jet2) -> Jet2 {
        a.square()
    }
    fn scale(&self, a: Jet2, k: f64) -> Jet2 {
        a.scale(k)
    }
    fn offset(&self, a: Jet2, k: f64) -> Jet2 {
        a.offset(k)
    }
    fn slot(&self, a: Jet2, s: Slot) -> Jet2 {
        Jet2::constant(a.get(s))
    }

    fn gather(&self, weights: &[Jet2], indices: &[u32], offsets: &[usize], out: &mut Vec<Jet2>) {
        for &o in offsets {
            out.push(gather_value(self.params, weights, indices, o));
        }
    }

    fn affine(&self, bias: usize, weights: usize, inputs: &[Jet2]) -> Jet2 {
        affine_value(self.params, bias, weights, inputs.iter().copied())
    }
}

pub(crate) fn gather_value(params: &[f64], weights: &[Jet2], indices: &[u32], offset: usize) -> Jet2 {
    let mut acc = [0.0; 6];
    for (w, &i) in weights.iter().zip(indices) {
        let p = params[i as usize + offset];
        let w = w.to_array();
        for s in 0..6 {
            acc[s] += w[s] * p;
        }
    }
    Jet2::from_array(acc)
}

pub(crate) fn affine_value(
    params: &[f64],
    bias: usize,
    weights: usize,
    inputs: impl Iterator<Item = Jet2>,
) -> Jet2 {
    let mut acc = [0.0; 6];
    acc[0] = params[bias];
    for (k, x) in inputs.enumerate() {
        let w = params[weights + k];
        let x = x.to_array();
        for s in 0..6 {
            acc[s] += w * x[s];
        }
    }
    Jet2::from_array(acc)
}
