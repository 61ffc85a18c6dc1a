//! Network heads and the two model families.
//!
//! [`PixelModel`] reads interpolated grid features through a small tanh MLP;
//! [`PinnModel`] is the coordinate-input MLP baseline. Both evaluate in jet
//! arithmetic so a single forward pass yields `u` together with its first and
//! second partials in `x` and `t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, JetOps, Seed, Slot};
use crate::error::{PixelError, Result};
use crate::grid::{Domain, GridStack};

/// Fully connected tanh network with a linear output layer.
///
/// Parameters for layer `l` (`a` inputs, `b` outputs) are stored as a
/// row-major `b × a` weight block followed by `b` biases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    /// Offset of the first weight in the flat parameter vector.
    pub base: usize,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, base: usize) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(PixelError::Config(format!("invalid layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(PixelError::Config("network output must be scalar".into()));
        }
        Ok(Mlp { sizes, base })
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = self.base;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for (_, a, b) in self.layer_offsets() {
            let lim = (6.0 / (a + b) as f64).sqrt();
            p.extend((0..a * b).map(|_| rng.gen_range(-lim..=lim)));
            p.extend(std::iter::repeat(0.0).take(b));
        }
        p
    }

    pub fn eval<C: JetOps>(&self, ctx: &C, inputs: &[C::V]) -> Result<C::V> {
        if inputs.len() != self.input_size() {
            return Err(PixelError::SizeMismatch { expected: self.input_size(), got: inputs.len() });
        }
        let layers = self.sizes.len() - 1;
        let mut act: Vec<C::V> = inputs.to_vec();
        let mut next = Vec::new();
        for (l, (off, a, b)) in self.layer_offsets().enumerate() {
            next.clear();
            for r in 0..b {
                let z = ctx.affine(off + a * b + r, off + r * a, &act);
                next.push(if l + 1 < layers { ctx.tanh(z) } else { z });
            }
            std::mem::swap(&mut act, &mut next);
        }
        Ok(act[0])
    }
}

/// `u` and the partials used by the residual operators at one point.
#[derive(Clone, Copy, Debug)]
pub struct FieldEval<V> {
    pub u: V,
    pub u_x: V,
    pub u_t: V,
    pub u_xx: V,
    pub u_tt: V,
    /// The full output jet.
    pub jet: V,
}

impl<V: Copy> FieldEval<V> {
    pub fn from_jet<C: JetOps<V = V>>(ctx: &C, jet: V) -> Self {
        FieldEval {
            u: ctx.slot(jet, Slot::Val),
            u_x: ctx.slot(jet, Slot::X),
            u_t: ctx.slot(jet, Slot::T),
            u_xx: ctx.slot(jet, Slot::XX),
            u_tt: ctx.slot(jet, Slot::TT),
            jet,
        }
    }
}

/// Anything that maps a point to a field evaluation under some parameter
/// vector: trained models, and analytic fields used as test fixtures.
pub trait SolutionField {
    fn eval<C: JetOps>(&self, ctx: &C, x: f64, t: f64) -> Result<FieldEval<C::V>>;

    /// Parameter index of a trainable PDE coefficient, if this field owns one.
    fn coefficient_param(&self, _name: &str) -> Option<usize> {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelModel {
    pub stack: GridStack,
    pub head: Mlp,
    pub coeffs: Vec<String>,
    pub params: Vec<f64>,
}

impl PixelModel {
    /// Random initialization: cells uniform in `[-1e-2, 1e-2]`, Glorot head.
    pub fn new<R: Rng>(
        stack: GridStack,
        hidden: &[usize],
        coeffs: &[(String, f64)],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![stack.shape.channels];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let head = Mlp::new(sizes, stack.param_count())?;
        let mut params = stack.init_cells(rng, 1e-2);
        params.extend(head.init_glorot(rng));
        params.extend(coeffs.iter().map(|c| c.1));
        Ok(PixelModel { stack, head, coeffs: coeffs.iter().map(|c| c.0.clone()).collect(), params })
    }

    /// Assemble from explicit parts, checking the parameter count.
    pub fn from_parts(stack: GridStack, head: Mlp, coeffs: Vec<String>, params: Vec<f64>) -> Result<Self> {
        if head.base != stack.param_count() || head.input_size() != stack.shape.channels {
            return Err(PixelError::Config("head does not match grid stack".into()));
        }
        let expected = stack.param_count() + head.param_count() + coeffs.len();
        if params.len() != expected {
            return Err(PixelError::SizeMismatch { expected, got: params.len() });
        }
        Ok(PixelModel { stack, head, coeffs, params })
    }

    pub fn coeff_base(&self) -> usize {
        self.head.base + self.head.param_count()
    }
}

impl SolutionField for PixelModel {
    fn eval<C: JetOps>(&self, ctx: &C, x: f64, t: f64) -> Result<FieldEval<C::V>> {
        let (xh, th) = self.stack.normalize_jets(Jet2::lift(x, Seed::X), Jet2::lift(t, Seed::T))?;
        let features = self.stack.interpolate_multigrid(ctx, 0, xh, th)?;
        let out = self.head.eval(ctx, &features)?;
        Ok(FieldEval::from_jet(ctx, out))
    }

    fn coefficient_param(&self, name: &str) -> Option<usize> {
        self.coeffs.iter().position(|c| c == name).map(|i| self.coeff_base() + i)
    }
}

/// Coordinate MLP baseline. Inputs are rescaled to `[-1, 1]²` before the
/// first layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PinnModel {
    pub domain: Domain,
    pub net: Mlp,
    pub coeffs: Vec<String>,
    pub params: Vec<f64>,
}

impl PinnModel {
    pub fn new<R: Rng>(domain: Domain, sizes: Vec<usize>, coeffs: &[(String, f64)], rng: &mut R) -> Result<Self> {
        if sizes.first() != Some(&2) {
            return Err(PixelError::Config("coordinate network takes 2 inputs".into()));
        }
        let net = Mlp::new(sizes, 0)?;
        let mut params = net.init_glorot(rng);
        params.extend(coeffs.iter().map(|c| c.1));
        Ok(PinnModel { domain, net, coeffs: coeffs.iter().map(|c| c.0.clone()).collect(), params })
    }

    pub fn from_parts(domain: Domain, net: Mlp, coeffs: Vec<String>, params: Vec<f64>) -> Result<Self> {
        let expected = net.param_count() + coeffs.len();
        if net.base != 0 || net.input_size() != 2 {
            return Err(PixelError::Config("coordinate network must start at 0 with 2 inputs".into()));
        }
        if params.len() != expected {
            return Err(PixelError::SizeMismatch { expected, got: params.len() });
        }
        Ok(PinnModel { domain, net, coeffs, params })
    }

    pub fn coeff_base(&self) -> usize {
        self.net.param_count()
    }
}

impl SolutionField for PinnModel {
    fn eval<C: JetOps>(&self, ctx: &C, x: f64, t: f64) -> Result<FieldEval<C::V>> {
        let d = &self.domain;
        if !d.contains(x, t) {
            return Err(PixelError::OutOfRange { x, t });
        }
        let xs = Jet2::lift(x, Seed::X).offset(-d.x_lo).scale(2.0 / d.width()).offset(-1.0);
        let ts = Jet2::lift(t, Seed::T).offset(-d.t_lo).scale(2.0 / d.height()).offset(-1.0);
        let inputs = [ctx.constant(xs), ctx.constant(ts)];
        let out = self.net.eval(ctx, &inputs)?;
        Ok(FieldEval::from_jet(ctx, out))
    }

    fn coefficient_param(&self, name: &str) -> Option<usize> {
        self.coeffs.iter().position(|c| c == name).map(|i| self.coeff_base() + i)
    }
}

/// Layer sizes of the coordinate baseline for each catalog problem.
pub fn pinn_layers(pde: &str) -> Result<Vec<usize>> {
    let (depth, width) = match pde {
        "convection" | "reaction_diffusion" | "sinusoid" => (3, 50),
        "helmholtz2d" => (7, 100),
        "allen_cahn" => (6, 128),
        "burgers" => (8, 40),
        other => return Err(PixelError::Config(format!("no baseline architecture for '{other}'"))),
    };
    let mut sizes = vec![2];
    sizes.extend(std::iter::repeat(width).take(depth));
    sizes.push(1);
    Ok(sizes)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Pixel(PixelModel),
    Pinn(PinnModel),
}

impl Model {
    pub fn params(&self) -> &[f64] {
        match self {
            Model::Pixel(m) => &m.params,
            Model::Pinn(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Model::Pixel(m) => &mut m.params,
            Model::Pinn(m) => &mut m.params,
        }
    }

    pub fn coeff_names(&self) -> &[String] {
        match self {
            Model::Pixel(m) => &m.coeffs,
            Model::Pinn(m) => &m.coeffs,
        }
    }

    /// Current values of the trainable coefficients, by name.
    pub fn coeff_values(&self) -> Vec<(String, f64)> {
        self.coeff_names()
            .iter()
            .map(|n| (n.clone(), self.params()[self.coefficient_param(n).unwrap()]))
            .collect()
    }

    pub fn domain(&self) -> &Domain {
        match self {
            Model::Pixel(m) => &m.stack.domain,
            Model::Pinn(m) => &m.domain,
        }
    }

    pub fn is_pixel(&self) -> bool {
        matches!(self, Model::Pixel(_))
    }

    /// Plain value of `u` at a point.
    pub fn value_at(&self, x: f64, t: f64) -> Result<f64> {
        let ctx = crate::autodiff::Eval::new(self.params());
        Ok(self.eval(&ctx, x, t)?.jet.val)
    }
}

impl SolutionField for Model {
    fn eval<C: JetOps>(&self, ctx: &C, x: f64, t: f64) -> Result<FieldEval<C::V>> {
        match self {
            Model::Pixel(m) => m.eval(ctx, x, t),
            Model::Pinn(m) => m.eval(ctx, x, t),
        }
    }

    fn coefficient_param(&self, name: &str) -> Option<usize> {
        match self {
            Model::Pixel(m) => m.coefficient_param(name),
            Model::Pinn(m) => m.coefficient_param(name),
        }
    }
}
