//! Catalog of initial-boundary value problems.
//!
//! Each [`PdeProblem`] bundles the residual operator, the initial and
//! boundary data, the domain and the named coefficients (with the subset that
//! may be learned in inverse mode). For `helmholtz2d` the second coordinate
//! is `y`, not time.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, JetOps, Seed};
use crate::error::{PixelError, Result};
use crate::grid::{Domain, Kernel};
use crate::net::{FieldEval, SolutionField};

/// Diffusion coefficient of the Allen-Cahn operator.
pub const ALLEN_CAHN_DIFFUSION: f64 = 1e-4;
/// Linear growth rate of the Allen-Cahn operator.
pub const ALLEN_CAHN_GROWTH: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    Sinusoid,
    Convection,
    ReactionDiffusion,
    Helmholtz2d,
    AllenCahn,
    Burgers,
}

impl PdeKind {
    pub const ALL: [PdeKind; 6] = [
        PdeKind::Sinusoid,
        PdeKind::Convection,
        PdeKind::ReactionDiffusion,
        PdeKind::Helmholtz2d,
        PdeKind::AllenCahn,
        PdeKind::Burgers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PdeKind::Sinusoid => "sinusoid",
            PdeKind::Convection => "convection",
            PdeKind::ReactionDiffusion => "reaction_diffusion",
            PdeKind::Helmholtz2d => "helmholtz2d",
            PdeKind::AllenCahn => "allen_cahn",
            PdeKind::Burgers => "burgers",
        }
    }
}

impl fmt::Display for PdeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PdeKind {
    type Err = PixelError;
    fn from_str(s: &str) -> Result<Self> {
        PdeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PixelError::Config(format!("unknown PDE '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    XLo,
    XHi,
    TLo,
    THi,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryCondition {
    /// `u = h` on the listed edges.
    Dirichlet(Vec<Edge>),
    /// `u(x_lo, t) = u(x_hi, t)`, and optionally the same for `u_x`.
    Periodic { derivative: bool },
}

/// One boundary sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BcSample {
    /// A point on a Dirichlet edge.
    Point { x: f64, t: f64 },
    /// A periodic pair at time `t`.
    Pair { t: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdeProblem {
    pub kind: PdeKind,
    pub domain: Domain,
    pub coeffs: Vec<Coefficient>,
    pub inverse_targets: Vec<String>,
    pub has_ic: bool,
    pub bc: BoundaryCondition,
}

fn defaults(kind: PdeKind) -> Vec<(&'static str, f64)> {
    match kind {
        PdeKind::Sinusoid => vec![("omega", 15.0)],
        PdeKind::Convection => vec![("beta", 30.0)],
        PdeKind::ReactionDiffusion => vec![("nu", 3.0), ("rho", 5.0)],
        PdeKind::Helmholtz2d => vec![("a1", 1.0), ("a2", 4.0), ("k", 1.0)],
        PdeKind::AllenCahn => vec![("lambda", 5.0)],
        PdeKind::Burgers => vec![("nu", 0.01 / PI)],
    }
}

/// Build a catalog problem with optional coefficient overrides.
pub fn make_problem(kind: PdeKind, overrides: &[(String, f64)]) -> Result<PdeProblem> {
    let two_pi = 2.0 * PI;
    let domain = match kind {
        PdeKind::Sinusoid => Domain::new(0.0, two_pi, 0.0, two_pi)?,
        PdeKind::Convection | PdeKind::ReactionDiffusion => Domain::new(0.0, two_pi, 0.0, 1.0)?,
        PdeKind::Helmholtz2d => Domain::new(-1.0, 1.0, -1.0, 1.0)?,
        PdeKind::AllenCahn | PdeKind::Burgers => Domain::new(-1.0, 1.0, 0.0, 1.0)?,
    };
    let mut coeffs: Vec<Coefficient> =
        defaults(kind).into_iter().map(|(n, v)| Coefficient { name: n.into(), value: v }).collect();
    for (name, value) in overrides {
        let c = coeffs.iter_mut().find(|c| &c.name == name).ok_or_else(|| {
            PixelError::Config(format!("'{kind}' has no coefficient '{name}'"))
        })?;
        if !value.is_finite() {
            return Err(PixelError::Config(format!("coefficient {name} must be finite")));
        }
        c.value = *value;
    }
    let problem_inverse: &[&str] = match kind {
        PdeKind::Sinusoid => &[],
        PdeKind::Convection => &["beta"],
        PdeKind::ReactionDiffusion | PdeKind::Burgers => &["nu"],
        PdeKind::Helmholtz2d => &["k"],
        PdeKind::AllenCahn => &["lambda"],
    };
    let bc = match kind {
        PdeKind::Sinusoid => BoundaryCondition::Dirichlet(vec![Edge::XLo]),
        PdeKind::Convection => BoundaryCondition::Periodic { derivative: false },
        PdeKind::ReactionDiffusion | PdeKind::AllenCahn => BoundaryCondition::Periodic { derivative: true },
        PdeKind::Burgers => BoundaryCondition::Dirichlet(vec![Edge::XLo, Edge::XHi]),
        PdeKind::Helmholtz2d => {
            BoundaryCondition::Dirichlet(vec![Edge::XLo, Edge::XHi, Edge::TLo, Edge::THi])
        }
    };
    let problem = PdeProblem {
        kind,
        domain,
        coeffs,
        inverse_targets: problem_inverse.iter().map(|s| s.to_string()).collect(),
        has_ic: kind != PdeKind::Helmholtz2d,
        bc,
    };
    problem.validate()?;
    Ok(problem)
}

impl PdeProblem {
    fn validate(&self) -> Result<()> {
        let positive: &[&str] = match self.kind {
            PdeKind::Sinusoid => &["omega"],
            PdeKind::Burgers => &["nu"],
            _ => &[],
        };
        for name in positive {
            if self.coeff(name) <= 0.0 {
                return Err(PixelError::Config(format!("coefficient {name} must be positive")));
            }
        }
        if self.kind == PdeKind::ReactionDiffusion && self.coeff("nu") < 0.0 {
            return Err(PixelError::Config("coefficient nu must be non-negative".into()));
        }
        Ok(())
    }

    pub fn coeff(&self, name: &str) -> f64 {
        self.coeffs
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.value)
            .unwrap_or_else(|| panic!("{} has no coefficient {name}", self.kind))
    }

    pub fn coeff_index(&self, name: &str) -> Option<usize> {
        self.coeffs.iter().position(|c| c.name == name)
    }

    /// Highest derivative order appearing in the residual.
    pub fn derivative_order(&self) -> usize {
        match self.kind {
            PdeKind::Sinusoid | PdeKind::Convection => 1,
            _ => 2,
        }
    }

    pub fn check_kernel(&self, kernel: Kernel) -> Result<()> {
        if self.derivative_order() > 1 && !kernel.supports_second_order() {
            return Err(PixelError::Config(format!(
                "{} kernel cannot provide the second derivatives '{}' requires",
                kernel.name(),
                self.kind
            )));
        }
        Ok(())
    }

    /// Coefficients as jets: trainable ones come from the field's
    /// parameters, the rest are constants.
    pub fn resolve_coeffs<C: JetOps, F: SolutionField>(&self, ctx: &C, field: &F) -> Vec<C::V> {
        self.coeffs
            .iter()
            .map(|c| match field.coefficient_param(&c.name) {
                Some(i) => ctx.param(i),
                None => ctx.constant(Jet2::constant(c.value)),
            })
            .collect()
    }

    fn source(&self, x: f64, t: f64) -> f64 {
        match self.kind {
            PdeKind::Sinusoid => {
                let w = self.coeff("omega");
                (w * x).cos() + (w * t).cos()
            }
            PdeKind::Helmholtz2d => {
                let (a1, a2, k) = (self.coeff("a1"), self.coeff("a2"), self.coeff("k"));
                let u = (a1 * PI * x).sin() * (a2 * PI * t).sin();
                (k * k - (a1 * PI).powi(2) - (a2 * PI).powi(2)) * u
            }
            _ => 0.0,
        }
    }

    /// Pointwise residual `N[u] - f`. `coeffs` follows the order of
    /// `self.coeffs` (see [`resolve_coeffs`](Self::resolve_coeffs)).
    pub fn residual<C: JetOps>(
        &self,
        ctx: &C,
        fe: &FieldEval<C::V>,
        coeffs: &[C::V],
        x: f64,
        t: f64,
    ) -> C::V {
        let c = |name: &str| coeffs[self.coeff_index(name).unwrap()];
        match self.kind {
            PdeKind::Sinusoid => {
                let lhs = ctx.add(fe.u_x, fe.u_t);
                ctx.offset(lhs, -self.source(x, t))
            }
            PdeKind::Convection => ctx.add(fe.u_t, ctx.mul(c("beta"), fe.u_x)),
            PdeKind::ReactionDiffusion => {
                let diff = ctx.mul(c("nu"), fe.u_xx);
                let one_minus = ctx.offset(ctx.neg(fe.u), 1.0);
                let react = ctx.mul(c("rho"), ctx.mul(fe.u, one_minus));
                ctx.sub(ctx.sub(fe.u_t, diff), react)
            }
            PdeKind::Helmholtz2d => {
                let lap = ctx.add(fe.u_xx, fe.u_tt);
                let k2u = ctx.mul(ctx.square(c("k")), fe.u);
                ctx.offset(ctx.add(lap, k2u), -self.source(x, t))
            }
            PdeKind::AllenCahn => {
                let cubic = ctx.mul(c("lambda"), ctx.mul(ctx.square(fe.u), fe.u));
                let lin = ctx.sub(fe.u_t, ctx.scale(fe.u_xx, ALLEN_CAHN_DIFFUSION));
                ctx.sub(ctx.add(lin, cubic), ctx.scale(fe.u, ALLEN_CAHN_GROWTH))
            }
            PdeKind::Burgers => {
                let adv = ctx.mul(fe.u, fe.u_x);
                let diff = ctx.mul(c("nu"), fe.u_xx);
                ctx.sub(ctx.add(fe.u_t, adv), diff)
            }
        }
    }

    /// Initial profile `g(x)`; `None` for time-free problems.
    pub fn initial_value(&self, x: f64) -> Option<f64> {
        match self.kind {
            PdeKind::Sinusoid => {
                let w = self.coeff("omega");
                Some((w * x).sin() / w)
            }
            PdeKind::Convection => Some(x.sin()),
            PdeKind::ReactionDiffusion => {
                let s = PI / 4.0;
                Some((-(x - PI).powi(2) / (2.0 * s * s)).exp())
            }
            PdeKind::AllenCahn => Some(x * x * (PI * x).cos()),
            PdeKind::Burgers => Some(-(PI * x).sin()),
            PdeKind::Helmholtz2d => None,
        }
    }

    /// Dirichlet target on the boundary.
    pub fn boundary_value(&self, _x: f64, t: f64) -> f64 {
        match self.kind {
            PdeKind::Sinusoid => {
                let w = self.coeff("omega");
                (w * t).sin() / w
            }
            _ => 0.0,
        }
    }

    /// Closed-form solution where one exists, as a jet in `(x, t)`.
    pub fn exact_jet(&self, x: f64, t: f64) -> Option<Jet2> {
        let xj = Jet2::lift(x, Seed::X);
        let tj = Jet2::lift(t, Seed::T);
        match self.kind {
            PdeKind::Sinusoid => {
                let w = self.coeff("omega");
                Some((xj.scale(w).sin() + tj.scale(w).sin()).scale(1.0 / w))
            }
            PdeKind::Convection => Some((xj - tj.scale(self.coeff("beta"))).sin()),
            PdeKind::Helmholtz2d => {
                let (a1, a2) = (self.coeff("a1"), self.coeff("a2"));
                Some(xj.scale(a1 * PI).sin().mul(tj.scale(a2 * PI).sin()))
            }
            _ => None,
        }
    }

    pub fn exact(&self, x: f64, t: f64) -> Option<f64> {
        self.exact_jet(x, t).map(|j| j.val)
    }

    /// `u(x, t_lo) - g(x)`.
    pub fn ic_mismatch<C: JetOps, F: SolutionField>(&self, ctx: &C, field: &F, x: f64) -> Result<C::V> {
        let g = self
            .initial_value(x)
            .ok_or_else(|| PixelError::Config(format!("'{}' has no initial condition", self.kind)))?;
        let fe = field.eval(ctx, x, self.domain.t_lo)?;
        Ok(ctx.offset(fe.u, -g))
    }

    /// Boundary mismatches at one sample: one entry for Dirichlet points and
    /// plain periodic pairs, two when the periodic condition also matches `u_x`.
    pub fn bc_mismatches<C: JetOps, F: SolutionField>(
        &self,
        ctx: &C,
        field: &F,
        sample: BcSample,
        out: &mut Vec<C::V>,
    ) -> Result<()> {
        match (&self.bc, sample) {
            (BoundaryCondition::Dirichlet(_), BcSample::Point { x, t }) => {
                let fe = field.eval(ctx, x, t)?;
                out.push(ctx.offset(fe.u, -self.boundary_value(x, t)));
            }
            (BoundaryCondition::Periodic { derivative }, BcSample::Pair { t }) => {
                let lo = field.eval(ctx, self.domain.x_lo, t)?;
                let hi = field.eval(ctx, self.domain.x_hi, t)?;
                out.push(ctx.sub(lo.u, hi.u));
                if *derivative {
                    out.push(ctx.sub(lo.u_x, hi.u_x));
                }
            }
            _ => {
                return Err(PixelError::Config(format!(
                    "boundary sample {sample:?} does not match the boundary condition of '{}'",
                    self.kind
                )))
            }
        }
        Ok(())
    }

    /// Mean-square initial and boundary terms over the given samples.
    ///
    /// Returns `("ic", ·)` when the problem has an initial condition, then
    /// `("bc", ·)` for Dirichlet data, or `("bc_value", ·)` and, with
    /// derivative matching, `("bc_derivative", ·)` for periodic pairs.
    pub fn boundary_loss_terms<C: JetOps, F: SolutionField>(
        &self,
        ctx: &C,
        field: &F,
        ic_points: &[f64],
        bc_samples: &[BcSample],
    ) -> Result<Vec<(String, C::V)>> {
        let mut terms = Vec::new();
        if self.has_ic && !ic_points.is_empty() {
            let mut acc = ctx.constant(Jet2::ZERO);
            for &x in ic_points {
                acc = ctx.add(acc, ctx.square(self.ic_mismatch(ctx, field, x)?));
            }
            terms.push(("ic".to_string(), ctx.scale(acc, 1.0 / ic_points.len() as f64)));
        }
        if bc_samples.is_empty() {
            return Ok(terms);
        }
        let names: &[&str] = match self.bc {
            BoundaryCondition::Dirichlet(_) => &["bc"],
            BoundaryCondition::Periodic { derivative: false } => &["bc_value"],
            BoundaryCondition::Periodic { derivative: true } => &["bc_value", "bc_derivative"],
        };
        let mut acc = vec![ctx.constant(Jet2::ZERO); names.len()];
        let mut buf = Vec::with_capacity(2);
        for &s in bc_samples {
            buf.clear();
            self.bc_mismatches(ctx, field, s, &mut buf)?;
            for (a, m) in acc.iter_mut().zip(&buf) {
                *a = ctx.add(*a, ctx.square(*m));
            }
        }
        let n = bc_samples.len() as f64;
        for (name, a) in names.iter().zip(acc) {
            terms.push((name.to_string(), ctx.scale(a, 1.0 / n)));
        }
        Ok(terms)
    }
}

/// The closed-form solution of a problem viewed as a field; it has no
/// parameters of its own.
pub struct ExactField<'a>(pub &'a PdeProblem);

impl SolutionField for ExactField<'_> {
    fn eval<C: JetOps>(&self, ctx: &C, x: f64, t: f64) -> Result<FieldEval<C::V>> {
        let j = self
            .0
            .exact_jet(x, t)
            .ok_or_else(|| PixelError::Config(format!("'{}' has no closed-form solution", self.0.kind)))?;
        Ok(FieldEval::from_jet(ctx, ctx.constant(j)))
    }
}
