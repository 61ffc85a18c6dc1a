//! Reference solutions: closed forms where they exist, self-converging
//! numerical oracles otherwise.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{PixelError, Result};
use crate::pde::{BoundaryCondition, PdeKind, PdeProblem, ALLEN_CAHN_DIFFUSION, ALLEN_CAHN_GROWTH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Oracle,
}

/// Values of a solution on a tensor grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceField {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// `u[i * ts.len() + j]` is the value at `(xs[i], ts[j])`.
    pub u: Vec<f64>,
    pub provenance: Provenance,
    /// Discretization settings the oracle settled on.
    pub params: BTreeMap<String, f64>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ReferenceField {
    pub fn new(
        xs: Vec<f64>,
        ts: Vec<f64>,
        u: Vec<f64>,
        provenance: Provenance,
        params: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if xs.is_empty() || ts.is_empty() {
            return Err(PixelError::Domain("reference grid is empty".into()));
        }
        if !strictly_increasing(&xs) || !strictly_increasing(&ts) {
            return Err(PixelError::Domain("reference grid axes must be strictly increasing".into()));
        }
        if u.len() != xs.len() * ts.len() {
            return Err(PixelError::SizeMismatch { expected: xs.len() * ts.len(), got: u.len() });
        }
        if let Some(k) = u.iter().position(|v| !v.is_finite()) {
            return Err(PixelError::Numerical(format!("non-finite reference value at index {k}")));
        }
        Ok(ReferenceField { xs, ts, u, provenance, params })
    }

    /// Tabulate a closed-form solution.
    pub fn analytic(xs: Vec<f64>, ts: Vec<f64>, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        let nt = ts.len();
        let u: Vec<f64> = xs
            .par_iter()
            .flat_map_iter(|&x| ts.iter().map(|&t| f(x, t)).collect::<Vec<_>>())
            .collect();
        debug_assert_eq!(u.len(), xs.len() * nt);
        ReferenceField::new(xs, ts, u, Provenance::Analytic, BTreeMap::new())
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.ts.len() + j]
    }

    /// Grid points in storage order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().flat_map(move |&x| self.ts.iter().map(move |&t| (x, t)))
    }

    /// `(x, t, u)` triples in storage order.
    pub fn observations(&self) -> Vec<(f64, f64, f64)> {
        self.points().zip(&self.u).map(|((x, t), &u)| (x, t, u)).collect()
    }
}

/// `‖pred − reference‖₂ / ‖reference‖₂`.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(PixelError::SizeMismatch { expected: reference.len(), got: pred.len() });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        num += (p - r) * (p - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(PixelError::Numerical("reference field has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

pub fn linspace(a: f64, b: f64, n: usize, include_end: bool) -> Vec<f64> {
    let div = if include_end { n.saturating_sub(1).max(1) } else { n } as f64;
    (0..n).map(|i| a + (b - a) * i as f64 / div).collect()
}

/// Default evaluation grid: 256 × 100 for time-dependent problems, 256 × 256
/// for problems on a square spatial domain. The right `x` endpoint is left
/// out for periodic problems, where it duplicates the left one.
pub fn evaluation_grid(problem: &PdeProblem) -> (Vec<f64>, Vec<f64>) {
    let d = &problem.domain;
    let periodic = matches!(problem.bc, BoundaryCondition::Periodic { .. });
    let nt = match problem.kind {
        PdeKind::Helmholtz2d | PdeKind::Sinusoid => 256,
        _ => 100,
    };
    (linspace(d.x_lo, d.x_hi, 256, !periodic), linspace(d.t_lo, d.t_hi, nt, true))
}

pub fn convection_exact(x: f64, t: f64, beta: f64) -> f64 {
    (x - beta * t).sin()
}

pub fn helmholtz2d_exact(x: f64, y: f64, a1: f64, a2: f64) -> f64 {
    (a1 * PI * x).sin() * (a2 * PI * y).sin()
}

pub fn sinusoid_exact(x1: f64, x2: f64, omega: f64) -> f64 {
    ((omega * x1).sin() + (omega * x2).sin()) / omega
}

/// Reference field for a catalog problem on its default evaluation grid.
pub fn reference_field(problem: &PdeProblem) -> Result<ReferenceField> {
    let (xs, ts) = evaluation_grid(problem);
    reference_field_on(problem, xs, ts)
}

/// Reference field on a caller-chosen grid. The spectral oracles require a
/// uniform periodic `x` grid starting at the left edge.
pub fn reference_field_on(problem: &PdeProblem, xs: Vec<f64>, ts: Vec<f64>) -> Result<ReferenceField> {
    match problem.kind {
        PdeKind::Sinusoid | PdeKind::Convection | PdeKind::Helmholtz2d => {
            ReferenceField::analytic(xs, ts, |x, t| problem.exact(x, t).unwrap())
        }
        PdeKind::Burgers => burgers_field(&xs, &ts, problem.coeff("nu")),
        PdeKind::ReactionDiffusion => {
            reaction_diffusion_oracle(&xs, &ts, problem.coeff("nu"), problem.coeff("rho"))
        }
        PdeKind::AllenCahn => allen_cahn_oracle(&xs, &ts, problem.coeff("lambda")),
    }
}

// ---------------------------------------------------------------------------
// Burgers: Cole-Hopf with Gauss-Hermite quadrature

/// Gauss-Hermite rule for weight `e^{-z²}`. `scaled` holds `w_i e^{z_i²}`,
/// which stays representable where the raw weights underflow.
#[derive(Clone, Debug)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub scaled: Vec<f64>,
}

/// Orthonormal Hermite functions `(ψ_n(z), ψ_{n-1}(z))`; `ψ_j` is the
/// degree-`j` Hermite polynomial times `e^{-z²/2}`, normalized.
fn hermite_functions(n: usize, z: f64) -> (f64, f64) {
    let (mut p1, mut p2) = (PI.powf(-0.25) * (-0.5 * z * z).exp(), 0.0);
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
    }
    (p1, p2)
}

/// Gauss-Hermite rule of order `n`. The positive roots of `ψ_n` are
/// bracketed on a grid finer than their spacing and refined by bisection.
pub fn hermite_rule(n: usize) -> HermiteRule {
    assert!((1..=600).contains(&n), "unsupported Hermite order {n}");
    let zmax = ((2 * n + 1) as f64).sqrt() + 1.0;
    let h = 0.3 / (n as f64).sqrt();
    let mut positive = Vec::with_capacity(n / 2);
    let mut a = h * 0.5;
    let mut fa = hermite_functions(n, a).0;
    while a < zmax && positive.len() < n / 2 {
        let b = a + h;
        let fb = hermite_functions(n, b).0;
        if fa == 0.0 || fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            while hi - lo > 4.0 * f64::EPSILON * hi {
                let mid = 0.5 * (lo + hi);
                let fm = hermite_functions(n, mid).0;
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            positive.push(0.5 * (lo + hi));
        }
        a = b;
        fa = fb;
    }
    assert_eq!(positive.len(), n / 2, "Hermite root scan missed roots for order {n}");
    let mut nodes: Vec<f64> = positive.iter().rev().map(|z| -z).collect();
    if n % 2 == 1 {
        nodes.push(0.0);
    }
    nodes.extend(positive.iter().copied());
    let scaled: Vec<f64> = nodes
        .iter()
        .map(|&z| {
            let prev = hermite_functions(n, z).1;
            1.0 / (n as f64 * prev * prev)
        })
        .collect();
    let weights = nodes.iter().zip(&scaled).map(|(z, s)| s * (-z * z).exp()).collect();
    HermiteRule { nodes, weights, scaled }
}

const HERMITE_ORDERS: [usize; 6] = [16, 32, 64, 128, 256, 512];

fn hermite_rules() -> &'static [HermiteRule] {
    static RULES: OnceLock<Vec<HermiteRule>> = OnceLock::new();
    RULES.get_or_init(|| HERMITE_ORDERS.iter().map(|&n| hermite_rule(n)).collect())
}

/// Viscous Burgers solution with `u(x, 0) = -sin(πx)` via Cole-Hopf.
///
/// Both transforms are integrals against `exp(E(η))` with
/// `E(η) = -cos(π(x-η))/(2πν) - η²/(4νt)`. The Gaussian rule is centered and
/// scaled on the window where `E` is within 60 of its maximum, and its order
/// doubles until the result changes by less than `1e-8`.
pub fn burgers_oracle(x: f64, t: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) || t < 0.0 || !x.is_finite() || !t.is_finite() {
        return Err(PixelError::Domain(format!("burgers oracle needs nu > 0 and t >= 0, got nu={nu}, t={t}")));
    }
    if t == 0.0 {
        return Ok(-(PI * x).sin());
    }
    let e = |eta: f64| -(PI * (x - eta)).cos() / (2.0 * PI * nu) - eta * eta / (4.0 * nu * t);
    let drop = 60.0;
    let reach = (4.0 * nu * t * (1.0 / (PI * nu) + drop)).sqrt() * 1.05;
    let k = 4001;
    let h = 2.0 * reach / (k - 1) as f64;
    let scan: Vec<f64> = (0..k).map(|i| e(-reach + h * i as f64)).collect();
    let emax = scan.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = scan.iter().position(|&v| v >= emax - drop).unwrap();
    let last = scan.iter().rposition(|&v| v >= emax - drop).unwrap();
    let a = -reach + h * first as f64 - h;
    let b = -reach + h * last as f64 + h;
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));

    let integrate = |rule: &HermiteRule| {
        let s = r / (rule.nodes.len() as f64).sqrt();
        let (mut num, mut den) = (0.0, 0.0);
        for (&z, &w) in rule.nodes.iter().zip(&rule.scaled) {
            let eta = c + s * z;
            let g = w * (e(eta) - emax).exp();
            num += g * (PI * (x - eta)).sin();
            den += g;
        }
        -num / den
    };

    let rules = hermite_rules();
    let mut prev = integrate(&rules[0]);
    let mut last_change = f64::INFINITY;
    for rule in &rules[1..] {
        let cur = integrate(rule);
        last_change = (cur - prev).abs();
        if last_change < 1e-8 && cur.is_finite() {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(PixelError::Convergence(format!(
        "burgers quadrature at x={x}, t={t}, nu={nu}: change {last_change:.3e} at order {}",
        HERMITE_ORDERS[HERMITE_ORDERS.len() - 1]
    )))
}

/// The Burgers oracle tabulated on a grid.
pub fn burgers_field(xs: &[f64], ts: &[f64], nu: f64) -> Result<ReferenceField> {
    let cols: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&x| ts.iter().map(|&t| burgers_oracle(x, t, nu)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut params = BTreeMap::new();
    params.insert("nu".into(), nu);
    params.insert("max_hermite_order".into(), HERMITE_ORDERS[HERMITE_ORDERS.len() - 1] as f64);
    ReferenceField::new(xs.to_vec(), ts.to_vec(), cols.concat(), Provenance::Oracle, params)
}

// ---------------------------------------------------------------------------
// Spectral splitting for periodic reaction-diffusion problems

/// A periodic problem `u_t = D u_xx + R(u)` whose reaction flow is known in
/// closed form.
struct SplitProblem<'a> {
    x_lo: f64,
    period: f64,
    diffusion: f64,
    /// Exact reaction flow over a time step.
    react: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    ic: &'a (dyn Fn(f64) -> f64 + Sync),
    /// Fine points per output point.
    refine: usize,
    tol: f64,
    max_level: u32,
}

fn check_periodic_grid(xs: &[f64], x_lo: f64, period: f64) -> Result<()> {
    let n = xs.len();
    if n < 4 {
        return Err(PixelError::Domain("periodic grid needs at least 4 points".into()));
    }
    let dx = period / n as f64;
    for (i, &x) in xs.iter().enumerate() {
        if (x - (x_lo + dx * i as f64)).abs() > 1e-9 * period {
            return Err(PixelError::Domain(format!(
                "x grid must be uniform on [{x_lo}, {}) with {n} points",
                x_lo + period
            )));
        }
    }
    Ok(())
}

impl SplitProblem<'_> {
    /// Strang splitting on a fine periodic grid, sampled at the output grid.
    /// Each level halves the time step; returns the field and the number of
    /// steps per output interval.
    fn solve(&self, xs: &[f64], ts: &[f64]) -> Result<(Vec<f64>, usize)> {
        check_periodic_grid(xs, self.x_lo, self.period)?;
        if !strictly_increasing(ts) || ts[0] < 0.0 {
            return Err(PixelError::Domain("output times must be increasing and non-negative".into()));
        }
        let n = xs.len() * self.refine;
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let fine: Vec<f64> = (0..n).map(|i| self.x_lo + self.period * i as f64 / n as f64).collect();
        let u0: Vec<f64> = fine.iter().map(|&x| (self.ic)(x)).collect();
        let wavenumbers: Vec<f64> = (0..n)
            .map(|j| {
                let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * PI * k / self.period
            })
            .collect();

        let run = |steps: usize| -> Vec<f64> {
            let mut u = u0.clone();
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            let mut out = vec![0.0; xs.len() * ts.len()];
            let mut t = 0.0;
            let mut decay = vec![0.0; n];
            let mut decay_dt = f64::NAN;
            for (j, &tj) in ts.iter().enumerate() {
                let span = tj - t;
                if span > 0.0 {
                    let dt = span / steps as f64;
                    if dt != decay_dt {
                        for (d, k) in decay.iter_mut().zip(&wavenumbers) {
                            *d = (-self.diffusion * k * k * dt).exp() / n as f64;
                        }
                        decay_dt = dt;
                    }
                    for _ in 0..steps {
                        for v in u.iter_mut() {
                            *v = (self.react)(*v, 0.5 * dt);
                        }
                        for (b, &v) in buf.iter_mut().zip(&u) {
                            *b = Complex::new(v, 0.0);
                        }
                        fwd.process(&mut buf);
                        for (b, d) in buf.iter_mut().zip(&decay) {
                            *b *= *d;
                        }
                        inv.process(&mut buf);
                        for (v, b) in u.iter_mut().zip(&buf) {
                            *v = (self.react)(b.re, 0.5 * dt);
                        }
                    }
                }
                t = tj;
                for i in 0..xs.len() {
                    out[i * ts.len() + j] = u[i * self.refine];
                }
            }
            out
        };

        let mut prev = run(1);
        let mut change = f64::INFINITY;
        for level in 1..=self.max_level {
            let steps = 1usize << level;
            let cur = run(steps);
            if let Some(k) = cur.iter().position(|v| !v.is_finite()) {
                return Err(PixelError::Numerical(format!("splitting produced a non-finite value at {k}")));
            }
            change = (cur.iter().zip(&prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / cur.len() as f64).sqrt();
            if change < self.tol {
                return Ok((cur, steps));
            }
            prev = cur;
        }
        Err(PixelError::Convergence(format!(
            "splitting did not converge: RMS change {change:.3e} with {} steps per interval",
            1usize << self.max_level
        )))
    }
}

/// Exact flow of `u' = ρ u (1 - u)`.
pub fn logistic_flow(u: f64, rho: f64, dt: f64) -> f64 {
    let g = (rho * dt).exp();
    u * g / (u * g + 1.0 - u)
}

/// Exact flow of `u' = a u - b u³`.
pub fn cubic_flow(u: f64, a: f64, b: f64, dt: f64) -> f64 {
    if a == 0.0 {
        return u / (1.0 + 2.0 * b * u * u * dt).sqrt();
    }
    let g = (a * dt).exp();
    u * g / (1.0 + (b / a) * u * u * (g * g - 1.0)).sqrt()
}

/// Reaction-diffusion initial profile.
pub fn reaction_diffusion_ic(x: f64) -> f64 {
    let s = PI / 4.0;
    (-(x - PI).powi(2) / (2.0 * s * s)).exp()
}

/// `u_t = ν u_xx + ρ u (1 - u)` on the periodic interval `[0, 2π)`.
pub fn reaction_diffusion_oracle(xs: &[f64], ts: &[f64], nu: f64, rho: f64) -> Result<ReferenceField> {
    reaction_diffusion_oracle_with(xs, ts, nu, rho, &reaction_diffusion_ic)
}

/// As [`reaction_diffusion_oracle`] with a caller-supplied initial profile.
pub fn reaction_diffusion_oracle_with(
    xs: &[f64],
    ts: &[f64],
    nu: f64,
    rho: f64,
    ic: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<ReferenceField> {
    if nu < 0.0 {
        return Err(PixelError::Domain("diffusion coefficient must be non-negative".into()));
    }
    let react = move |u: f64, dt: f64| logistic_flow(u, rho, dt);
    let problem = SplitProblem {
        x_lo: 0.0,
        period: 2.0 * PI,
        diffusion: nu,
        react: &react,
        ic,
        refine: 2,
        tol: 1e-7,
        max_level: 14,
    };
    let (u, steps) = problem.solve(xs, ts)?;
    let mut params = BTreeMap::new();
    params.insert("nu".into(), nu);
    params.insert("rho".into(), rho);
    params.insert("spatial_points".into(), (xs.len() * problem.refine) as f64);
    params.insert("steps_per_interval".into(), steps as f64);
    ReferenceField::new(xs.to_vec(), ts.to_vec(), u, Provenance::Oracle, params)
}

/// `u_t = 1e-4 u_xx + 5u - λu³` on the periodic interval `[-1, 1)` with
/// `u(x, 0) = x² cos(πx)`.
pub fn allen_cahn_oracle(xs: &[f64], ts: &[f64], lambda: f64) -> Result<ReferenceField> {
    let react = move |u: f64, dt: f64| cubic_flow(u, ALLEN_CAHN_GROWTH, lambda, dt);
    let ic = |x: f64| x * x * (PI * x).cos();
    let refine = 2048usize.div_ceil(xs.len().max(1)).max(1);
    let problem = SplitProblem {
        x_lo: -1.0,
        period: 2.0,
        diffusion: ALLEN_CAHN_DIFFUSION,
        react: &react,
        ic: &ic,
        refine,
        tol: 1e-6,
        max_level: 14,
    };
    let (u, steps) = problem.solve(xs, ts)?;
    let mut params = BTreeMap::new();
    params.insert("lambda".into(), lambda);
    params.insert("spatial_points".into(), (xs.len() * refine) as f64);
    params.insert("steps_per_interval".into(), steps as f64);
    ReferenceField::new(xs.to_vec(), ts.to_vec(), u, Provenance::Oracle, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_l2_examples() {
        let r = [1.0, -2.0, 3.0];
        assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
        assert_eq!(relative_l2(&[0.0; 3], &r).unwrap(), 1.0);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert!((relative_l2(&twice, &r).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_l2(&r, &[0.0; 3]).is_err());
        assert!(relative_l2(&r, &[1.0]).is_err());
    }

    #[test]
    fn closed_forms() {
        assert_eq!(convection_exact(0.7, 0.0, 12.0), 0.7f64.sin());
        assert_eq!(convection_exact(0.0, 0.0, 30.0), 0.0);
        assert!(helmholtz2d_exact(0.5, 0.5, 1.0, 4.0).abs() < 1e-15);
        assert!(helmholtz2d_exact(1.0, 0.3, 1.0, 4.0).abs() < 1e-15);
        assert!(helmholtz2d_exact(-1.0, 0.3, 1.0, 4.0).abs() < 1e-15);
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        for &n in &[5usize, 16, 64, 512] {
            let rule = hermite_rule(n);
            assert_eq!(rule.nodes.len(), n);
            assert!(strictly_increasing(&rule.nodes));
            let m0: f64 = rule.weights.iter().sum();
            let m2: f64 = rule.weights.iter().zip(&rule.nodes).map(|(w, z)| w * z * z).sum();
            let m4: f64 = rule.weights.iter().zip(&rule.nodes).map(|(w, z)| w * z.powi(4)).sum();
            assert!((m0 - PI.sqrt()).abs() < 1e-12, "n={n} m0={m0}");
            assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-12, "n={n}");
            assert!((m4 - 3.0 * PI.sqrt() / 4.0).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn burgers_initial_and_boundary_values() {
        let nu = 0.01 / PI;
        assert_eq!(burgers_oracle(0.3, 0.0, nu).unwrap(), -(0.3 * PI).sin());
        for &t in &[0.1, 0.5, 1.0] {
            assert!(burgers_oracle(1.0, t, nu).unwrap().abs() < 1e-8);
            assert!(burgers_oracle(-1.0, t, nu).unwrap().abs() < 1e-8);
        }
        assert!(burgers_oracle(0.0, 0.5, -1.0).is_err());
    }

    #[test]
    fn burgers_matches_heat_limit_at_large_viscosity() {
        // For large ν and small amplitude effects the solution decays like the
        // heat equation only approximately; instead compare early time with a
        // first-order Taylor step of the equation itself.
        let nu = 0.1;
        let (x, dt) = (0.37, 1e-5);
        let u0 = -(PI * x).sin();
        let ux = -PI * (PI * x).cos();
        let uxx = PI * PI * (PI * x).sin();
        let expected = u0 + dt * (nu * uxx - u0 * ux);
        let got = burgers_oracle(x, dt, nu).unwrap();
        assert!((got - expected).abs() < 1e-7, "{got} vs {expected}");
    }

    #[test]
    fn flows_are_exact() {
        assert_eq!(logistic_flow(0.0, 5.0, 0.3), 0.0);
        assert_eq!(logistic_flow(1.0, 5.0, 0.3), 1.0);
        let (u0, rho, t): (f64, f64, f64) = (0.2, 5.0, 0.4);
        let closed = u0 * (rho * t).exp() / (1.0 - u0 + u0 * (rho * t).exp());
        assert!((logistic_flow(u0, rho, t) - closed).abs() < 1e-15);
        // composition property of a flow
        let a = cubic_flow(cubic_flow(0.3, 5.0, 5.0, 0.1), 5.0, 5.0, 0.2);
        let b = cubic_flow(0.3, 5.0, 5.0, 0.3);
        assert!((a - b).abs() < 1e-14);
        assert!((cubic_flow(0.3, 5.0, 5.0, 50.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_grid_is_checked() {
        let ts = [0.0, 0.5];
        let bad = linspace(0.0, 2.0 * PI, 16, true);
        assert!(reaction_diffusion_oracle(&bad, &ts, 3.0, 5.0).is_err());
    }

    #[test]
    fn reference_field_validation() {
        let m = BTreeMap::new();
        assert!(ReferenceField::new(vec![0.0, 1.0], vec![0.0], vec![1.0], Provenance::Analytic, m.clone()).is_err());
        assert!(ReferenceField::new(vec![1.0, 0.0], vec![0.0], vec![1.0, 2.0], Provenance::Analytic, m.clone()).is_err());
        assert!(ReferenceField::new(vec![0.0], vec![0.0], vec![f64::NAN], Provenance::Analytic, m).is_err());
    }
}
