use std::f64::consts::PI;

use pixel_core::autodiff::{Eval, Jet2};
use pixel_core::net::SolutionField;
use pixel_core::pde::{make_problem, ExactField, PdeKind, PdeProblem};
use pixel_core::refsol::{
    allen_cahn_oracle, burgers_oracle, linspace, reaction_diffusion_oracle, reaction_diffusion_oracle_with,
    reference_field,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// RMS residual of the closed-form solution, optionally with one operator
/// coefficient replaced.
fn residual_rms(problem: &PdeProblem, swap: Option<(&str, f64)>, n: usize) -> f64 {
    let ctx = Eval::new(&[]);
    let field = ExactField(problem);
    let mut coeffs = problem.resolve_coeffs(&ctx, &field);
    if let Some((name, v)) = swap {
        coeffs[problem.coeff_index(name).unwrap()] = Jet2::constant(v);
    }
    let d = problem.domain;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sum = 0.0;
    for _ in 0..n {
        let x = rng.gen_range(d.x_lo..d.x_hi);
        let t = rng.gen_range(d.t_lo..d.t_hi);
        let fe = field.eval(&ctx, x, t).unwrap();
        let r = problem.residual(&ctx, &fe, &coeffs, x, t).val;
        sum += r * r;
    }
    (sum / n as f64).sqrt()
}

#[test]
fn closed_forms_annihilate_their_operators() {
    for kind in [PdeKind::Convection, PdeKind::Helmholtz2d, PdeKind::Sinusoid] {
        let p = make_problem(kind, &[]).unwrap();
        let rms = residual_rms(&p, None, 1000);
        assert!(rms <= 1e-6, "{kind}: {rms}");
    }
    let hi = make_problem(PdeKind::Helmholtz2d, &[("a1".into(), 10.0), ("a2".into(), 10.0)]).unwrap();
    assert!(residual_rms(&hi, None, 1000) <= 1e-6);
}

#[test]
fn perturbed_coefficients_are_identifiable() {
    for (kind, name) in [(PdeKind::Convection, "beta"), (PdeKind::Helmholtz2d, "k")] {
        let truth = make_problem(kind, &[]).unwrap();
        let base = residual_rms(&truth, None, 1000);
        let off = residual_rms(&truth, Some((name, truth.coeff(name) * 1.1)), 1000);
        assert!(off > base + 1e-3, "{kind}: {off} vs {base}");
    }
}

#[test]
fn reaction_diffusion_without_reaction_is_heat_decay() {
    let nu = 0.7;
    let xs = linspace(0.0, 2.0 * PI, 64, false);
    let ts = [0.0, 0.1, 0.4, 1.0];
    let ic = |x: f64| 0.3 + x.sin() + 0.5 * (3.0 * x).cos();
    let field = reaction_diffusion_oracle_with(&xs, &ts, nu, 0.0, &ic).unwrap();
    for (i, &x) in xs.iter().enumerate() {
        for (j, &t) in ts.iter().enumerate() {
            let exact = 0.3 + (-nu * t).exp() * x.sin() + 0.5 * (-9.0 * nu * t).exp() * (3.0 * x).cos();
            assert!((field.value(i, j) - exact).abs() < 1e-10, "x={x} t={t}");
        }
    }
}

#[test]
fn reaction_diffusion_without_diffusion_is_logistic_growth() {
    let rho = 5.0;
    let xs = linspace(0.0, 2.0 * PI, 32, false);
    let ts = [0.0, 0.25, 1.0];
    let field = reaction_diffusion_oracle(&xs, &ts, 0.0, rho).unwrap();
    for (i, &x) in xs.iter().enumerate() {
        let u0 = (-(x - PI).powi(2) / (2.0 * (PI / 4.0).powi(2))).exp();
        for (j, &t) in ts.iter().enumerate() {
            let e = (rho * t).exp();
            let exact = u0 * e / (1.0 - u0 + u0 * e);
            assert!((field.value(i, j) - exact).abs() < 1e-9, "x={x} t={t}");
        }
    }
}

#[test]
fn reaction_diffusion_converges_under_grid_refinement() {
    let ts = linspace(0.0, 1.0, 5, true);
    let coarse = reaction_diffusion_oracle(&linspace(0.0, 2.0 * PI, 64, false), &ts, 3.0, 5.0).unwrap();
    let fine = reaction_diffusion_oracle(&linspace(0.0, 2.0 * PI, 128, false), &ts, 3.0, 5.0).unwrap();
    for i in 0..64 {
        for j in 0..ts.len() {
            assert!((coarse.value(i, j) - fine.value(2 * i, j)).abs() < 1e-5);
        }
    }
    assert!(fine.u.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
}

#[test]
fn allen_cahn_is_even_bounded_and_periodic() {
    let xs = linspace(-1.0, 1.0, 256, false);
    let ts = linspace(0.0, 1.0, 21, true);
    let field = allen_cahn_oracle(&xs, &ts, 5.0).unwrap();
    for j in 0..ts.len() {
        for i in 1..xs.len() {
            // x_i and -x_i = x_{256 - i} on the periodic grid.
            let mirror = xs.len() - i;
            assert!((field.value(i, j) - field.value(mirror, j)).abs() < 1e-8, "t={} i={i}", ts[j]);
        }
    }
    assert!(field.u.iter().all(|v| v.abs() <= 1.0 + 1e-8));
    // By t = 1 the profile has settled into the ±1 phases.
    let last = ts.len() - 1;
    let extreme = (0..xs.len()).map(|i| field.value(i, last).abs()).fold(0.0, f64::max);
    assert!(extreme > 0.95);
    let again = allen_cahn_oracle(&xs, &ts, 5.0).unwrap();
    assert_eq!(again, field);
}

/// Cole-Hopf integrals by a plain trapezoid rule on a fine grid.
fn burgers_trapezoid(x: f64, t: f64, nu: f64) -> f64 {
    let n = 400_000;
    let (a, b) = (-2.0, 2.0);
    let h = (b - a) / n as f64;
    let e = |eta: f64| -(PI * (x - eta)).cos() / (2.0 * PI * nu) - eta * eta / (4.0 * nu * t);
    let emax = (0..=n).map(|k| e(a + h * k as f64)).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=n {
        let eta = a + h * k as f64;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        let g = w * (e(eta) - emax).exp();
        num += g * (PI * (x - eta)).sin();
        den += g;
    }
    -num / den
}

#[test]
fn burgers_oracle_agrees_with_trapezoid_cole_hopf() {
    let nu = 0.01 / PI;
    for &t in &[0.1, 0.25, 0.5, 1.0] {
        for &x in &[-0.8, -0.3, -0.02, 0.0, 0.01, 0.45] {
            let got = burgers_oracle(x, t, nu).unwrap();
            let want = burgers_trapezoid(x, t, nu);
            assert!((got - want).abs() < 1e-6, "x={x} t={t}: {got} vs {want}");
        }
    }
    // The solution is odd in x.
    let u = burgers_oracle(0.37, 0.6, nu).unwrap();
    assert!((burgers_oracle(-0.37, 0.6, nu).unwrap() + u).abs() < 1e-9);
}

#[test]
fn reference_fields_are_deterministic() {
    for kind in [PdeKind::Convection, PdeKind::ReactionDiffusion] {
        let p = make_problem(kind, &[]).unwrap();
        assert_eq!(reference_field(&p).unwrap(), reference_field(&p).unwrap());
    }
}
