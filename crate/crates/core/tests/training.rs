use pixel_core::autodiff::{Jet2, JetOps, Seed, Tape};
use pixel_core::net::{FieldEval, SolutionField};
use pixel_core::optim::{lbfgs_step, LbfgsConfig, LbfgsState};
use pixel_core::pde::{make_problem, BcSample, ExactField, PdeKind};
use pixel_core::refsol::reference_field;
use pixel_core::train::{
    assemble_loss, build_model, loss_and_gradient, sample_point_set, sample_points, train_forward_with, LossBreakdown,
    LossWeights, PointSet, Points, Region, RunStatus, TrainConfig,
};
use pixel_core::Result;

fn small_config(pde: PdeKind) -> TrainConfig {
    TrainConfig {
        grid: [4, 4, 8, 8],
        hidden: vec![8],
        n_res: 300,
        n_ic: 100,
        n_bc: 100,
        iterations: 6,
        eval_every: 2,
        ..TrainConfig::forward(pde)
    }
}

/// 99th percentile of chi-square with 19 degrees of freedom.
const CHI2_19_99: f64 = 36.191;

fn chi_square(values: impl Iterator<Item = f64>, lo: f64, hi: f64) -> f64 {
    let mut bins = [0usize; 20];
    let mut n = 0;
    for v in values {
        let k = (((v - lo) / (hi - lo)) * 20.0) as usize;
        bins[k.min(19)] += 1;
        n += 1;
    }
    let expected = n as f64 / 20.0;
    bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn interior_samples_are_uniform_per_axis() {
    let p = make_problem(PdeKind::Convection, &[]).unwrap();
    let d = p.domain;
    let Points::Interior(pts) = sample_points(&p, 5, 3, 50_000, Region::Interior).unwrap() else { unreachable!() };
    let cx = chi_square(pts.iter().map(|q| q.0), d.x_lo, d.x_hi);
    let ct = chi_square(pts.iter().map(|q| q.1), d.t_lo, d.t_hi);
    assert!(cx < CHI2_19_99 && ct < CHI2_19_99, "chi-square {cx} {ct}");
    let Points::Initial(xs) = sample_points(&p, 5, 3, 50_000, Region::Initial).unwrap() else { unreachable!() };
    assert!(chi_square(xs.into_iter(), d.x_lo, d.x_hi) < CHI2_19_99);
    let Points::Boundary(bs) = sample_points(&p, 5, 3, 50_000, Region::Boundary).unwrap() else { unreachable!() };
    let ts = bs.iter().map(|b| match b {
        BcSample::Pair { t } => *t,
        BcSample::Point { t, .. } => *t,
    });
    assert!(chi_square(ts, d.t_lo, d.t_hi) < CHI2_19_99);
}

#[test]
fn exact_solution_has_negligible_loss() {
    for kind in [PdeKind::Convection, PdeKind::Helmholtz2d, PdeKind::Sinusoid] {
        let p = make_problem(kind, &[]).unwrap();
        let config = TrainConfig { n_res: 2000, n_ic: 500, n_bc: 500, ..TrainConfig::forward(kind) };
        let points = sample_point_set(&p, &config, 0).unwrap();
        let tape = Tape::new(&[]);
        let (_, b) = assemble_loss(&tape, &ExactField(&p), &p, &points, &config.weights()).unwrap();
        assert!(b.total <= 1e-8, "{kind}: {b:?}");
    }
}

#[test]
fn chunked_gradient_matches_single_tape_loss() {
    let config = small_config(PdeKind::Burgers);
    let p = config.problem().unwrap();
    let model = build_model(&config, &p, &[]).unwrap();
    let mut points = sample_point_set(&p, &config, 0).unwrap();
    points.data = vec![(0.1, 0.2, 0.3), (-0.5, 0.9, -0.1)];
    let weights = LossWeights { res: 0.3, ic: 1.0, bc: 2.0, data: 0.5 };

    let tape = Tape::new(model.params());
    let (total, whole) = assemble_loss(&tape, &model, &p, &points, &weights).unwrap();
    let g_whole = tape.gradient(total).unwrap();
    assert_eq!(tape.jet(&total).val.to_bits(), total.value().val.to_bits());

    for chunk in [1, 37, 4096] {
        let (b, g) = loss_and_gradient(&model, model.params(), &p, &points, &weights, chunk).unwrap();
        for (a, c) in [(b.res, whole.res), (b.ic, whole.ic), (b.bc, whole.bc), (b.data, whole.data), (b.total, whole.total)] {
            assert!((a - c).abs() <= 1e-12 * c.abs().max(1e-300), "chunk {chunk}: {a} vs {c}");
        }
        let scale = g_whole.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, c) in g.iter().zip(&g_whole) {
            assert!((a - c).abs() <= 1e-11 * scale);
        }
    }
}

#[test]
fn zero_data_weight_excludes_the_term_exactly() {
    let w = LossWeights { res: 0.5, ic: 1.0, bc: 1.0, data: 0.0 };
    let b = LossBreakdown::from_terms([2.0, 3.0, 4.0, f64::INFINITY], &w);
    assert_eq!(b.total, 0.5 * 2.0 + 3.0 + 4.0);
}

#[test]
fn doubling_points_moves_each_term_within_monte_carlo_error() {
    let config = TrainConfig { n_res: 2000, n_ic: 1000, n_bc: 1000, ..small_config(PdeKind::ReactionDiffusion) };
    let p = config.problem().unwrap();
    let model = build_model(&config, &p, &[]).unwrap();
    let w = config.weights();
    let term = |b: &LossBreakdown| [b.res, b.ic, b.bc];

    let estimate = |c: &TrainConfig, pos: u64| {
        let pts = sample_point_set(&p, c, pos).unwrap();
        term(&loss_and_gradient(&model, model.params(), &p, &pts, &w, 512).unwrap().0)
    };
    // Spread of the estimator at the base size from independent resamples.
    let reps: Vec<[f64; 3]> = (0..12).map(|k| estimate(&config, 100 + k)).collect();
    let doubled = TrainConfig { n_res: 4000, n_ic: 2000, n_bc: 2000, ..config.clone() };
    let big = estimate(&doubled, 7);
    let base = reps[0];
    for k in 0..3 {
        let mean = reps.iter().map(|r| r[k]).sum::<f64>() / reps.len() as f64;
        let var = reps.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
        let sigma = var.sqrt();
        assert!((big[k] - base[k]).abs() < 3.0 * sigma.max(1e-300) * 1.5_f64.sqrt(), "term {k}");
    }
}

#[test]
fn zero_iterations_record_only_the_initial_state() {
    let config = TrainConfig { iterations: 0, ..small_config(PdeKind::Convection) };
    let reference = reference_field(&config.problem().unwrap()).unwrap();
    let out = train_forward_with(&config, &reference).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0].iter, 0);
    assert!(out.steps.is_empty());
    assert_eq!(out.status, RunStatus::Completed);
}

#[test]
fn histories_are_ordered_finite_and_satisfy_the_breakdown_identity() {
    let config = small_config(PdeKind::ReactionDiffusion);
    let reference = reference_field(&config.problem().unwrap()).unwrap();
    let out = train_forward_with(&config, &reference).unwrap();
    assert_eq!(out.status, RunStatus::Completed);
    let iters: Vec<usize> = out.history.iter().map(|r| r.iter).collect();
    assert_eq!(iters, vec![0, 2, 4, 6]);
    let w = config.weights();
    for r in &out.history {
        let b = LossBreakdown::from_terms([r.res, r.ic, r.bc, r.data], &w);
        assert_eq!(b.total, r.total);
        assert!([r.res, r.ic, r.bc, r.total, r.rel_l2, r.grad_norm].iter().all(|v| v.is_finite()));
    }
    assert_eq!(out.coefficients.len(), 7);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let config = small_config(PdeKind::Convection);
    let reference = reference_field(&config.problem().unwrap()).unwrap();
    let a = train_forward_with(&config, &reference).unwrap();
    let b = train_forward_with(&config, &reference).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.steps, b.steps);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!((x.iter, x.total.to_bits(), x.rel_l2.to_bits()), (y.iter, y.total.to_bits(), y.rel_l2.to_bits()));
    }
    let other = TrainConfig { seed: config.seed + 1, ..config.clone() };
    let c = train_forward_with(&other, &reference).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn supervised_initial_fit_reaches_small_loss() {
    // No residual and no boundary term: plain regression onto the initial profile.
    let config = TrainConfig {
        lambda_res: 0.0,
        lambda_bc: 0.0,
        n_res: 1,
        n_bc: 1,
        n_ic: 1000,
        iterations: 500,
        eval_every: 100,
        ..TrainConfig::forward(PdeKind::Convection)
    };
    let reference = reference_field(&config.problem().unwrap()).unwrap();
    let out = train_forward_with(&config, &reference).unwrap();
    let last = out.history.last().unwrap();
    assert!(last.ic < 1e-4, "ic {}", last.ic);
}

/// The closed-form convection solution with `β` read from the parameters.
struct LearnableConvection {
    beta_true: f64,
}

impl SolutionField for LearnableConvection {
    fn eval<C: JetOps>(&self, ctx: &C, x: f64, t: f64) -> Result<FieldEval<C::V>> {
        let j = (Jet2::lift(x, Seed::X) - Jet2::lift(t, Seed::T).scale(self.beta_true)).sin();
        Ok(FieldEval::from_jet(ctx, ctx.constant(j)))
    }

    fn coefficient_param(&self, name: &str) -> Option<usize> {
        (name == "beta").then_some(0)
    }
}

#[test]
fn true_coefficients_are_a_fixed_point_of_the_inverse_objective() {
    let p = make_problem(PdeKind::Convection, &[]).unwrap();
    let field = LearnableConvection { beta_true: 30.0 };
    let config = TrainConfig { n_res: 1000, n_ic: 200, n_bc: 200, ..TrainConfig::inverse(PdeKind::Convection) };
    let mut points: PointSet = sample_point_set(&p, &config, 0).unwrap();
    points.data = (0..200)
        .map(|k| {
            let (x, t) = (0.03 * k as f64, 0.005 * k as f64);
            (x, t, (x - 30.0 * t).sin())
        })
        .collect();
    let w = config.weights();
    let mut params = vec![30.0];
    let mut state = LbfgsState::new(LbfgsConfig::default());
    for _ in 0..5 {
        lbfgs_step(&mut state, &mut params, |q: &[f64]| {
            let (b, g) = loss_and_gradient(&field, q, &p, &points, &w, 256)?;
            Ok((b.total, g))
        })
        .unwrap();
    }
    assert!((params[0] - 30.0).abs() <= 1e-6, "{}", params[0]);

    // Away from the truth the residual pulls the coefficient back.
    let (_, g) = loss_and_gradient(&field, &[27.0], &p, &points, &w, 256).unwrap();
    assert!(g[0] < 0.0);
}
