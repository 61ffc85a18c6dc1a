//! Finite-difference verification of parameter gradients and coordinate jets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Eval;
use crate::error::{PixelError, Result};
use crate::net::{Model, SolutionField};
use crate::pde::{PdeKind, PdeProblem};
use crate::train::{build_model, loss_and_gradient, sample_point_set, LossWeights, PointSet, TrainConfig};

/// Worst errors found for one random model instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub pde: PdeKind,
    pub seed: u64,
    pub inverse: bool,
    pub params_checked: usize,
    pub max_param_rel_err: f64,
    pub points_checked: usize,
    /// Worst relative error of `(u_x, u_t, u_xx)` against differences of `u`.
    pub max_jet_rel_err: [f64; 3],
}

impl GradCheckReport {
    pub fn passes(&self, param_tol: f64, jet_tol: f64) -> bool {
        self.max_param_rel_err <= param_tol && self.max_jet_rel_err.iter().all(|&e| e <= jet_tol)
    }
}

/// Settings for [`check_instance`].
#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub grid: [usize; 4],
    pub hidden: Vec<usize>,
    pub n_points: usize,
    pub n_params: usize,
    pub n_jet_points: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { grid: [3, 2, 5, 6], hidden: vec![8], n_points: 12, n_params: 40, n_jet_points: 12 }
    }
}

/// Relative error with a floor, so components far below the gradient's
/// overall scale are judged against that scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Fourth-order central difference of `f` at `x` with step `h`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    let (p1, m1) = (f(x + h)?, f(x - h)?);
    let (p2, m2) = (f(x + 2.0 * h)?, f(x - 2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// Build a random PIXEL model for `pde` with non-trivial cell values. In
/// inverse mode the problem's learnable coefficients become parameters.
pub fn random_instance(
    pde: PdeKind,
    seed: u64,
    inverse: bool,
    settings: &GradCheckConfig,
) -> Result<(TrainConfig, PdeProblem, Model, PointSet)> {
    let mut config = TrainConfig::forward(pde);
    config.grid = settings.grid;
    config.hidden = settings.hidden.clone();
    config.seed = seed;
    config.n_res = settings.n_points;
    config.n_ic = settings.n_points;
    config.n_bc = settings.n_points;
    config.lambda_res = 0.5;
    let problem = config.problem()?;
    let coeffs: Vec<(String, f64)> = if inverse {
        problem.inverse_targets.iter().map(|n| (n.clone(), 0.7 * problem.coeff(n))).collect()
    } else {
        Vec::new()
    };
    let mut model = build_model(&config, &problem, &coeffs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let free = model.params().len() - coeffs.len();
    for p in &mut model.params_mut()[..free] {
        *p += rng.gen_range(-0.5..0.5);
    }
    let mut points = sample_point_set(&problem, &config, 0)?;
    if inverse {
        config.lambda_data = 1.0;
        let d = problem.domain;
        points.data = (0..settings.n_points)
            .map(|_| {
                let x = rng.gen_range(d.x_lo..d.x_hi);
                let t = rng.gen_range(d.t_lo..d.t_hi);
                (x, t, (x + t).sin())
            })
            .collect();
    }
    Ok((config, problem, model, points))
}

/// Compare the reverse-mode gradient of the total loss on a sample of
/// parameters, and the model's jets at random points, with finite differences.
pub fn check_instance(pde: PdeKind, seed: u64, inverse: bool, settings: &GradCheckConfig) -> Result<GradCheckReport> {
    let (config, problem, model, points) = random_instance(pde, seed, inverse, settings)?;
    let weights: LossWeights = config.weights();
    let params = model.params().to_vec();
    let loss_at = |p: &[f64]| -> Result<f64> {
        Ok(loss_and_gradient(&model, p, &problem, &points, &weights, 7)?.0.total)
    };
    let (_, grad) = loss_and_gradient(&model, &params, &problem, &points, &weights, 7)?;
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if !scale.is_finite() {
        return Err(PixelError::Numerical("non-finite gradient".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, params.len(), settings.n_params.min(params.len())).into_vec();
    // Always include the learnable coefficients.
    for n in model.coeff_names() {
        let i = model.coefficient_param(n).unwrap();
        if !idx.contains(&i) {
            idx.push(i);
        }
    }
    idx.sort_unstable();
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for &i in &idx {
        let h = 1e-4 * params[i].abs().max(1.0);
        let fd = central_difference(
            |v| {
                probe[i] = v;
                loss_at(&probe)
            },
            params[i],
            h,
        )?;
        probe[i] = params[i];
        worst = worst.max(rel_err(grad[i], fd, 1e-3 * scale));
    }

    let jet = check_jets(&model, &problem, seed, settings.n_jet_points)?;
    Ok(GradCheckReport {
        pde,
        seed,
        inverse,
        params_checked: idx.len(),
        max_param_rel_err: worst,
        points_checked: settings.n_jet_points,
        max_jet_rel_err: jet,
    })
}

/// Worst relative errors of the model's `(u_x, u_t, u_xx)` against
/// differences of its values at random interior points kept away from cell
/// boundaries, where the second derivative may jump.
pub fn check_jets(model: &Model, problem: &PdeProblem, seed: u64, n: usize) -> Result<[f64; 3]> {
    let d = problem.domain;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(29));
    let (hx, ht) = (1e-3 * d.width(), 1e-3 * d.height());
    let ctx = Eval::new(model.params());
    let mut worst = [0.0f64; 3];
    let mut done = 0;
    let mut tries = 0;
    while done < n {
        tries += 1;
        if tries > 1000 * n.max(1) {
            return Err(PixelError::Numerical("could not place jet test points".into()));
        }
        let x = rng.gen_range(d.x_lo + 0.05 * d.width()..d.x_hi - 0.05 * d.width());
        let t = rng.gen_range(d.t_lo + 0.05 * d.height()..d.t_hi - 0.05 * d.height());
        if let Model::Pixel(m) = model {
            let s = &m.stack.shape;
            let (xh, th) = m.stack.normalize(x, t)?;
            let gx = 3.0 * hx * (s.h - 1) as f64 / d.width();
            let gt = 3.0 * ht * (s.w - 1) as f64 / d.height();
            if near_node(xh, s.grids, gx) || near_node(th, s.grids, gt) {
                continue;
            }
        }
        let fe = model.eval(&ctx, x, t)?;
        let u = |x: f64, t: f64| model.value_at(x, t);
        let ux = central_difference(|v| u(v, t), x, hx)?;
        let ut = central_difference(|v| u(x, v), t, ht)?;
        let uxx = (-u(x + 2.0 * hx, t)? + 16.0 * u(x + hx, t)? - 30.0 * u(x, t)? + 16.0 * u(x - hx, t)?
            - u(x - 2.0 * hx, t)?)
            / (12.0 * hx * hx);
        let floor = 1e-2 * (1.0 + fe.jet.val.abs());
        let j = fe.jet;
        worst[0] = worst[0].max(rel_err(j.d1[0], ux, floor));
        worst[1] = worst[1].max(rel_err(j.d1[1], ut, floor));
        worst[2] = worst[2].max(rel_err(j.d2[0], uxx, floor));
        done += 1;
    }
    Ok(worst)
}

/// Whether normalized coordinate `q` is within `gap` of a node of any of the
/// `grids` shifted grids.
fn near_node(q: f64, grids: usize, gap: f64) -> bool {
    (0..grids).any(|m| {
        let s = q + m as f64 / grids as f64;
        (s - s.round()).abs() < gap
    })
}

/// Run [`check_instance`] on `count` instances cycling through the catalog,
/// alternating forward and inverse parameterizations where available.
pub fn check_catalog(count: usize, seed: u64, settings: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    (0..count)
        .map(|k| {
            let pde = PdeKind::ALL[k % PdeKind::ALL.len()];
            let inverse = (k / PdeKind::ALL.len()) % 2 == 1 && pde != PdeKind::Sinusoid;
            check_instance(pde, seed + k as u64, inverse, settings)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic_is_exact() {
        let d = central_difference(|x| Ok(x * x * x - 2.0 * x), 1.5, 0.1).unwrap();
        assert!((d - (3.0 * 2.25 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn near_node_detects_shifted_grids() {
        assert!(near_node(3.0, 1, 1e-3));
        assert!(near_node(3.5, 2, 1e-3));
        assert!(!near_node(3.25, 2, 1e-3));
    }

    #[test]
    fn convection_instance_passes() {
        let r = check_instance(PdeKind::Convection, 5, true, &GradCheckConfig::default()).unwrap();
        assert!(r.passes(1e-5, 1e-4), "{r:?}");
    }
}
