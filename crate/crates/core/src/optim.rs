//! L-BFGS with a strong-Wolfe line search on a flat parameter vector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{PixelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WolfeParams {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
}

impl Default for WolfeParams {
    fn default() -> Self {
        WolfeParams { c1: 1e-4, c2: 0.9, max_evals: 25 }
    }
}

/// One evaluated trial point of a line search.
#[derive(Clone, Debug)]
pub struct LinePoint<T> {
    pub alpha: f64,
    pub value: f64,
    pub slope: f64,
    pub payload: T,
}

#[derive(Clone, Debug)]
pub enum WolfeOutcome<T> {
    Accepted { point: LinePoint<T>, evals: usize },
    /// The evaluation budget ran out before a strong-Wolfe point was found.
    Exhausted { evals: usize },
}

/// Minimizer of the cubic through `(x1, f1, g1)` and `(x2, f2, g2)`,
/// clamped to `[lo, hi]`; the midpoint when the cubic has no minimizer.
pub fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, lo: f64, hi: f64) -> f64 {
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let m = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if m.is_finite() {
            return m.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

struct Search<'a, T, F> {
    phi: F,
    f0: f64,
    d0: f64,
    params: &'a WolfeParams,
    evals: usize,
    _t: std::marker::PhantomData<T>,
}

impl<T, F: FnMut(f64) -> Result<(f64, f64, T)>> Search<'_, T, F> {
    fn eval(&mut self, alpha: f64) -> Result<LinePoint<T>> {
        self.evals += 1;
        let (value, slope, payload) = (self.phi)(alpha)?;
        let (value, slope) = if value.is_finite() && slope.is_finite() {
            (value, slope)
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        Ok(LinePoint { alpha, value, slope, payload })
    }

    fn armijo_fails(&self, p: &LinePoint<T>) -> bool {
        p.value > self.f0 + self.params.c1 * p.alpha * self.d0
    }

    fn curvature_holds(&self, p: &LinePoint<T>) -> bool {
        p.slope.abs() <= -self.params.c2 * self.d0
    }

    fn zoom(&mut self, mut lo: LinePoint<T>, mut hi: LinePoint<T>) -> Result<WolfeOutcome<T>> {
        loop {
            if self.evals >= self.params.max_evals {
                return Ok(WolfeOutcome::Exhausted { evals: self.evals });
            }
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= 1e-16 * b.max(1e-300) {
                return Ok(WolfeOutcome::Exhausted { evals: self.evals });
            }
            let margin = 0.1 * width;
            let alpha = if hi.value.is_finite() {
                cubic_interpolate(lo.alpha, lo.value, lo.slope, hi.alpha, hi.value, hi.slope, a + margin, b - margin)
            } else {
                0.5 * (a + b)
            };
            let p = self.eval(alpha)?;
            if self.armijo_fails(&p) || p.value >= lo.value {
                hi = p;
            } else {
                if self.curvature_holds(&p) {
                    return Ok(WolfeOutcome::Accepted { point: p, evals: self.evals });
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
    }

    fn run(&mut self, alpha0: f64, zero: T) -> Result<WolfeOutcome<T>> {
        let mut prev = LinePoint { alpha: 0.0, value: self.f0, slope: self.d0, payload: zero };
        let mut alpha = alpha0;
        let mut first = true;
        loop {
            if self.evals >= self.params.max_evals {
                return Ok(WolfeOutcome::Exhausted { evals: self.evals });
            }
            let p = self.eval(alpha)?;
            if self.armijo_fails(&p) || (!first && p.value >= prev.value) {
                return self.zoom(prev, p);
            }
            if self.curvature_holds(&p) {
                return Ok(WolfeOutcome::Accepted { point: p, evals: self.evals });
            }
            if p.slope >= 0.0 {
                return self.zoom(p, prev);
            }
            let lo = p.alpha + 0.01 * (p.alpha - prev.alpha);
            let hi = 10.0 * p.alpha;
            let next = cubic_interpolate(prev.alpha, prev.value, prev.slope, p.alpha, p.value, p.slope, lo, hi);
            prev = p;
            alpha = next;
            first = false;
        }
    }
}

/// Strong-Wolfe line search by bracketing and cubic zoom.
///
/// `phi(α)` returns the objective, its directional derivative and an
/// arbitrary payload (typically the full gradient) at step `α`. `zero` is the
/// payload standing in for `α = 0`; it is never returned.
pub fn wolfe_search<T, F>(
    phi: F,
    f0: f64,
    d0: f64,
    alpha0: f64,
    zero: T,
    params: &WolfeParams,
) -> Result<WolfeOutcome<T>>
where
    F: FnMut(f64) -> Result<(f64, f64, T)>,
{
    if !(d0 < 0.0) {
        return Err(PixelError::Numerical(format!("line search needs a descent direction, slope {d0}")));
    }
    if !(alpha0 > 0.0) || !alpha0.is_finite() {
        return Err(PixelError::Numerical(format!("initial step {alpha0} must be positive")));
    }
    let mut s = Search { phi, f0, d0, params, evals: 0, _t: std::marker::PhantomData };
    s.run(alpha0, zero)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub history: usize,
    pub wolfe: WolfeParams,
    pub initial_step: f64,
    /// A step is reported as converged when the gradient sup-norm is at or
    /// below this value.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig { history: 50, wolfe: WolfeParams::default(), initial_step: 1.0, grad_tol: 0.0 }
    }
}

/// Optimizer memory carried between steps.
#[derive(Clone, Debug)]
pub struct LbfgsState {
    pub config: LbfgsConfig,
    s_hist: VecDeque<Vec<f64>>,
    y_hist: VecDeque<Vec<f64>>,
    rho_hist: VecDeque<f64>,
    pub iteration: usize,
    pub last_loss: Option<f64>,
    pub last_grad: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    /// Loss and directional derivative at the start of the step.
    pub loss_before: f64,
    pub slope_before: f64,
    /// Loss and directional derivative at the accepted point.
    pub loss: f64,
    pub slope: f64,
    /// Gradient norm at the start of the step.
    pub grad_norm: f64,
    pub alpha: f64,
    /// Euclidean length of the parameter update.
    pub step_len: f64,
    pub evals: usize,
    pub converged: bool,
    /// The line search failed and a backtracking gradient step was taken.
    pub fallback: bool,
    pub history_len: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl LbfgsState {
    pub fn new(config: LbfgsConfig) -> Self {
        LbfgsState {
            config,
            s_hist: VecDeque::new(),
            y_hist: VecDeque::new(),
            rho_hist: VecDeque::new(),
            iteration: 0,
            last_loss: None,
            last_grad: None,
        }
    }

    pub fn history_len(&self) -> usize {
        self.s_hist.len()
    }

    pub fn clear_history(&mut self) {
        self.s_hist.clear();
        self.y_hist.clear();
        self.rho_hist.clear();
    }

    /// Stores the pair when `sᵀy > 0`; returns whether it was kept.
    pub fn push_pair(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 0.0) || !sy.is_finite() {
            return false;
        }
        if self.config.history == 0 {
            return false;
        }
        while self.s_hist.len() >= self.config.history {
            self.s_hist.pop_front();
            self.y_hist.pop_front();
            self.rho_hist.pop_front();
        }
        self.s_hist.push_back(s);
        self.y_hist.push_back(y);
        self.rho_hist.push_back(1.0 / sy);
        true
    }

    /// `-H g` by the two-loop recursion. With no history this is `-g`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let k = self.s_hist.len();
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let a = self.rho_hist[i] * dot(&self.s_hist[i], &q);
            alphas[i] = a;
            for (qj, yj) in q.iter_mut().zip(&self.y_hist[i]) {
                *qj -= a * yj;
            }
        }
        if k > 0 {
            let (s, y) = (&self.s_hist[k - 1], &self.y_hist[k - 1]);
            let gamma = dot(s, y) / dot(y, y);
            for qj in q.iter_mut() {
                *qj *= gamma;
            }
        }
        for i in 0..k {
            let b = self.rho_hist[i] * dot(&self.y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s_hist[i]) {
                *qj += (alphas[i] - b) * sj;
            }
        }
        q
    }
}

/// One L-BFGS iteration on `params` in place.
///
/// `eval` must be deterministic for the duration of the call; it is invoked
/// once at the current point and then for every line-search trial.
pub fn lbfgs_step<F>(state: &mut LbfgsState, params: &mut [f64], eval: F) -> Result<StepReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    lbfgs_step_from(state, params, None, eval)
}

/// Like [`lbfgs_step`], but reuses a known loss and gradient at `params`
/// instead of evaluating there first.
pub fn lbfgs_step_from<F>(
    state: &mut LbfgsState,
    params: &mut [f64],
    start: Option<(f64, Vec<f64>)>,
    mut eval: F,
) -> Result<StepReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let fresh = start.is_none();
    let (f0, g0) = match start {
        Some(s) => s,
        None => eval(params)?,
    };
    if g0.len() != params.len() {
        return Err(PixelError::SizeMismatch { expected: params.len(), got: g0.len() });
    }
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(PixelError::Numerical(format!(
            "non-finite loss or gradient at iteration {} (loss {f0})",
            state.iteration
        )));
    }
    let iteration = state.iteration;
    state.iteration += 1;
    let grad_norm = norm(&g0);
    let sup = g0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut report = StepReport {
        iteration,
        loss_before: f0,
        slope_before: 0.0,
        loss: f0,
        slope: 0.0,
        grad_norm,
        alpha: 0.0,
        step_len: 0.0,
        evals: usize::from(fresh),
        converged: false,
        fallback: false,
        history_len: state.history_len(),
    };
    if sup <= state.config.grad_tol {
        report.converged = true;
        state.last_loss = Some(f0);
        state.last_grad = Some(g0);
        return Ok(report);
    }

    let mut d = state.direction(&g0);
    let mut d0 = dot(&d, &g0);
    if !(d0 < 0.0) || !d0.is_finite() {
        state.clear_history();
        d = g0.iter().map(|v| -v).collect();
        d0 = -grad_norm * grad_norm;
    }
    let alpha0 = if state.history_len() == 0 {
        let l1: f64 = g0.iter().map(|v| v.abs()).sum();
        state.config.initial_step.min(1.0 / l1)
    } else {
        state.config.initial_step
    };

    let base = params.to_vec();
    let mut trial = base.clone();
    let outcome = {
        let d = &d;
        let phi = |alpha: f64| -> Result<(f64, f64, Vec<f64>)> {
            for ((t, b), di) in trial.iter_mut().zip(&base).zip(d) {
                *t = b + alpha * di;
            }
            let (f, g) = eval(&trial)?;
            let slope = dot(&g, d);
            Ok((f, slope, g))
        };
        wolfe_search(phi, f0, d0, alpha0, Vec::new(), &state.config.wolfe)?
    };
    report.slope_before = d0;

    match outcome {
        WolfeOutcome::Accepted { point, evals } => {
            report.evals += evals;
            let s: Vec<f64> = d.iter().map(|di| point.alpha * di).collect();
            for (p, si) in params.iter_mut().zip(&s) {
                *p += si;
            }
            let y: Vec<f64> = point.payload.iter().zip(&g0).map(|(a, b)| a - b).collect();
            report.alpha = point.alpha;
            report.step_len = norm(&s);
            report.loss = point.value;
            report.slope = point.slope;
            state.push_pair(s, y);
            state.last_loss = Some(point.value);
            state.last_grad = Some(point.payload);
        }
        WolfeOutcome::Exhausted { evals } => {
            report.evals += evals;
            report.fallback = true;
            state.clear_history();
            let mut alpha = 1.0 / grad_norm;
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = base.iter().zip(&g0).map(|(b, g)| b - alpha * g).collect();
                let (f, g) = eval(&trial)?;
                report.evals += 1;
                if f.is_finite() && f <= f0 - 1e-4 * alpha * grad_norm * grad_norm {
                    accepted = Some((trial, f, g));
                    break;
                }
                alpha *= 0.5;
            }
            if let Some((trial, f, g)) = accepted {
                report.step_len = alpha * grad_norm;
                report.alpha = alpha;
                report.loss = f;
                report.slope = -dot(&g, &g0);
                params.copy_from_slice(&trial);
                state.last_loss = Some(f);
                state.last_grad = Some(g);
            } else {
                report.converged = true;
                state.last_loss = Some(f0);
                state.last_grad = Some(g0);
            }
        }
    }
    report.history_len = state.history_len();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad1d(a: f64) -> Result<(f64, f64, ())> {
        Ok(((a - 1.0).powi(2), 2.0 * (a - 1.0), ()))
    }

    #[test]
    fn quadratic_line_search() {
        let p = WolfeParams::default();
        match wolfe_search(quad1d, 1.0, -2.0, 3.0, (), &p).unwrap() {
            WolfeOutcome::Accepted { point, .. } => {
                assert!(point.value <= 1.0 + p.c1 * point.alpha * -2.0);
                assert!(point.slope.abs() <= p.c2 * 2.0);
                assert!((point.alpha - 1.0).abs() < 1e-8, "{}", point.alpha);
            }
            _ => panic!("expected acceptance"),
        }
    }

    #[test]
    fn linear_objective_exhausts_budget() {
        let p = WolfeParams::default();
        let out = wolfe_search(|a: f64| Ok((-a, -1.0, ())), 0.0, -1.0, 1.0, (), &p).unwrap();
        assert!(matches!(out, WolfeOutcome::Exhausted { evals } if evals == p.max_evals));
    }

    #[test]
    fn cosine_line_search() {
        let p = WolfeParams::default();
        let phi = |a: f64| Ok((a.cos(), -a.sin(), ()));
        // at α = 0 the slope is zero, so start just inside
        let a0 = 0.1f64;
        let (f0, d0) = (a0.cos(), -a0.sin());
        let shifted = |a: f64| phi(a0 + a);
        match wolfe_search(shifted, f0, d0, 0.1, (), &p).unwrap() {
            WolfeOutcome::Accepted { point, .. } => {
                let alpha = a0 + point.alpha;
                assert!(alpha > 0.0 && alpha < std::f64::consts::PI);
                assert!(point.value <= f0 + p.c1 * point.alpha * d0);
                assert!(point.slope.abs() <= p.c2 * d0.abs());
            }
            _ => panic!("expected acceptance"),
        }
    }

    #[test]
    fn ascent_direction_is_rejected() {
        assert!(wolfe_search(quad1d, 1.0, 2.0, 1.0, (), &WolfeParams::default()).is_err());
    }

    #[test]
    fn empty_history_gives_negative_gradient() {
        let st = LbfgsState::new(LbfgsConfig::default());
        assert_eq!(st.direction(&[1.0, -2.0]), vec![-1.0, 2.0]);
    }

    #[test]
    fn bad_pairs_are_skipped_and_history_bounded() {
        let mut st = LbfgsState::new(LbfgsConfig { history: 2, ..Default::default() });
        assert!(!st.push_pair(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(!st.push_pair(vec![1.0, 0.0], vec![0.0, 1.0]));
        for k in 1..5 {
            assert!(st.push_pair(vec![k as f64, 0.0], vec![1.0, 0.0]));
        }
        assert_eq!(st.history_len(), 2);
    }

    #[test]
    fn stationary_point_is_identity() {
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let mut p = vec![3.0, -1.0];
        let r = lbfgs_step(&mut st, &mut p, |_| Ok((7.0, vec![0.0, 0.0]))).unwrap();
        assert!(r.converged);
        assert_eq!(p, vec![3.0, -1.0]);
    }

    #[test]
    fn non_finite_start_aborts() {
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let mut p = vec![0.0];
        assert!(lbfgs_step(&mut st, &mut p, |_| Ok((f64::NAN, vec![1.0]))).is_err());
    }

    #[test]
    fn rosenbrock_converges() {
        let f = |p: &[f64]| {
            let (x, y) = (p[0], p[1]);
            let v = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let g = vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)];
            Ok((v, g))
        };
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let mut p = vec![-1.2, 1.0];
        let mut loss = f64::INFINITY;
        for _ in 0..100 {
            let r = lbfgs_step(&mut st, &mut p, f).unwrap();
            loss = r.loss;
            if loss < 1e-8 {
                break;
            }
        }
        assert!(loss < 1e-8, "loss {loss}");
    }
}
