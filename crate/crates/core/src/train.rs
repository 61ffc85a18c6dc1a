//! Composite loss, point sampling and the training drivers.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::distributions::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Jet2, JetOps, Tape, Var};
use crate::error::{PixelError, Result};
use crate::grid::{GridShape, GridStack, Kernel};
use crate::net::{pinn_layers, Model, PinnModel, PixelModel, SolutionField};
use crate::optim::{lbfgs_step_from, LbfgsConfig, LbfgsState, StepReport};
use crate::pde::{make_problem, BcSample, BoundaryCondition, Edge, PdeKind, PdeProblem};
use crate::refsol::{reference_field, relative_l2, ReferenceField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pixel,
    Pinn,
}

/// Floating-point precision of a run. Only double precision is implemented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub pde: PdeKind,
    pub overrides: BTreeMap<String, f64>,
    pub model: ModelKind,
    /// `(M, c, H, W)`: grids, channels, spatial and temporal resolution.
    pub grid: [usize; 4],
    pub kernel: Kernel,
    /// Hidden widths of the PIXEL head.
    pub hidden: Vec<usize>,
    /// Full layer sizes of the coordinate baseline; catalog default if absent.
    pub pinn_layers: Option<Vec<usize>>,
    pub lambda_res: f64,
    pub lambda_ic: f64,
    pub lambda_bc: f64,
    pub lambda_data: f64,
    pub n_res: usize,
    pub n_ic: usize,
    pub n_bc: usize,
    pub n_data: usize,
    pub iterations: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub precision: Precision,
    /// Draw fresh collocation points every iteration. Defaults to true for
    /// PIXEL and false for the baseline.
    pub resample: Option<bool>,
    /// L-BFGS updates taken on each collocation sample before drawing the
    /// next one. Only meaningful when resampling.
    #[serde(default = "one")]
    pub updates_per_sample: usize,
    /// Points per reverse-mode tape.
    pub chunk: usize,
    pub history: usize,
    /// Initial values of the learned coefficients in inverse runs.
    pub inverse_init: BTreeMap<String, f64>,
}

fn one() -> usize {
    1
}

/// Default residual weight for forward and inverse runs.
pub fn default_lambda_res(kind: PdeKind, inverse: bool) -> f64 {
    match (kind, inverse) {
        (PdeKind::Convection, _) => 0.005,
        (PdeKind::ReactionDiffusion, false) => 0.01,
        (PdeKind::ReactionDiffusion, true) => 0.005,
        (PdeKind::Helmholtz2d, false) => 1e-4,
        (PdeKind::Helmholtz2d, true) => 1e-5,
        (PdeKind::AllenCahn, _) => 0.1,
        (PdeKind::Burgers, false) => 0.01,
        (PdeKind::Burgers, true) => 0.0005,
        (PdeKind::Sinusoid, _) => 0.1,
    }
}

/// Starting guesses for learned coefficients.
pub fn default_inverse_init(kind: PdeKind) -> BTreeMap<String, f64> {
    let pairs: &[(&str, f64)] = match kind {
        PdeKind::Convection => &[("beta", 1.0)],
        PdeKind::ReactionDiffusion => &[("nu", 1.0)],
        PdeKind::Helmholtz2d => &[("k", 0.5)],
        PdeKind::AllenCahn => &[("lambda", 1.0)],
        PdeKind::Burgers => &[("nu", 0.1)],
        PdeKind::Sinusoid => &[],
    };
    pairs.iter().map(|(n, v)| (n.to_string(), *v)).collect()
}

impl TrainConfig {
    /// Desk-scale forward defaults.
    pub fn forward(pde: PdeKind) -> Self {
        TrainConfig {
            pde,
            overrides: BTreeMap::new(),
            model: ModelKind::Pixel,
            grid: [16, 4, 16, 16],
            kernel: Kernel::Cosine,
            hidden: vec![16],
            pinn_layers: None,
            lambda_res: default_lambda_res(pde, false),
            lambda_ic: 1.0,
            lambda_bc: 1.0,
            lambda_data: 0.0,
            n_res: 20_000,
            n_ic: 5_000,
            n_bc: 5_000,
            n_data: 0,
            iterations: 1000,
            seed: 100,
            eval_every: 10,
            precision: Precision::F64,
            resample: None,
            updates_per_sample: 20,
            chunk: 512,
            history: 50,
            inverse_init: BTreeMap::new(),
        }
    }

    /// Desk-scale inverse defaults.
    pub fn inverse(pde: PdeKind) -> Self {
        let grids = if pde == PdeKind::Helmholtz2d { 16 } else { 32 };
        TrainConfig {
            grid: [grids, 4, 16, 16],
            lambda_res: default_lambda_res(pde, true),
            lambda_data: 1.0,
            n_data: 25_600,
            inverse_init: default_inverse_init(pde),
            ..TrainConfig::forward(pde)
        }
    }

    pub fn problem(&self) -> Result<PdeProblem> {
        let overrides: Vec<(String, f64)> = self.overrides.iter().map(|(k, v)| (k.clone(), *v)).collect();
        make_problem(self.pde, &overrides)
    }

    pub fn resamples(&self) -> bool {
        self.resample.unwrap_or(self.model == ModelKind::Pixel)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { res: self.lambda_res, ic: self.lambda_ic, bc: self.lambda_bc, data: self.lambda_data }
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.problem()?;
        for (name, w) in [
            ("lambda_res", self.lambda_res),
            ("lambda_ic", self.lambda_ic),
            ("lambda_bc", self.lambda_bc),
            ("lambda_data", self.lambda_data),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(PixelError::Config(format!("{name} must be a non-negative number, got {w}")));
            }
        }
        let active = |w: f64, n: usize, name: &str| {
            if w > 0.0 && n == 0 {
                Err(PixelError::Config(format!("{name} must be at least 1 while its loss term is active")))
            } else {
                Ok(())
            }
        };
        active(self.lambda_res, self.n_res, "n_res")?;
        if problem.has_ic {
            active(self.lambda_ic, self.n_ic, "n_ic")?;
        }
        active(self.lambda_bc, self.n_bc, "n_bc")?;
        if self.chunk == 0 || self.eval_every == 0 || self.updates_per_sample == 0 {
            return Err(PixelError::Config("chunk, eval_every and updates_per_sample must be positive".into()));
        }
        if self.model == ModelKind::Pixel {
            let [m, c, h, w] = self.grid;
            GridShape::new(m, c, h, w)?;
            problem.check_kernel(self.kernel)?;
            if self.hidden.iter().any(|&h| h == 0) {
                return Err(PixelError::Config("hidden widths must be positive".into()));
            }
        }
        for name in self.inverse_init.keys() {
            if !problem.inverse_targets.contains(name) {
                return Err(PixelError::Config(format!(
                    "'{}' cannot learn coefficient '{name}' (learnable: {:?})",
                    problem.kind, problem.inverse_targets
                )));
            }
        }
        Ok(())
    }
}

/// Build a freshly initialized model. `coeffs` become trainable parameters.
pub fn build_model(config: &TrainConfig, problem: &PdeProblem, coeffs: &[(String, f64)]) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    match config.model {
        ModelKind::Pixel => {
            problem.check_kernel(config.kernel)?;
            let [m, c, h, w] = config.grid;
            let stack = GridStack::new(GridShape::new(m, c, h, w)?, problem.domain, config.kernel);
            Ok(Model::Pixel(PixelModel::new(stack, &config.hidden, coeffs, &mut rng)?))
        }
        ModelKind::Pinn => {
            let sizes = match &config.pinn_layers {
                Some(s) => s.clone(),
                None => pinn_layers(problem.kind.name())?,
            };
            Ok(Model::Pinn(PinnModel::new(problem.domain, sizes, coeffs, &mut rng)?))
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Interior,
    Initial,
    Boundary,
}

impl Region {
    fn stream(self) -> u64 {
        match self {
            Region::Interior => 0,
            Region::Initial => 1,
            Region::Boundary => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Points {
    Interior(Vec<(f64, f64)>),
    Initial(Vec<f64>),
    Boundary(Vec<BcSample>),
}

/// Collocation, initial and boundary points of one iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub res: Vec<(f64, f64)>,
    pub ic: Vec<f64>,
    pub bc: Vec<BcSample>,
    /// Observations `(x, t, u)`.
    pub data: Vec<(f64, f64, f64)>,
}

fn region_rng(seed: u64, position: u64, region: Region) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(position.wrapping_mul(4).wrapping_add(region.stream()));
    rng
}

fn open01(rng: &mut ChaCha8Rng) -> f64 {
    Open01.sample(rng)
}

/// I.i.d. uniform points over a region, reproducible from `(seed, position)`.
pub fn sample_points(problem: &PdeProblem, seed: u64, position: u64, n: usize, region: Region) -> Result<Points> {
    let d = &problem.domain;
    let mut rng = region_rng(seed, position, region);
    let lerp = |lo: f64, hi: f64, u: f64| lo + (hi - lo) * u;
    Ok(match region {
        Region::Interior => Points::Interior(
            (0..n)
                .map(|_| {
                    let x = lerp(d.x_lo, d.x_hi, open01(&mut rng));
                    let t = lerp(d.t_lo, d.t_hi, open01(&mut rng));
                    (x, t)
                })
                .collect(),
        ),
        Region::Initial => {
            if !problem.has_ic {
                return Err(PixelError::Config(format!("'{}' has no initial condition", problem.kind)));
            }
            Points::Initial((0..n).map(|_| lerp(d.x_lo, d.x_hi, open01(&mut rng))).collect())
        }
        Region::Boundary => match &problem.bc {
            BoundaryCondition::Periodic { .. } => Points::Boundary(
                (0..n).map(|_| BcSample::Pair { t: lerp(d.t_lo, d.t_hi, open01(&mut rng)) }).collect(),
            ),
            BoundaryCondition::Dirichlet(edges) => {
                let lens: Vec<f64> = edges
                    .iter()
                    .map(|e| match e {
                        Edge::XLo | Edge::XHi => d.height(),
                        Edge::TLo | Edge::THi => d.width(),
                    })
                    .collect();
                let total: f64 = lens.iter().sum();
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut pick = open01(&mut rng) * total;
                    let mut k = 0;
                    while k + 1 < edges.len() && pick >= lens[k] {
                        pick -= lens[k];
                        k += 1;
                    }
                    let s = open01(&mut rng);
                    let (x, t) = match edges[k] {
                        Edge::XLo => (d.x_lo, lerp(d.t_lo, d.t_hi, s)),
                        Edge::XHi => (d.x_hi, lerp(d.t_lo, d.t_hi, s)),
                        Edge::TLo => (lerp(d.x_lo, d.x_hi, s), d.t_lo),
                        Edge::THi => (lerp(d.x_lo, d.x_hi, s), d.t_hi),
                    };
                    out.push(BcSample::Point { x, t });
                }
                Points::Boundary(out)
            }
        },
    })
}

/// Collocation, initial and boundary points for iteration `position`.
pub fn sample_point_set(problem: &PdeProblem, config: &TrainConfig, position: u64) -> Result<PointSet> {
    let mut set = PointSet::default();
    if let Points::Interior(p) = sample_points(problem, config.seed, position, config.n_res, Region::Interior)? {
        set.res = p;
    }
    if problem.has_ic {
        if let Points::Initial(p) = sample_points(problem, config.seed, position, config.n_ic, Region::Initial)? {
            set.ic = p;
        }
    }
    if let Points::Boundary(p) = sample_points(problem, config.seed, position, config.n_bc, Region::Boundary)? {
        set.bc = p;
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Loss

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub res: f64,
    pub ic: f64,
    pub bc: f64,
    pub data: f64,
}

impl LossWeights {
    fn as_array(&self) -> [f64; 4] {
        [self.res, self.ic, self.bc, self.data]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub res: f64,
    pub ic: f64,
    pub bc: f64,
    pub data: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Combine mean terms; the total is always recomputed from the terms.
    pub fn from_terms(terms: [f64; 4], w: &LossWeights) -> Self {
        let [res, ic, bc, data] = terms;
        let mut total = 0.0;
        for (t, l) in terms.iter().zip(w.as_array()) {
            if l != 0.0 {
                total += l * t;
            }
        }
        LossBreakdown { res, ic, bc, data, total }
    }
}

#[derive(Clone, Copy, Debug)]
enum Item {
    Res(f64, f64),
    Ic(f64),
    Bc(BcSample),
    Data(f64, f64, f64),
}

impl PointSet {
    fn counts(&self) -> [usize; 4] {
        [self.res.len(), self.ic.len(), self.bc.len(), self.data.len()]
    }

    fn len(&self) -> usize {
        self.counts().iter().sum()
    }

    fn item(&self, mut k: usize) -> (usize, Item) {
        if k < self.res.len() {
            let (x, t) = self.res[k];
            return (0, Item::Res(x, t));
        }
        k -= self.res.len();
        if k < self.ic.len() {
            return (1, Item::Ic(self.ic[k]));
        }
        k -= self.ic.len();
        if k < self.bc.len() {
            return (2, Item::Bc(self.bc[k]));
        }
        k -= self.bc.len();
        let (x, t, u) = self.data[k];
        (3, Item::Data(x, t, u))
    }
}

fn item_mismatches<C: JetOps, F: SolutionField>(
    ctx: &C,
    field: &F,
    problem: &PdeProblem,
    coeffs: &[C::V],
    item: Item,
    out: &mut Vec<C::V>,
) -> Result<()> {
    match item {
        Item::Res(x, t) => {
            let fe = field.eval(ctx, x, t)?;
            out.push(problem.residual(ctx, &fe, coeffs, x, t));
        }
        Item::Ic(x) => out.push(problem.ic_mismatch(ctx, field, x)?),
        Item::Bc(s) => problem.bc_mismatches(ctx, field, s, out)?,
        Item::Data(x, t, u) => {
            let fe = field.eval(ctx, x, t)?;
            out.push(ctx.offset(fe.u, -u));
        }
    }
    Ok(())
}

/// The full loss as a single node of `ctx`, with its breakdown.
///
/// Every term is the mean of squared residuals or mismatches over its point
/// set; empty sets contribute zero.
pub fn assemble_loss<C: JetOps, F: SolutionField>(
    ctx: &C,
    field: &F,
    problem: &PdeProblem,
    points: &PointSet,
    weights: &LossWeights,
) -> Result<(C::V, LossBreakdown)> {
    let coeffs = problem.resolve_coeffs(ctx, field);
    let counts = points.counts();
    let mut sums = [ctx.constant(Jet2::ZERO); 4];
    let mut buf = Vec::with_capacity(2);
    for k in 0..points.len() {
        let (kind, item) = points.item(k);
        buf.clear();
        item_mismatches(ctx, field, problem, &coeffs, item, &mut buf)?;
        for m in &buf {
            sums[kind] = ctx.add(sums[kind], ctx.square(*m));
        }
    }
    let mut terms = [0.0; 4];
    let mut total = ctx.constant(Jet2::ZERO);
    for kind in 0..4 {
        if counts[kind] == 0 {
            continue;
        }
        let mean = ctx.scale(sums[kind], 1.0 / counts[kind] as f64);
        terms[kind] = ctx.jet(&mean).val;
        let w = weights.as_array()[kind];
        if w != 0.0 {
            total = ctx.add(total, ctx.scale(mean, w));
        }
    }
    Ok((total, LossBreakdown::from_terms(terms, weights)))
}

/// Loss breakdown and parameter gradient, evaluated in fixed-size chunks.
///
/// Each chunk records its own tape and seeds every mismatch node with the
/// derivative of its weighted mean-square contribution. Chunks may run in
/// parallel; their partial sums are combined in chunk order, so the result
/// does not depend on the thread count.
pub fn loss_and_gradient<F: SolutionField + Sync>(
    field: &F,
    params: &[f64],
    problem: &PdeProblem,
    points: &PointSet,
    weights: &LossWeights,
    chunk: usize,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let counts = points.counts();
    let w = weights.as_array();
    let mut scale = [0.0; 4];
    for k in 0..4 {
        if counts[k] > 0 {
            scale[k] = 2.0 * w[k] / counts[k] as f64;
        }
    }
    let n = points.len();
    let chunk = chunk.max(1);
    let chunks: Vec<usize> = (0..n.div_ceil(chunk)).collect();
    let partials: Vec<Result<([f64; 4], Vec<f64>)>> = chunks
        .par_iter()
        .map(|&c| {
            let tape = Tape::new(params);
            let coeffs = problem.resolve_coeffs(&tape, field);
            let mut sums = [0.0; 4];
            let mut seeds: Vec<(Var, f64)> = Vec::with_capacity(chunk + 8);
            let mut buf = Vec::with_capacity(2);
            let (lo, hi) = (c * chunk, ((c + 1) * chunk).min(n));
            for k in lo..hi {
                if k == lo + 1 {
                    tape.reserve_scaled(hi - lo);
                }
                let (kind, item) = points.item(k);
                buf.clear();
                item_mismatches(&tape, field, problem, &coeffs, item, &mut buf)?;
                for m in &buf {
                    let v = m.value().val;
                    sums[kind] += v * v;
                    if scale[kind] != 0.0 {
                        seeds.push((*m, scale[kind] * v));
                    }
                }
            }
            let mut g = vec![0.0; params.len()];
            tape.backward(&seeds, &mut g)?;
            Ok((sums, g))
        })
        .collect();
    let mut sums = [0.0; 4];
    let mut grad = vec![0.0; params.len()];
    for part in partials {
        let (s, g) = part?;
        for k in 0..4 {
            sums[k] += s[k];
        }
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let mut terms = [0.0; 4];
    for k in 0..4 {
        if counts[k] > 0 {
            terms[k] = sums[k] / counts[k] as f64;
        }
    }
    Ok((LossBreakdown::from_terms(terms, weights), grad))
}

// ---------------------------------------------------------------------------
// Evaluation and drivers

/// Model values on a tensor grid, `x` major.
pub fn predict(model: &Model, xs: &[f64], ts: &[f64]) -> Result<Vec<f64>> {
    let cols: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&x| {
            let ctx = Eval::new(model.params());
            ts.iter().map(|&t| Ok(model.eval(&ctx, x, t)?.jet.val)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(cols.concat())
}

/// Relative L2 error of a model against a reference field.
pub fn evaluate(model: &Model, reference: &ReferenceField) -> Result<f64> {
    let pred = predict(model, &reference.xs, &reference.ts)?;
    relative_l2(&pred, &reference.u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    pub res: f64,
    pub ic: f64,
    pub bc: f64,
    pub data: f64,
    pub total: f64,
    pub rel_l2: f64,
    pub grad_norm: f64,
    pub step_len: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecord {
    pub iter: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "reason")]
pub enum RunStatus {
    Completed,
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<MetricRecord>,
    pub coefficients: Vec<CoefficientRecord>,
    pub steps: Vec<StepReport>,
    pub status: RunStatus,
}

impl TrainOutcome {
    pub fn final_rel_l2(&self) -> Option<f64> {
        self.history.last().map(|r| r.rel_l2)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Run<'a> {
    config: &'a TrainConfig,
    problem: PdeProblem,
    reference: &'a ReferenceField,
    data: Vec<(f64, f64, f64)>,
    started: Instant,
}

impl Run<'_> {
    fn points(&self, position: u64) -> Result<PointSet> {
        let mut set = sample_point_set(&self.problem, self.config, position)?;
        set.data = self.data.clone();
        Ok(set)
    }

    fn record(&self, iter: usize, b: &LossBreakdown, model: &Model, grad_norm: f64, step_len: f64) -> MetricRecord {
        let rel_l2 = evaluate(model, self.reference).unwrap_or(f64::NAN);
        MetricRecord {
            iter,
            res: b.res,
            ic: b.ic,
            bc: b.bc,
            data: b.data,
            total: b.total,
            rel_l2,
            grad_norm,
            step_len,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        }
    }

    fn coefficients(model: &Model, iter: usize) -> CoefficientRecord {
        CoefficientRecord { iter, values: model.coeff_values().into_iter().collect() }
    }

    fn train(&self, mut model: Model) -> Result<TrainOutcome> {
        let config = self.config;
        let weights = config.weights();
        let problem = &self.problem;
        let mut state = LbfgsState::new(LbfgsConfig { history: config.history, ..Default::default() });
        let mut history = Vec::new();
        let mut steps = Vec::new();
        let mut coefficients = vec![Self::coefficients(&model, 0)];

        let mut points = self.points(0)?;
        let (b0, g0) = loss_and_gradient(&model, model.params(), problem, &points, &weights, config.chunk)?;
        history.push(self.record(0, &b0, &model, norm(&g0), 0.0));
        if !b0.total.is_finite() {
            let status = RunStatus::Failed("non-finite initial loss".into());
            return Ok(TrainOutcome { model, history, coefficients, steps, status });
        }

        let mut status = RunStatus::Completed;
        let mut last_b = b0;
        let mut start = Some((b0.total, g0));
        let per_sample = config.updates_per_sample;
        for it in 0..config.iterations {
            if it > 0 && config.resamples() && it % per_sample == 0 {
                points = self.points((it / per_sample) as u64)?;
                start = None;
            }
            let mut seen: Vec<LossBreakdown> = Vec::new();
            let mut params = model.params().to_vec();
            let step = {
                let field = &model;
                let eval = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
                    let (b, g) = loss_and_gradient(field, p, problem, &points, &weights, config.chunk)?;
                    seen.push(b);
                    Ok((b.total, g))
                };
                lbfgs_step_from(&mut state, &mut params, start.take(), eval)
            };
            let report = match step {
                Ok(r) => r,
                Err(e) => {
                    status = RunStatus::Failed(format!("iteration {}: {e}", it + 1));
                    break;
                }
            };
            *model.params_mut() = params;
            if let Some(b) = seen.iter().find(|b| b.total.to_bits() == report.loss.to_bits()) {
                last_b = *b;
            }
            if let (Some(f), Some(g)) = (state.last_loss, state.last_grad.clone()) {
                start = Some((f, g));
            }
            let iter = it + 1;
            coefficients.push(Self::coefficients(&model, iter));
            let last = iter == config.iterations;
            let stop = report.converged && !config.resamples();
            if iter % config.eval_every == 0 || last || stop {
                let g = state.last_grad.as_deref().map(norm).unwrap_or(report.grad_norm);
                history.push(self.record(iter, &last_b, &model, g, report.step_len));
            }
            steps.push(report);
            if stop {
                break;
            }
        }
        if history.iter().any(|r| !r.total.is_finite() || !r.rel_l2.is_finite()) && status == RunStatus::Completed {
            status = RunStatus::Failed("non-finite metric recorded".into());
        }
        Ok(TrainOutcome { model, history, coefficients, steps, status })
    }
}

/// Forward training against the problem's default reference field.
pub fn train_forward(config: &TrainConfig) -> Result<TrainOutcome> {
    let problem = config.problem()?;
    let reference = reference_field(&problem)?;
    train_forward_with(config, &reference)
}

/// Forward training scored against a caller-supplied reference field.
pub fn train_forward_with(config: &TrainConfig, reference: &ReferenceField) -> Result<TrainOutcome> {
    config.validate()?;
    let problem = config.problem()?;
    let model = build_model(config, &problem, &[])?;
    let run = Run { config, problem, reference, data: Vec::new(), started: Instant::now() };
    run.train(model)
}

/// Joint fit of the field and the problem's learnable coefficients to
/// observations `(x, t, u)`.
pub fn train_inverse(
    config: &TrainConfig,
    observations: &[(f64, f64, f64)],
    reference: &ReferenceField,
) -> Result<TrainOutcome> {
    config.validate()?;
    let problem = config.problem()?;
    if problem.inverse_targets.is_empty() {
        return Err(PixelError::Config(format!("'{}' declares no inverse coefficients", problem.kind)));
    }
    if observations.is_empty() {
        return Err(PixelError::Config("inverse training needs observations".into()));
    }
    let init = if config.inverse_init.is_empty() { default_inverse_init(problem.kind) } else { config.inverse_init.clone() };
    let coeffs: Vec<(String, f64)> = problem
        .inverse_targets
        .iter()
        .map(|n| (n.clone(), init.get(n).copied().unwrap_or_else(|| problem.coeff(n))))
        .collect();
    let data = if config.n_data > 0 && config.n_data < observations.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(u64::MAX - 1);
        let mut picked = rand::seq::index::sample(&mut rng, observations.len(), config.n_data).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| observations[i]).collect()
    } else {
        observations.to_vec()
    };
    let model = build_model(config, &problem, &coeffs)?;
    let run = Run { config, problem, reference, data, started: Instant::now() };
    run.train(model)
}
