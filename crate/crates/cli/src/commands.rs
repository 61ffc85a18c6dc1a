use std::fs;
use std::io::Write;

use anyhow::{bail, Context, Result};
use pixel_core::gradcheck::{check_catalog, GradCheckConfig};
use pixel_core::io::{export_field, import_reference, load_checkpoint, render_heatmap, save_checkpoint, write_jsonl, write_metrics, Palette};
use pixel_core::net::Model;
use pixel_core::refsol::{reference_field, relative_l2, ReferenceField};
use pixel_core::train::{predict, train_forward_with, train_inverse, RunStatus, TrainOutcome};

use crate::config::{Invocation, Mode, RunConfig};

/// Training diverged or a check exceeded its tolerance.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numerical failure: {}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

pub const PARAM_TOL: f64 = 1e-5;
pub const JET_TOL: f64 = 1e-4;

pub fn run(inv: Invocation) -> Result<()> {
    let config = inv.config;
    if inv.dry_run {
        // A closed pipe (e.g. `| head`) is not an error here.
        let _ = writeln!(std::io::stdout().lock(), "{}", config.render());
        return Ok(());
    }
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating output directory {}", config.out_dir.display()))?;
    fs::write(config.out_dir.join("config.json"), config.render() + "\n")?;
    match config.mode {
        Mode::Solve => solve(&config),
        Mode::Invert => invert(&config),
        Mode::Eval => eval(&config),
        Mode::Gradcheck => gradcheck(&config),
    }
}

fn reference(config: &RunConfig) -> Result<ReferenceField> {
    let problem = config.train.problem()?;
    Ok(reference_field(&problem)?)
}

fn solve(config: &RunConfig) -> Result<()> {
    let reference = reference(config)?;
    let outcome = train_forward_with(&config.train, &reference)?;
    finish(config, &reference, &outcome)
}

fn invert(config: &RunConfig) -> Result<()> {
    let reference = reference(config)?;
    let observations = match &config.observations {
        Some(path) => import_reference(path)
            .with_context(|| format!("reading observations from {}", path.display()))?
            .observations(),
        None => reference.observations(),
    };
    let outcome = train_inverse(&config.train, &observations, &reference)?;
    if config.export.metrics {
        write_jsonl(&outcome.coefficients, &config.out_dir.join("coefficients.jsonl"))?;
    }
    finish(config, &reference, &outcome)
}

fn finish(config: &RunConfig, reference: &ReferenceField, outcome: &TrainOutcome) -> Result<()> {
    let dir = &config.out_dir;
    if config.export.metrics {
        write_metrics(&outcome.history, &dir.join("metrics.jsonl"))?;
    }
    let status = &outcome.status;
    if *status == RunStatus::Completed {
        export(config, &outcome.model, reference)?;
    }
    let summary = serde_json::json!({
        "pde": config.train.pde,
        "status": status,
        "iterations": outcome.steps.len(),
        "rel_l2": outcome.final_rel_l2(),
        "coefficients": outcome.model.coeff_values().into_iter().collect::<std::collections::BTreeMap<_, _>>(),
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let last = outcome.history.last();
    println!(
        "{} {}: {} iterations, loss {:.4e}, relative L2 {:.4e}",
        config.train.pde,
        match config.mode {
            Mode::Invert => "invert",
            _ => "solve",
        },
        outcome.steps.len(),
        last.map_or(f64::NAN, |r| r.total),
        last.map_or(f64::NAN, |r| r.rel_l2),
    );
    for (name, value) in outcome.model.coeff_values() {
        println!("  {name} = {value:.6e}");
    }
    if let RunStatus::Failed(reason) = status {
        return Err(NumericalFailure(reason.clone()).into());
    }
    Ok(())
}

fn export(config: &RunConfig, model: &Model, reference: &ReferenceField) -> Result<f64> {
    let dir = &config.out_dir;
    let pred = predict(model, &reference.xs, &reference.ts)?;
    let rel = relative_l2(&pred, &reference.u)?;
    if config.export.field {
        export_field(&dir.join("field.csv"), reference, &pred)?;
    }
    if config.export.heatmap {
        let (nx, nt) = (reference.xs.len(), reference.ts.len());
        render_heatmap(&pred, nx, nt, &dir.join("u_pred.ppm"), Palette::Diverging)?;
        let err: Vec<f64> = pred.iter().zip(&reference.u).map(|(p, r)| (p - r).abs()).collect();
        render_heatmap(&err, nx, nt, &dir.join("abs_err.ppm"), Palette::Gray)?;
    }
    if config.export.checkpoint {
        save_checkpoint(model, &dir.join("model.ckpt"))?;
    }
    Ok(rel)
}

fn eval(config: &RunConfig) -> Result<()> {
    let path = config.checkpoint.as_deref().expect("validated");
    let model = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let problem = config.train.problem()?;
    if model.domain() != &problem.domain {
        bail!(pixel_core::PixelError::Config(format!(
            "checkpoint domain {:?} does not match '{}'",
            model.domain(),
            problem.kind
        )));
    }
    let reference = reference_field(&problem)?;
    let mut exports = config.clone();
    exports.export.checkpoint = false;
    let rel = export(&exports, &model, &reference)?;
    let summary = serde_json::json!({ "pde": problem.kind, "checkpoint": path, "rel_l2": rel });
    fs::write(config.out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("{}: relative L2 {rel:.6e}", problem.kind);
    Ok(())
}

fn gradcheck(config: &RunConfig) -> Result<()> {
    let reports = check_catalog(config.instances, config.train.seed, &GradCheckConfig::default())?;
    let mut failed = 0;
    for r in &reports {
        let ok = r.passes(PARAM_TOL, JET_TOL);
        failed += usize::from(!ok);
        println!(
            "{} {:<18} seed {:<4} {} params {:.2e}  u_x {:.2e}  u_t {:.2e}  u_xx {:.2e}",
            if ok { "ok  " } else { "FAIL" },
            r.pde.name(),
            r.seed,
            if r.inverse { "inverse" } else { "forward" },
            r.max_param_rel_err,
            r.max_jet_rel_err[0],
            r.max_jet_rel_err[1],
            r.max_jet_rel_err[2],
        );
    }
    if config.export.metrics {
        write_jsonl(&reports, &config.out_dir.join("gradcheck.jsonl"))?;
    }
    if failed > 0 {
        return Err(NumericalFailure(format!("{failed} of {} instances exceed tolerance", reports.len())).into());
    }
    Ok(())
}
