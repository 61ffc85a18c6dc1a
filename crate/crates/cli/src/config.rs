//! Run configuration: catalog defaults, an optional JSON file and command-line
//! flags, merged in that order of increasing precedence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pixel_core::grid::Kernel;
use pixel_core::pde::PdeKind;
use pixel_core::train::{ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config file {path}: {source}")]
    Malformed { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Cli(#[from] clap::Error),
    #[error(transparent)]
    Core(#[from] pixel_core::PixelError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solve,
    Invert,
    Eval,
    Gradcheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exports {
    pub metrics: bool,
    pub field: bool,
    pub heatmap: bool,
    pub checkpoint: bool,
}

impl Default for Exports {
    fn default() -> Self {
        Exports { metrics: true, field: true, heatmap: true, checkpoint: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub out_dir: PathBuf,
    pub export: Exports,
    /// Model to score in `eval` mode.
    pub checkpoint: Option<PathBuf>,
    /// Field CSV whose reference column supplies inverse observations.
    pub observations: Option<PathBuf>,
    /// Random model instances checked by `gradcheck`.
    pub instances: usize,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.out_dir.exists() && !self.out_dir.is_dir() {
            return Err(invalid(format!("output path {} is not a directory", self.out_dir.display())));
        }
        match self.mode {
            Mode::Eval if self.checkpoint.is_none() => {
                return Err(invalid("eval needs --checkpoint"));
            }
            Mode::Gradcheck if self.instances == 0 => {
                return Err(invalid("gradcheck needs at least one instance"));
            }
            Mode::Invert => {
                let problem = self.train.problem()?;
                if problem.inverse_targets.is_empty() {
                    return Err(invalid(format!("'{}' has no learnable coefficients", problem.kind)));
                }
                if self.train.lambda_data <= 0.0 {
                    return Err(invalid("invert needs lambda_data > 0"));
                }
            }
            _ => {}
        }
        if self.mode != Mode::Gradcheck {
            self.train.validate()?;
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(name = "pixel", version, about = "Train and score physics-informed cell representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a forward solver from the PDE residual and side conditions.
    Solve(Flags),
    /// Recover PDE coefficients from observations.
    Invert(Flags),
    /// Score a saved checkpoint against the reference solution.
    Eval(Flags),
    /// Compare reverse-mode gradients and jets with finite differences.
    Gradcheck(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pde: Option<String>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Spatial by temporal resolution, e.g. 16x16.
    #[arg(long)]
    grid: Option<String>,
    /// Number of shifted grids.
    #[arg(long)]
    multigrid: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Hidden widths of the head, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    /// Layer sizes of the coordinate baseline, comma separated.
    #[arg(long)]
    pinn_layers: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    lambda_res: Option<f64>,
    #[arg(long)]
    lambda_ic: Option<f64>,
    #[arg(long)]
    lambda_bc: Option<f64>,
    #[arg(long)]
    lambda_data: Option<f64>,
    #[arg(long)]
    n_res: Option<usize>,
    #[arg(long)]
    n_ic: Option<usize>,
    #[arg(long)]
    n_bc: Option<usize>,
    #[arg(long)]
    n_data: Option<usize>,
    #[arg(long)]
    chunk: Option<usize>,
    /// L-BFGS history length.
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    resample: Option<bool>,
    /// L-BFGS updates per collocation sample.
    #[arg(long)]
    updates_per_sample: Option<usize>,
    /// PDE coefficient override, `name=value`; repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    /// Initial guess of a learned coefficient, `name=value`; repeatable.
    #[arg(long = "init", value_name = "NAME=VALUE")]
    init: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    no_metrics: bool,
    #[arg(long)]
    no_field: bool,
    #[arg(long)]
    no_heatmap: bool,
    #[arg(long)]
    no_checkpoint: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Pixel,
    Pinn,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Cosine,
    Linear,
}

/// Everything parsed from the command line.
#[derive(Debug)]
pub struct Invocation {
    pub config: RunConfig,
    pub dry_run: bool,
}

/// Top-level keys of a configuration file. All optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    mode: Option<Mode>,
    out_dir: Option<PathBuf>,
    export: Option<Exports>,
    checkpoint: Option<PathBuf>,
    observations: Option<PathBuf>,
    instances: Option<usize>,
    train: Option<Map<String, Value>>,
}

fn read_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Malformed { path: path.into(), source })
}

fn parse_pde(s: &str) -> Result<PdeKind, ConfigError> {
    s.parse().map_err(|_| {
        let known: Vec<&str> = PdeKind::ALL.iter().map(|k| k.name()).collect();
        invalid(format!("unknown PDE '{s}' (known: {})", known.join(", ")))
    })
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>, ConfigError> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| invalid(format!("bad {what} entry '{p}' in '{s}'"))))
        .collect()
}

fn parse_assignment(s: &str) -> Result<(String, f64), ConfigError> {
    let (name, value) = s.split_once('=').ok_or_else(|| invalid(format!("expected NAME=VALUE, got '{s}'")))?;
    let v: f64 = value.trim().parse().map_err(|_| invalid(format!("bad number in '{s}'")))?;
    Ok((name.trim().to_string(), v))
}

/// `16x16` into `(H, W)`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), ConfigError> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| invalid(format!("grid must look like HxW, got '{s}'")))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| invalid(format!("bad grid size '{s}'")));
    Ok((p(h)?, p(w)?))
}

/// Build a run configuration from command-line arguments (program name
/// first). Flags override the config file, which overrides catalog defaults.
pub fn parse_config<I, T>(args: I) -> Result<Invocation, ConfigError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let (mode, flags) = match cli.command {
        Command::Solve(f) => (Mode::Solve, f),
        Command::Invert(f) => (Mode::Invert, f),
        Command::Eval(f) => (Mode::Eval, f),
        Command::Gradcheck(f) => (Mode::Gradcheck, f),
    };
    resolve(mode, flags)
}

fn resolve(mode: Mode, flags: Flags) -> Result<Invocation, ConfigError> {
    let file = match &flags.config {
        Some(p) => read_file(p)?,
        None => FileConfig::default(),
    };
    if let Some(m) = file.mode {
        if m != mode {
            return Err(invalid(format!("config file is for mode {m:?}, not {mode:?}")));
        }
    }
    let file_train = file.train.unwrap_or_default();

    let pde = match (&flags.pde, file_train.get("pde")) {
        (Some(s), _) => parse_pde(s)?,
        (None, Some(Value::String(s))) => parse_pde(s)?,
        (None, Some(other)) => return Err(invalid(format!("pde must be a string, got {other}"))),
        (None, None) if mode == Mode::Gradcheck => PdeKind::Convection,
        (None, None) => return Err(invalid("no PDE given (use --pde or set train.pde)")),
    };
    let defaults = if mode == Mode::Invert { TrainConfig::inverse(pde) } else { TrainConfig::forward(pde) };
    let Value::Object(mut merged) = serde_json::to_value(&defaults).expect("defaults serialize") else {
        unreachable!("config serializes to an object")
    };
    for (k, v) in file_train {
        merged.insert(k, v);
    }
    let mut train: TrainConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| invalid(format!("train section: {e}")))?;
    apply_flags(&mut train, &flags, pde)?;

    let mut export = file.export.unwrap_or_default();
    export.metrics &= !flags.no_metrics;
    export.field &= !flags.no_field;
    export.heatmap &= !flags.no_heatmap;
    export.checkpoint &= !flags.no_checkpoint;

    let config = RunConfig {
        mode,
        out_dir: flags.out.or(file.out_dir).unwrap_or_else(|| PathBuf::from("runs").join(pde.name())),
        export,
        checkpoint: flags.checkpoint.or(file.checkpoint),
        observations: flags.observations.or(file.observations),
        instances: flags.instances.or(file.instances).unwrap_or(20),
        train,
    };
    config.validate()?;
    Ok(Invocation { config, dry_run: flags.dry_run })
}

fn apply_flags(c: &mut TrainConfig, f: &Flags, pde: PdeKind) -> Result<(), ConfigError> {
    c.pde = pde;
    if let Some(m) = f.model {
        c.model = match m {
            ModelArg::Pixel => ModelKind::Pixel,
            ModelArg::Pinn => ModelKind::Pinn,
        };
    }
    if let Some(g) = &f.grid {
        let (h, w) = parse_grid(g)?;
        c.grid[2] = h;
        c.grid[3] = w;
    }
    if let Some(m) = f.multigrid {
        c.grid[0] = m;
    }
    if let Some(ch) = f.channels {
        c.grid[1] = ch;
    }
    if let Some(k) = f.kernel {
        c.kernel = match k {
            KernelArg::Cosine => Kernel::Cosine,
            KernelArg::Linear => Kernel::Linear,
        };
    }
    if let Some(h) = &f.hidden {
        c.hidden = if h.trim().is_empty() { Vec::new() } else { parse_list(h, "hidden width")? };
    }
    if let Some(l) = &f.pinn_layers {
        c.pinn_layers = Some(parse_list(l, "layer size")?);
    }
    let set_usize = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set_usize(&mut c.iterations, f.iterations);
    set_usize(&mut c.eval_every, f.eval_every);
    set_usize(&mut c.n_res, f.n_res);
    set_usize(&mut c.n_ic, f.n_ic);
    set_usize(&mut c.n_bc, f.n_bc);
    set_usize(&mut c.n_data, f.n_data);
    set_usize(&mut c.chunk, f.chunk);
    set_usize(&mut c.history, f.history);
    set_usize(&mut c.updates_per_sample, f.updates_per_sample);
    for (dst, v) in [
        (&mut c.lambda_res, f.lambda_res),
        (&mut c.lambda_ic, f.lambda_ic),
        (&mut c.lambda_bc, f.lambda_bc),
        (&mut c.lambda_data, f.lambda_data),
    ] {
        if let Some(v) = v {
            *dst = v;
        }
    }
    if let Some(s) = f.seed {
        c.seed = s;
    }
    if let Some(r) = f.resample {
        c.resample = Some(r);
    }
    for a in &f.set {
        let (k, v) = parse_assignment(a)?;
        c.overrides.insert(k, v);
    }
    for a in &f.init {
        let (k, v) = parse_assignment(a)?;
        c.inverse_init.insert(k, v);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig, ConfigError> {
        let mut v = vec!["pixel"];
        v.extend_from_slice(args);
        parse_config(v).map(|i| i.config)
    }

    #[test]
    fn burgers_defaults_are_materialized() {
        let c = parse(&["solve", "--pde", "burgers"]).unwrap();
        assert_eq!(c.train.pde, PdeKind::Burgers);
        assert_eq!(c.train.lambda_res, 0.01);
        assert_eq!(c.train.grid, [16, 4, 16, 16]);
        assert_eq!(c.train.kernel, Kernel::Cosine);
        let inv = parse(&["invert", "--pde", "burgers"]).unwrap();
        assert_eq!(inv.train.lambda_res, 0.0005);
        assert_eq!(inv.train.lambda_data, 1.0);
        assert_eq!(inv.train.inverse_init.get("nu"), Some(&0.1));
    }

    #[test]
    fn grid_flags_compose() {
        let c = parse(&["solve", "--pde", "convection", "--grid", "16x16", "--multigrid", "96", "--channels", "4"]).unwrap();
        assert_eq!(c.train.grid, [96, 4, 16, 16]);
        let c = parse(&["solve", "--pde", "convection", "--grid", "8x32"]).unwrap();
        assert_eq!(c.train.grid, [16, 4, 8, 32]);
    }

    #[test]
    fn linear_kernel_rejected_for_second_order() {
        assert!(parse(&["solve", "--kernel", "linear", "--pde", "burgers"]).is_err());
        assert!(parse(&["solve", "--kernel", "linear", "--pde", "convection"]).is_ok());
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        assert!(parse(&["solve", "--pde", "navier_stokes"]).is_err());
        assert!(parse(&["solve"]).is_err());
        assert!(parse(&["solve", "--pde", "convection", "--grid", "16"]).is_err());
        assert!(parse(&["solve", "--pde", "convection", "--set", "gamma=1"]).is_err());
        assert!(parse(&["eval", "--pde", "convection"]).is_err());
        assert!(parse(&["invert", "--pde", "sinusoid"]).is_err());
    }

    #[test]
    fn file_values_sit_between_defaults_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"pde": "convection", "iterations": 7, "seed": 3}}"#).unwrap();
        let p = path.to_str().unwrap();
        let c = parse(&["solve", "--config", p, "--seed", "9"]).unwrap();
        assert_eq!((c.train.iterations, c.train.seed), (7, 9));
        assert_eq!(c.train.lambda_res, 0.005);

        std::fs::write(&path, r#"{"train": {"pde": "convection", "iters": 7}}"#).unwrap();
        assert!(parse(&["solve", "--config", p]).is_err());
        std::fs::write(&path, r#"{"trian": {}}"#).unwrap();
        assert!(parse(&["solve", "--config", p]).is_err());
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(parse(&["solve", "--config", p]), Err(ConfigError::Malformed { .. })));
    }

    #[test]
    fn render_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = parse(&[
            "invert", "--pde", "burgers", "--lambda-res", "0.1234567890123", "--set", "nu=0.0031830988618379067",
            "--init", "nu=0.2", "--out", "somewhere", "--no-heatmap",
        ])
        .unwrap();
        let path = dir.path().join("r.json");
        std::fs::write(&path, c.render()).unwrap();
        let back = parse(&["invert", "--config", path.to_str().unwrap()]).unwrap();
        assert_eq!(back, c);
        assert!(parse(&["solve", "--config", path.to_str().unwrap()]).is_err());
    }
}
