//! The `igr` command-line front end.
//!
//! Every subcommand writes its tables plus a `manifest.json` under `--out`.
//! Exit codes: 0 success, 1 configuration or argument error, 2 divergence of
//! the requested run (outputs are still written), 3 I/O or IDX error.

pub mod config;
pub mod persist;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{physical_time_steps, RunConfig};
use crate::egr::{run_egr, EgrConfig};
use crate::error::{Error, Result};
use crate::flow::{estimate_local_order, Trajectory};
use crate::harness::{
    held_out_loss, ntk_check, perturb_robustness, run_preset_2d_until, run_sweep, train_classifier,
    Preset, SweepConfig, TrainOutcome, Variant,
};
use crate::model::{make_bilinear, make_mlp, LossModel, Mlp};
use crate::Targets;

use config::{DatasetRecord, ExperimentFile};
use persist::{num, OutputSet};

/// Version of the manifest layout.
pub const ARTIFACT_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Default step sizes for `order-check`.
pub const DEFAULT_ORDER_GRID: [f64; 5] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];

#[derive(Debug, Parser)]
#[command(name = "igr", version, about = "Gradient descent, its modified flow and implicit gradient regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Two-parameter experiment: one variant from a preset starting point.
    Flow2d(Flow2dArgs),
    /// One-step error orders of gradient descent against both flows.
    OrderCheck(OrderArgs),
    /// Train one MLP classifier.
    Train(ExperimentArgs),
    /// Train every (width, h) cell and rank-correlate λ with R_IG and test accuracy.
    Sweep(SweepArgs),
    /// Train one MLP, then measure accuracy and slope under parameter noise.
    Perturb(ExperimentArgs),
    /// Compare the kernel form of the modified loss on random least-squares problems.
    NtkCheck(NtkArgs),
    /// Explicit gradient regularization on a two-parameter preset.
    Egr(EgrArgs),
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Flow2dArgs {
    #[arg(long, value_parser = parse_preset)]
    preset: Preset,
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    /// Physical time to run to; defaults to the preset's horizon.
    #[arg(long)]
    horizon: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct OrderArgs {
    #[arg(long, value_parser = parse_preset, default_value = "point_I")]
    preset: Preset,
    /// Comma-separated step sizes.
    #[arg(long, value_delimiter = ',')]
    h_grid: Vec<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// TOML experiment file; desk-scale defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Maximum number of cells trained at once.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct NtkArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct EgrArgs {
    #[arg(long, value_parser = parse_preset, default_value = "point_I")]
    preset: Preset,
    /// Coefficient of ‖∇E‖²; defaults to half the preset's μ.
    #[arg(long)]
    mu: Option<f64>,
    /// Step size; defaults to the preset's reference step.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Status of one run inside an invocation.
#[derive(Debug, Clone, Serialize)]
struct RunStatus {
    name: String,
    termination: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    divergence: Option<String>,
}

/// What a subcommand produced, before it is written.
struct Report {
    config: Value,
    datasets: Value,
    runs: Vec<RunStatus>,
    summary: Value,
    outputs: OutputSet,
    lines: Vec<String>,
    diverged: bool,
}

impl Report {
    fn new(config: Value) -> Self {
        Report {
            config,
            datasets: Value::Null,
            runs: Vec::new(),
            summary: Value::Null,
            outputs: OutputSet::default(),
            lines: Vec::new(),
            diverged: false,
        }
    }

    fn add_trajectory(&mut self, name: &str, t: &Trajectory) {
        self.outputs.add("trajectory.csv", persist::trajectory_csv(t));
        if let Some(p) = persist::params_csv(t) {
            self.outputs.add("params.csv", p);
        }
        self.runs.push(RunStatus {
            name: name.to_owned(),
            termination: t.termination.as_str(),
            divergence: t.divergence.clone(),
        });
        self.diverged |= t.is_diverged();
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact_version: u32,
    tool_version: &'static str,
    command: &'a str,
    argv: &'a [String],
    config: &'a Value,
    datasets: &'a Value,
    started_unix: u64,
    finished_unix: u64,
    runs: &'a [RunStatus],
    summary: &'a Value,
    outputs: Vec<persist::OutputEntry>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGED,
        Error::Io { .. } | Error::Idx { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("igr: error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command, argv: &[String]) -> Result<i32> {
    let started = unix_now();
    let (name, out, report) = match command {
        Command::Flow2d(a) => ("flow2d", a.out.out.clone(), flow2d(&a)?),
        Command::OrderCheck(a) => ("order-check", a.out.out.clone(), order_check(&a)?),
        Command::Train(a) => ("train", a.out.out.clone(), train(&a)?),
        Command::Sweep(a) => ("sweep", a.out.out.clone(), sweep(&a)?),
        Command::Perturb(a) => ("perturb", a.out.out.clone(), perturb(&a)?),
        Command::NtkCheck(a) => ("ntk-check", a.out.out.clone(), ntk(&a)?),
        Command::Egr(a) => ("egr", a.out.out.clone(), egr(&a)?),
    };
    let Report {
        config,
        datasets,
        runs,
        summary,
        mut outputs,
        lines,
        diverged,
    } = report;
    let manifest = Manifest {
        artifact_version: ARTIFACT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command: name,
        argv,
        config: &config,
        datasets: &datasets,
        started_unix: started,
        finished_unix: unix_now(),
        runs: &runs,
        summary: &summary,
        outputs: outputs.entries(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::invalid(format!("manifest: {e}")))?;
    text.push('\n');
    outputs.add("manifest.json", text);
    outputs.commit(&out)?;
    for l in lines {
        println!("{l}");
    }
    if diverged {
        eprintln!("igr: run diverged; outputs written to {}", out.display());
        return Ok(EXIT_DIVERGED);
    }
    Ok(EXIT_OK)
}

fn flow2d(a: &Flow2dArgs) -> Result<Report> {
    let c = a.preset.constants();
    let horizon = a.horizon.unwrap_or(c.horizon);
    let t = run_preset_2d_until(a.preset, a.variant, horizon)?;
    let mut r = Report::new(json!({
        "preset": a.preset,
        "variant": a.variant,
        "horizon": horizon,
        "constants": c,
    }));
    r.add_trajectory(a.variant.as_str(), &t);
    let max_norm = t.rows.iter().map(|row| row.param_norm).fold(0.0, f64::max);
    let last = t.last_row();
    r.summary = json!({
        "final_params": t.final_params.as_slice(),
        "final_loss": last.map(|row| row.loss),
        "held_out_loss": held_out_loss(&t.final_params).ok(),
        "max_param_norm": max_norm,
        "rows": t.rows.len(),
    });
    r.lines.push(persist::summary_line(&[
        ("termination", t.termination.as_str().into()),
        ("a", num(t.final_params[0])),
        ("b", num(t.final_params[1])),
        ("E", last.map(|row| num(row.loss)).unwrap_or_default()),
    ]));
    Ok(r)
}

fn order_check(a: &OrderArgs) -> Result<Report> {
    let grid = if a.h_grid.is_empty() {
        DEFAULT_ORDER_GRID.to_vec()
    } else {
        a.h_grid.clone()
    };
    let c = a.preset.constants();
    let model = make_bilinear(c.x, c.y)?;
    let est = estimate_local_order(&model, &model.train_batch(), &c.theta0(), &grid)?;
    let mut r = Report::new(json!({ "preset": a.preset, "h_grid": grid, "theta0": [c.a0, c.b0] }));
    r.outputs.add("order_fit.csv", persist::order_csv(&est.rows));
    r.summary = json!({ "exact_fit": est.exact_fit, "modified_fit": est.modified_fit });
    r.lines.push(format!("order_exact={}", num(est.order_exact())));
    r.lines.push(format!("order_modified={}", num(est.order_modified())));
    Ok(r)
}

fn load_experiment(path: Option<&Path>) -> Result<ExperimentFile> {
    match path {
        Some(p) => ExperimentFile::load(p),
        None => Ok(ExperimentFile::default()),
    }
}

struct Prepared {
    cfg: ExperimentFile,
    train: crate::Batch,
    test: crate::Batch,
    classes: usize,
    datasets: Value,
}

fn prepare(path: Option<&Path>) -> Result<Prepared> {
    let cfg = load_experiment(path)?;
    let (train, test) = cfg.load_data()?;
    let classes = match train.batch().targets() {
        Targets::Classes { classes, .. } => *classes,
        Targets::Values(_) => return Err(Error::invalid("classification data expected")),
    };
    let datasets = json!({
        "train": DatasetRecord::from(&train),
        "test": DatasetRecord::from(&test),
    });
    Ok(Prepared {
        train: train.batch().clone(),
        test: test.batch().clone(),
        cfg,
        classes,
        datasets,
    })
}

fn config_value(cfg: &ExperimentFile) -> Value {
    serde_json::to_value(cfg).unwrap_or(Value::Null)
}

impl Prepared {
    fn model(&self, width: usize) -> Result<Mlp> {
        let mut widths = vec![self.train.input_dim()];
        widths.extend(std::iter::repeat_n(width, self.cfg.hidden_layers));
        widths.push(self.classes);
        make_mlp(&widths, self.cfg.activation, self.cfg.init_seed)
    }

    fn run(&self, h: f64) -> Result<RunConfig> {
        self.cfg.run_config(h, self.train.len())
    }

    fn train_one(&self, record_rows: bool) -> Result<(Mlp, TrainOutcome)> {
        let model = self.model(self.cfg.width)?;
        let out = train_classifier(
            &model,
            &model.initial_params(),
            &self.train,
            Some(&self.test),
            &self.run(self.cfg.h)?,
            record_rows,
        )?;
        Ok((model, out))
    }
}

fn stop_summary(model: &Mlp, out: &TrainOutcome) -> Value {
    json!({
        "m": model.param_count(),
        "lambda": out.h * model.param_count() as f64 / 4.0,
        "stop_iteration": out.stop_iteration,
        "stop_metrics": out.stop_metrics,
        "exclusion": out.exclusion.map(|e| e.as_str()),
        "checkpoints": out.checkpoints.len(),
    })
}

fn train(a: &ExperimentArgs) -> Result<Report> {
    let p = prepare(a.config.as_deref())?;
    let (model, out) = p.train_one(true)?;
    let mut r = Report::new(config_value(&p.cfg));
    r.datasets = p.datasets.clone();
    r.add_trajectory("train", &out.as_trajectory());
    r.summary = stop_summary(&model, &out);
    let mut line = vec![
        ("termination", out.termination.as_str().to_owned()),
        ("stop_iteration", out.stop_iteration.to_string()),
    ];
    if let Some(s) = out.stop_metrics {
        line.push(("train_acc", num(s.train_accuracy)));
        line.push(("test_acc", s.test_accuracy.map(num).unwrap_or_default()));
        line.push(("R_IG", num(s.r_ig)));
    }
    r.lines.push(persist::summary_line(&line));
    Ok(r)
}

fn sweep(a: &SweepArgs) -> Result<Report> {
    let p = prepare(a.config.as_deref())?;
    let sc = SweepConfig {
        h_grid: p.cfg.h_grid.clone(),
        width_grid: p.cfg.width_grid.clone(),
        hidden_layers: p.cfg.hidden_layers,
        activation: p.cfg.activation,
        run: p.run(p.cfg.h_grid[0])?,
    };
    let result = run_sweep(&sc, &p.train, &p.test, a.parallel)?;
    let mut r = Report::new(config_value(&p.cfg));
    r.datasets = p.datasets.clone();
    r.outputs.add("sweep.csv", persist::sweep_csv(&result));
    for rec in &result.records {
        r.runs.push(RunStatus {
            name: format!("width={} h={}", rec.width, num(rec.h)),
            termination: if rec.diverged { "diverged" } else { "stopped_by_criterion" },
            divergence: None,
        });
    }
    let rho_r = result.spearman_lambda_r_ig();
    let rho_acc = result.spearman_lambda_test_accuracy();
    r.summary = json!({
        "parallel": a.parallel,
        "included": result.included().count(),
        "spearman_lambda_r_ig": rho_r,
        "spearman_lambda_test_accuracy": rho_acc,
    });
    let show = |v: Option<f64>| v.map(num).unwrap_or_else(|| "undefined".into());
    r.lines.push(persist::summary_line(&[
        ("included", result.included().count().to_string()),
        ("spearman_lambda_r_ig", show(rho_r)),
        ("spearman_lambda_test_acc", show(rho_acc)),
    ]));
    Ok(r)
}

fn perturb(a: &ExperimentArgs) -> Result<Report> {
    let p = prepare(a.config.as_deref())?;
    let (model, out) = p.train_one(false)?;
    let mut r = Report::new(config_value(&p.cfg));
    r.datasets = p.datasets.clone();
    r.runs.push(RunStatus {
        name: "train".into(),
        termination: out.termination.as_str(),
        divergence: out.divergence.clone(),
    });
    r.summary = stop_summary(&model, &out);
    if out.stop_metrics.is_none() {
        r.diverged = true;
        return Ok(r);
    }
    let points = perturb_robustness(
        &model,
        &out.stop_params,
        &p.cfg.sigmas,
        p.cfg.realizations,
        p.cfg.noise_seed,
        &p.test,
    )?;
    r.outputs.add("robustness.csv", persist::robustness_csv(&points));
    for pt in &points {
        r.lines.push(persist::summary_line(&[
            ("sigma", num(pt.sigma)),
            ("accuracy_mean", num(pt.accuracy_mean)),
            ("slope_mean", num(pt.slope_mean)),
        ]));
    }
    Ok(r)
}

fn ntk(a: &NtkArgs) -> Result<Report> {
    if a.instances == 0 {
        return Err(Error::invalid("instances must be at least 1"));
    }
    if !(a.h.is_finite() && a.h > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {}", a.h)));
    }
    let rows = ntk_check(a.instances, a.seed, a.h)?;
    let worst = rows.iter().map(|row| row.rel_error).fold(0.0, f64::max);
    let mut r = Report::new(json!({ "instances": a.instances, "seed": a.seed, "h": a.h }));
    r.outputs.add("ntk_check.csv", persist::ntk_csv(&rows));
    r.summary = json!({ "max_rel_error": worst });
    r.lines.push(format!("max_rel_error={}", num(worst)));
    Ok(r)
}

fn egr(a: &EgrArgs) -> Result<Report> {
    let c = a.preset.constants();
    let mu = a.mu.unwrap_or(c.egr_mu());
    let h = a.h.unwrap_or(c.h_euler);
    let horizon = a.horizon.unwrap_or(c.horizon);
    let steps = physical_time_steps(h, horizon)?;
    let run = RunConfig::new(h, steps).with_eval_every((steps / 1000).max(1));
    let cfg = EgrConfig::new(mu, run);
    let model = make_bilinear(c.x, c.y)?;
    let t = run_egr(&model, &c.theta0(), &model.train_batch(), &cfg)?;
    let mut r = Report::new(json!({
        "preset": a.preset,
        "mu": mu,
        "h": h,
        "horizon": horizon,
        "converge_tol": cfg.run.converge_tol,
        "theta0": [c.a0, c.b0],
    }));
    r.add_trajectory("egr", &t);
    let balanced = (c.y / c.x).sqrt();
    let end = &t.final_params;
    r.summary = json!({
        "final_params": end.as_slice(),
        "final_loss": t.last_row().map(|row| row.loss),
        "final_regularized_loss": t.last_row().and_then(|row| row.regularized_loss),
        "distance_to_balanced_minimum": end.distance(&[balanced, balanced]),
        "iterations": t.steps.len(),
    });
    r.lines.push(persist::summary_line(&[
        ("termination", t.termination.as_str().into()),
        ("a", num(end[0])),
        ("b", num(end[1])),
        ("iterations", t.steps.len().to_string()),
    ]));
    Ok(r)
}
