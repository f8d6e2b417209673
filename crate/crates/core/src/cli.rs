//! Command-line front end.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or the
//! experiment errors, 2 when the arguments do not parse.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::coefficients::{CoefficientSet, PresetParams};
use crate::experiments::{
    centering_experiment, kolmogorov_experiment, mollify_experiment, scaling_experiment, solve_experiment,
    uniqueness_experiment, CenteringConfig, ExperimentOutput, KolmogorovConfig, MollifyConfig, ScalingConfig,
    SolveConfig, SourceKind, UniquenessConfig,
};
use crate::tolerances::Tolerances;
use crate::Result;

#[derive(Debug, Parser)]
#[command(name = "hypoparam", version, about = "Frozen Gaussian kernels, parametrix solves and simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Euler terminal law of the Kolmogorov example against the closed-form density
    Kolmogorov(Flags),
    /// Derivative exponents, inverse covariance blocks, symmetry and backward residual of the frozen kernel
    Scaling(Flags),
    /// Shared-noise refinement distances on a preset and on the Lipschitz reference
    Uniqueness(Flags),
    /// Picard solve of the backward equation with derivative diagnostics
    Solve(Flags),
    /// Mollification error decay and box containment of the mollified D1F2
    Mollify(Flags),
    /// Residuals of the centering identities
    Centering(Flags),
}

#[derive(Debug, Clone, Args, Serialize)]
struct Flags {
    /// Coefficient preset: kolmogorov, holder, linear-gamma, lipschitz
    #[arg(long)]
    preset: Option<String>,
    /// Coupling in F2 = α·x1 (also Γ of the linear-gamma preset)
    #[arg(long)]
    alpha: Option<f64>,
    /// Hölder exponent of the holder preset and source
    #[arg(long)]
    beta: Option<f64>,
    /// Horizon
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Euler steps (kolmogorov) or time steps per unit time (solve)
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    /// Refinement levels (uniqueness), mollification levels (mollify) or scales (scaling)
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Nodes per axis: histogram bins, whitened sup grid, solve grid, mollify grid or centering quadrature
    #[arg(long)]
    grid: Option<usize>,
    /// Exponent of the Hölder modulus diagnostic
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Observation time of the kolmogorov experiment, end time of the centering checks
    #[arg(long)]
    s: Option<f64>,
    /// Coarsest step of the refinement experiment
    #[arg(long)]
    h0: Option<f64>,
    /// Coefficient of x2 in the linear-gamma preset
    #[arg(long)]
    kappa: Option<f64>,
    /// Half width of the solve box
    #[arg(long = "box")]
    half_width: Option<f64>,
    /// Solve source: holder or manufactured
    #[arg(long)]
    source: Option<String>,
    /// Geometric time panels of the representation quadrature
    #[arg(long)]
    time_panels: Option<usize>,
    /// Tolerance override, repeatable
    #[arg(long = "tol", value_name = "KEY=VALUE")]
    tol: Vec<String>,
}

impl Flags {
    fn params(&self) -> PresetParams {
        let d = PresetParams::default();
        let alpha = self.alpha.unwrap_or(d.alpha);
        PresetParams {
            alpha,
            beta: self.beta.unwrap_or(d.beta),
            gamma: self.alpha.unwrap_or(d.gamma),
            kappa: self.kappa.unwrap_or(d.kappa),
        }
    }

    fn preset(&self, default: &str) -> Result<String> {
        let name = self.preset.clone().unwrap_or_else(|| default.to_string());
        CoefficientSet::preset(&name, &self.params())?;
        Ok(name)
    }

    fn tolerances(&self) -> Result<Tolerances> {
        let mut t = Tolerances::default();
        for spec in &self.tol {
            t.apply(spec)?;
        }
        Ok(t)
    }
}

type Runner = Box<dyn FnOnce(&Tolerances) -> Result<ExperimentOutput>>;

/// Resolved configuration and the closure running it.
fn resolve(command: &Command) -> Result<(&'static str, &Flags, Value, Runner)> {
    Ok(match command {
        Command::Kolmogorov(f) => {
            let d = KolmogorovConfig::default();
            let cfg = KolmogorovConfig {
                alpha: f.alpha.unwrap_or(d.alpha),
                s: f.s.or(f.horizon).unwrap_or(d.s),
                paths: f.paths.unwrap_or(d.paths),
                steps: f.steps.unwrap_or(d.steps),
                seed: f.seed,
                bins: f.grid.unwrap_or(d.bins),
                ..d
            };
            ("kolmogorov", f, json!(cfg), Box::new(move |t| kolmogorov_experiment(&cfg, t)))
        }
        Command::Scaling(f) => {
            let d = ScalingConfig::default();
            let k_max = f.levels.map(|l| d.k_min + l.saturating_sub(1) as u32).unwrap_or(d.k_max);
            let cfg = ScalingConfig {
                alpha: f.alpha.unwrap_or(d.alpha),
                beta: f.beta.unwrap_or(d.beta),
                k_max,
                z_nodes: f.grid.unwrap_or(d.z_nodes),
                seed: f.seed,
                ..d
            };
            ("scaling", f, json!(cfg), Box::new(move |t| scaling_experiment(&cfg, t)))
        }
        Command::Uniqueness(f) => {
            let d = UniquenessConfig::default();
            let cfg = UniquenessConfig {
                preset: f.preset("holder")?,
                params: f.params(),
                h0: f.h0.unwrap_or(d.h0),
                levels: f.levels.unwrap_or(d.levels),
                paths: f.paths.unwrap_or(d.paths),
                seed: f.seed,
                horizon: f.horizon.unwrap_or(d.horizon),
            };
            ("uniqueness", f, json!(cfg), Box::new(move |t| uniqueness_experiment(&cfg, t)))
        }
        Command::Solve(f) => {
            let d = SolveConfig::default();
            let source = match &f.source {
                Some(s) => SourceKind::parse(s)?,
                None => d.source,
            };
            let default_box = if source == SourceKind::Manufactured { 3.0 } else { d.half_width };
            let mut quad = d.quad;
            if let Some(p) = f.time_panels {
                quad.time_panels = p;
            }
            let cfg = SolveConfig {
                preset: f.preset("holder")?,
                params: f.params(),
                source,
                horizon: f.horizon.unwrap_or(d.horizon),
                nodes: f.grid.unwrap_or(d.nodes),
                half_width: f.half_width.unwrap_or(default_box),
                steps_per_unit_time: f.steps.unwrap_or(d.steps_per_unit_time),
                gamma: f.gamma.unwrap_or(d.gamma),
                seed: f.seed,
                quad,
                ..d
            };
            ("solve", f, json!(cfg), Box::new(move |t| solve_experiment(&cfg, t)))
        }
        Command::Mollify(f) => {
            let d = MollifyConfig::default();
            let cfg = MollifyConfig {
                beta: f.beta.unwrap_or(d.beta),
                levels: f.levels.unwrap_or(d.levels),
                grid_points: f.grid.unwrap_or(d.grid_points),
                ..d
            };
            ("mollify", f, json!(cfg), Box::new(move |t| mollify_experiment(&cfg, t)))
        }
        Command::Centering(f) => {
            let d = CenteringConfig::default();
            let cfg = CenteringConfig {
                preset: f.preset("holder")?,
                params: f.params(),
                nodes: f.grid.unwrap_or(d.nodes),
                s: f.s.unwrap_or(d.s),
                ..d
            };
            ("centering", f, json!(cfg), Box::new(move |t| centering_experiment(&cfg, t)))
        }
    })
}

fn write_outputs(out: &Path, name: &str, csv: &str, summary: &Value) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{name}.csv")), csv)?;
    let mut text = serde_json::to_string_pretty(summary).expect("serializable summary");
    text.push('\n');
    fs::write(out.join(format!("{name}.summary.json")), text)
}

fn first_line(s: &str) -> &str {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or("error").trim()
}

/// Parses `argv` (program name first), runs the experiment, writes
/// `<out>/<subcommand>.csv` and `<out>/<subcommand>.summary.json` and
/// returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprintln!("{}", first_line(&e.to_string()));
                    2
                }
            };
        }
    };
    let (name, flags, config, runner) = match resolve(&cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let tol = match flags.tolerances() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let start = Instant::now();
    let result = runner(&tol);
    let elapsed = start.elapsed().as_secs_f64();
    let mut summary = json!({
        "subcommand": name,
        "seed": flags.seed,
        "config": config,
        "flags": flags,
        "tolerances": tol.section(name),
        "elapsed_seconds": elapsed,
    });
    let (csv, code) = match result {
        Ok(out) => {
            let pass = out.pass();
            for c in &out.checks {
                let value = c.value.map(|v| format!(" {v:.3e}")).unwrap_or_default();
                let bound = c.threshold.map(|v| format!(" (limit {v:.3e})")).unwrap_or_default();
                println!("{} {}{value}{bound}", if c.pass { "ok  " } else { "FAIL" }, c.name);
            }
            summary["checks"] = json!(out.checks);
            summary["details"] = out.details;
            summary["pass"] = json!(pass);
            (out.csv, if pass { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            summary["error"] = json!(e.to_string());
            summary["pass"] = json!(false);
            (String::new(), 1)
        }
    };
    if let Err(e) = write_outputs(&flags.out, name, &csv, &summary) {
        eprintln!("error: cannot write outputs to {}: {e}", flags.out.display());
        return 1;
    }
    println!("{name}: {}", if code == 0 { "PASS" } else { "FAIL" });
    code
}
