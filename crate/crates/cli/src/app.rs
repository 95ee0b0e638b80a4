//! Command-line flags and their merge over the config file.

use std::fs;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::config::{
    parse_config, parse_grid, parse_number, Command, GeometryConfig, PlotKind, RunConfig,
};
use crate::error::CliError;
use brinkman_core::mesh::BenchmarkLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeometryArg {
    #[value(name = "modified-beam-in-channel")]
    ModifiedBeamInChannel,
    Custom,
}

/// Brinkman penalization calibration: solves, sweeps, fits and plots.
///
/// Flags override the matching keys of `--config`. A run's manifest.toml is
/// a config that repeats the run.
#[derive(Debug, Parser)]
#[command(name = "brinkman", version)]
pub struct Cli {
    /// Command to run; may instead come from the config's `command` key.
    #[arg(value_enum)]
    pub command: Option<Command>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parameter values solved in parallel during a sweep.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub geometry: Option<GeometryArg>,
    /// Swept parameter: h, rho_f, mu, L_c or v_c.
    #[arg(long)]
    pub param: Option<String>,
    /// Swept parameter values, e.g. "1/70,1/50,1/30".
    #[arg(long, allow_hyphen_values = true)]
    pub values: Option<String>,
    /// alpha_max grid, e.g. "0,1e0..1e20".
    #[arg(long)]
    pub alpha_max_grid: Option<String>,
    /// Calibration law: h, mu, lc or vc.
    #[arg(long)]
    pub model: Option<String>,
    /// Fitted model file (TOML written by `fit`).
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Model coefficients instead of a model file, e.g. "62.9,7654,-56834".
    #[arg(long, allow_hyphen_values = true)]
    pub coefficients: Option<String>,
    /// Sweep table (CSV written by `sweep`).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Parameter value to predict at.
    #[arg(long, allow_hyphen_values = true)]
    pub parameter: Option<String>,
    /// Target leakage exponents, e.g. "-6" or "-4,-8".
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<String>,
    #[arg(long, value_enum)]
    pub plot_kind: Option<PlotKind>,
    #[arg(long)]
    pub h: Option<String>,
    #[arg(long = "L_c", alias = "lc")]
    pub l_c: Option<String>,
    #[arg(long)]
    pub alpha_max: Option<String>,
    #[arg(long)]
    pub mu: Option<String>,
    #[arg(long)]
    pub rho_f: Option<String>,
    #[arg(long)]
    pub v_c: Option<String>,
}

fn number(flag: &str, s: &str) -> Result<f64, CliError> {
    parse_number(s).ok_or_else(|| CliError::Config(format!("--{flag}: '{s}' is not a number")))
}

fn numbers(flag: &str, s: &str) -> Result<Vec<f64>, CliError> {
    parse_grid(s).map_err(|e| CliError::Config(format!("--{flag}: {e}")))
}

/// Config file (if any) with flags applied on top.
pub fn parse_args(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
        None => String::new(),
    };
    let mut c = parse_config(&text, cli.command)?;
    apply_flags(&mut c, cli)?;
    Ok(c)
}

fn apply_flags(c: &mut RunConfig, cli: &Cli) -> Result<(), CliError> {
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    if let Some(w) = cli.workers {
        c.workers = w;
    }
    match cli.geometry {
        Some(GeometryArg::ModifiedBeamInChannel)
            if !matches!(c.geometry, GeometryConfig::Preset(_)) =>
        {
            c.geometry = GeometryConfig::Preset(BenchmarkLayout::default())
        }
        Some(GeometryArg::Custom) if !matches!(c.geometry, GeometryConfig::Custom(_)) => {
            c.geometry = GeometryConfig::Custom(Vec::new())
        }
        _ => {}
    }
    if let Some(p) = &cli.param {
        c.sweep.param = Some(
            p.parse()
                .map_err(|e| CliError::Config(format!("--param: {e}")))?,
        );
    }
    if let Some(v) = &cli.values {
        let mut v = numbers("values", v)?;
        v.sort_by(f64::total_cmp);
        v.dedup();
        c.sweep.values = v;
    }
    if let Some(g) = &cli.alpha_max_grid {
        let mut g = numbers("alpha-max-grid", g)?;
        g.sort_by(f64::total_cmp);
        g.dedup();
        c.sweep.alpha_max_grid = g;
    }
    if let Some(m) = &cli.model {
        c.model.kind = Some(
            m.parse()
                .map_err(|e| CliError::Config(format!("--model: {e}")))?,
        );
    }
    if let Some(f) = &cli.model_file {
        c.model.file = Some(f.clone());
        c.plot.model_file = Some(f.clone());
    }
    if let Some(s) = &cli.coefficients {
        c.model.coefficients = Some(numbers("coefficients", s)?);
    }
    if let Some(t) = &cli.table {
        c.model.table = Some(t.clone());
        c.plot.table = Some(t.clone());
    }
    if let Some(p) = &cli.parameter {
        c.model.parameter = Some(number("parameter", p)?);
    }
    if let Some(q) = &cli.q {
        let q = numbers("q", q)?;
        c.model.q = q.clone();
        c.plot.q = q;
    }
    if let Some(k) = cli.plot_kind {
        c.plot.kind = k;
    }
    for (flag, value, slot) in [
        ("h", &cli.h, &mut c.h),
        ("L_c", &cli.l_c, &mut c.l_c),
        ("alpha-max", &cli.alpha_max, &mut c.brinkman.alpha_max),
        ("mu", &cli.mu, &mut c.flow.mu),
        ("rho-f", &cli.rho_f, &mut c.flow.rho_f),
        ("v-c", &cli.v_c, &mut c.flow.v_c),
    ] {
        if let Some(s) = value {
            *slot = number(flag, s)?;
        }
    }
    Ok(())
}
