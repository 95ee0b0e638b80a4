//! Run configuration: a TOML file of flat sections, overridden by flags.
//!
//! ```toml
//! command = "sweep"
//! out = "runs/h"
//!
//! [mesh]
//! h = "1/50"
//!
//! [sweep]
//! param = "h"
//! values = "1/70,1/50,1/30"
//! alpha_max_grid = "0,1e0..1e20"
//! ```
//!
//! Numbers may be TOML numbers or strings such as `"1e8"` and `"1/30"`.
//! A manifest written by a run is itself a valid config for the same run.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use brinkman_core::calibration::{decade_range, ModelKind, SweepParam, SweepSpec};
use brinkman_core::fem::{BrinkmanParams, FlowParams};
use brinkman_core::mesh::{
    BenchmarkLayout, GeometrySpec, MeshSpec, Rect, RegionKind, SolidRegion, BENCHMARK_PRESET,
};
use brinkman_core::solver::{InitialGuess, SolveSettings};
use clap::ValueEnum;
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Solve,
    Reference,
    Sweep,
    Fit,
    Predict,
    Validate,
    Plot,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Reference => "reference",
            Self::Sweep => "sweep",
            Self::Fit => "fit",
            Self::Predict => "predict",
            Self::Validate => "validate",
            Self::Plot => "plot",
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_str_name(s).ok_or_else(|| {
            CliError::Config(format!(
                "command: unknown command '{s}', expected solve|reference|sweep|fit|predict|validate|plot"
            ))
        })
    }
}

impl Command {
    fn from_str_name(s: &str) -> Option<Self> {
        Self::value_variants()
            .iter()
            .copied()
            .find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    #[value(name = "loglog_sweep")]
    LoglogSweep,
    #[value(name = "fit_check")]
    FitCheck,
    #[value(name = "error_bars")]
    ErrorBars,
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LoglogSweep => "loglog_sweep",
            Self::FitCheck => "fit_check",
            Self::ErrorBars => "error_bars",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryConfig {
    /// The benchmark preset with its offsets at unit scale.
    Preset(BenchmarkLayout),
    /// Solid rectangles in meters at the configured `L_c`.
    Custom(Vec<Rect>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub param: Option<SweepParam>,
    pub values: Vec<f64>,
    pub alpha_max_grid: Vec<f64>,
}

/// Settings of the fit, predict and validate commands.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: Option<ModelKind>,
    /// Sweep table to fit or validate against.
    pub table: Option<PathBuf>,
    /// Fitted model to predict with or validate.
    pub file: Option<PathBuf>,
    /// Coefficients given directly instead of a model file.
    pub coefficients: Option<Vec<f64>>,
    /// Fit cells; default selection when absent.
    pub fit_values: Option<Vec<f64>>,
    pub fit_alphas: Option<Vec<f64>>,
    pub parameter: Option<f64>,
    /// Target leakage exponents.
    pub q: Vec<f64>,
    pub held_out_only: bool,
    pub max_v_solid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotConfig {
    pub kind: PlotKind,
    pub table: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub out: PathBuf,
    pub workers: usize,
    pub flow: FlowParams,
    pub brinkman: BrinkmanParams,
    pub l_c: f64,
    pub h: f64,
    pub h_over_lc: f64,
    pub geometry: GeometryConfig,
    pub settings: SolveSettings,
    pub sweep: SweepConfig,
    pub model: ModelConfig,
    pub plot: PlotConfig,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let mut alpha_max_grid = vec![0.0];
        alpha_max_grid.extend(decade_range(0, 20));
        Self {
            command,
            out: PathBuf::from("out"),
            workers: 1,
            flow: FlowParams::default(),
            brinkman: BrinkmanParams::default(),
            l_c: 1.0,
            h: 0.01,
            h_over_lc: 0.01,
            geometry: GeometryConfig::Preset(BenchmarkLayout::default()),
            settings: SolveSettings::default(),
            sweep: SweepConfig {
                param: None,
                values: Vec::new(),
                alpha_max_grid,
            },
            model: ModelConfig {
                kind: None,
                table: None,
                file: None,
                coefficients: None,
                fit_values: None,
                fit_alphas: None,
                parameter: None,
                q: Vec::new(),
                held_out_only: false,
                max_v_solid: 1e-2,
            },
            plot: PlotConfig {
                kind: PlotKind::LoglogSweep,
                table: None,
                model_file: None,
                q: Vec::new(),
            },
        }
    }

    pub fn mesh_spec(&self) -> MeshSpec {
        MeshSpec::channel(self.l_c, self.h)
    }

    /// Geometry at the configured `L_c`.
    pub fn geometry_spec(&self) -> Result<GeometrySpec, CliError> {
        let g = match &self.geometry {
            GeometryConfig::Preset(layout) => brinkman_core::mesh::scale_geometry(
                &GeometrySpec::modified_beam_in_channel(*layout),
                self.l_c,
            )
            .map_err(|e| CliError::Config(format!("mesh.L_c: {e}")))?,
            GeometryConfig::Custom(rects) => GeometrySpec {
                channel_width: self.l_c,
                channel_length: 2.0 * self.l_c,
                regions: rects
                    .iter()
                    .map(|&rect| SolidRegion {
                        kind: RegionKind::Custom,
                        rect,
                    })
                    .collect(),
            },
        };
        g.validate()
            .map_err(|e| CliError::Config(format!("geometry: {e}")))?;
        Ok(g)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec, CliError> {
        let param = self.sweep.param.ok_or_else(|| {
            CliError::Config("sweep.param: required for sweep (h|rho_f|mu|L_c|v_c)".into())
        })?;
        if self.sweep.values.is_empty() {
            return Err(CliError::Config(
                "sweep.values: required for sweep, e.g. \"1/70,1/50,1/30\"".into(),
            ));
        }
        let mut spec = SweepSpec::new(param, self.sweep.values.clone())
            .with_alphas(self.sweep.alpha_max_grid.clone());
        spec.flow = self.flow;
        spec.brinkman = self.brinkman;
        spec.l_c = self.l_c;
        spec.h = self.h;
        spec.h_over_lc = self.h_over_lc;
        spec.geometry = self.geometry_spec()?;
        spec.settings = self.settings;
        Ok(spec)
    }

    /// Checks parameters and referenced files before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |key: &str, e: &dyn std::fmt::Display| CliError::Config(format!("{key}: {e}"));
        self.flow.validate().map_err(|e| cfg("flow", &e))?;
        self.brinkman.validate().map_err(|e| cfg("brinkman", &e))?;
        self.settings.validate().map_err(|e| cfg("solver", &e))?;
        if self.workers == 0 {
            return Err(CliError::Config("workers: must be >= 1".into()));
        }
        self.mesh_spec().validate().map_err(|e| cfg("mesh", &e))?;
        match self.command {
            Command::Solve | Command::Reference => {
                let g = self.geometry_spec()?;
                let mesh = brinkman_core::mesh::build_mesh(&self.mesh_spec())
                    .map_err(|e| cfg("mesh", &e))?;
                brinkman_core::mesh::rasterize_density(&mesh, &g)
                    .map_err(|e| cfg("geometry", &e))?;
            }
            Command::Sweep => {
                self.sweep_spec()?
                    .validate()
                    .map_err(|e| cfg("sweep", &e))?;
            }
            Command::Fit => {
                require_file("model.table", self.model.table.as_deref())?;
            }
            Command::Predict => {
                if self.model.coefficients.is_none() {
                    require_file("model.file", self.model.file.as_deref())?;
                } else if self.model.kind.is_none() {
                    return Err(CliError::Config(
                        "model.kind: required with model.coefficients".into(),
                    ));
                }
                if self.model.parameter.is_none() {
                    return Err(CliError::Config(
                        "model.parameter: required for predict".into(),
                    ));
                }
                if self.model.q.is_empty() {
                    return Err(CliError::Config("model.q: required for predict".into()));
                }
            }
            Command::Validate => {
                require_file("model.table", self.model.table.as_deref())?;
                if self.model.coefficients.is_none() {
                    require_file("model.file", self.model.file.as_deref())?;
                }
            }
            Command::Plot => {
                require_file("plot.table", self.plot.table.as_deref())?;
                if self.plot.kind != PlotKind::LoglogSweep {
                    require_file("plot.model_file", self.plot.model_file.as_deref())?;
                }
            }
        }
        Ok(())
    }
}

fn require_file(key: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        None => Err(CliError::Config(format!(
            "{key}: required for this command"
        ))),
        Some(p) if !p.is_file() => Err(CliError::Config(format!(
            "{key}: file '{}' does not exist",
            p.display()
        ))),
        Some(_) => Ok(()),
    }
}

/// A number such as `0.5`, `1e8`, `-12` or `1/30`.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (b != 0.0).then_some(a / b);
    }
    s.parse().ok().filter(|x: &f64| x.is_finite())
}

/// Comma-separated numbers; `a..b` between two powers of ten expands to every decade.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let exp = |t: &str| -> Result<i32, String> {
                let x = parse_number(t).ok_or_else(|| format!("'{t}' is not a number"))?;
                let e = x.log10().round();
                if !(x > 0.0) || (10f64.powf(e) - x).abs() > 1e-9 * x {
                    return Err(format!("range end '{t}' is not a power of ten"));
                }
                Ok(e as i32)
            };
            let (lo, hi) = (exp(a)?, exp(b)?);
            if lo > hi {
                return Err(format!("range '{item}' is decreasing"));
            }
            out.extend(decade_range(lo, hi));
        } else {
            out.push(parse_number(item).ok_or_else(|| format!("'{item}' is not a number"))?);
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

/// Sorted ascending, rejecting duplicates.
fn sorted_unique(mut v: Vec<f64>, key: &str) -> Result<Vec<f64>, CliError> {
    v.sort_by(f64::total_cmp);
    if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Config(format!("{key}: duplicate value {}", w[0])));
    }
    Ok(v)
}

const TOP_KEYS: &[&str] = &["command", "out", "workers"];
const SECTIONS: &[(&str, &[&str])] = &[
    ("flow", &["rho_f", "mu", "v_c"]),
    ("brinkman", &["alpha_max", "alpha_min", "p_alpha"]),
    ("mesh", &["L_c", "h", "h_over_lc"]),
    (
        "geometry",
        &[
            "preset",
            "design_x0",
            "design_y0",
            "beam_x0",
            "beam_y0",
            "rects",
        ],
    ),
    ("solver", &["newton_tol", "max_iters", "initial_guess"]),
    ("sweep", &["param", "values", "alpha_max_grid"]),
    (
        "model",
        &[
            "kind",
            "table",
            "file",
            "coefficients",
            "fit_values",
            "fit_alphas",
            "parameter",
            "q",
            "held_out_only",
            "max_v_solid",
        ],
    ),
    ("plot", &["kind", "table", "model_file", "q"]),
];

fn num(key: &str, v: &Value) -> Result<f64, CliError> {
    let bad = || {
        CliError::Config(format!(
            "{key}: expected a number (e.g. 1e8 or \"1/30\"), got {v}"
        ))
    };
    match v {
        Value::Integer(i) => Ok(*i as f64),
        Value::Float(f) if f.is_finite() => Ok(*f),
        Value::String(s) => parse_number(s).ok_or_else(bad),
        _ => Err(bad()),
    }
}

fn list(key: &str, v: &Value) -> Result<Vec<f64>, CliError> {
    match v {
        Value::Array(a) => a.iter().map(|x| num(key, x)).collect(),
        Value::String(s) => parse_grid(s).map_err(|e| CliError::Config(format!("{key}: {e}"))),
        other => Ok(vec![num(key, other)?]),
    }
}

fn string<'a>(key: &str, v: &'a Value) -> Result<&'a str, CliError> {
    v.as_str()
        .ok_or_else(|| CliError::Config(format!("{key}: expected a string, got {v}")))
}

fn boolean(key: &str, v: &Value) -> Result<bool, CliError> {
    v.as_bool()
        .ok_or_else(|| CliError::Config(format!("{key}: expected true or false, got {v}")))
}

fn count(key: &str, v: &Value) -> Result<usize, CliError> {
    let x = num(key, v)?;
    if x < 0.0 || x.fract() != 0.0 {
        return Err(CliError::Config(format!(
            "{key}: expected a non-negative integer, got {v}"
        )));
    }
    Ok(x as usize)
}

fn rect(key: &str, v: &Value) -> Result<Rect, CliError> {
    let xs = match v {
        Value::String(s) => s
            .split(',')
            .map(|t| {
                parse_number(t)
                    .ok_or_else(|| CliError::Config(format!("{key}: '{t}' is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()?,
        Value::Array(_) => list(key, v)?,
        _ => {
            return Err(CliError::Config(format!(
                "{key}: expected \"x0,y0,width,height\""
            )))
        }
    };
    match xs[..] {
        [x0, y0, w, h] => Ok(Rect::new(x0, y0, w, h)),
        _ => Err(CliError::Config(format!(
            "{key}: expected 4 numbers x0,y0,width,height, got {}",
            xs.len()
        ))),
    }
}

/// Parses config text on top of the defaults for `command`.
///
/// `command` from the caller wins over the file's `command` key.
pub fn parse_config(text: &str, command: Option<Command>) -> Result<RunConfig, CliError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        CliError::Config(format!("malformed config: {}", e.message()))
    })?;
    for (k, v) in &table {
        if v.is_table() {
            if !SECTIONS.iter().any(|(s, _)| s == k) {
                return Err(CliError::Config(format!(
                    "unknown section [{k}] (expected one of: {})",
                    SECTIONS.iter().map(|s| s.0).collect::<Vec<_>>().join(", ")
                )));
            }
        } else if !TOP_KEYS.contains(&k.as_str()) {
            return Err(CliError::Config(format!(
                "unknown key '{k}' (expected one of: {})",
                TOP_KEYS.join(", ")
            )));
        }
    }
    let command = match (command, table.get("command")) {
        (Some(c), _) => c,
        (None, Some(v)) => string("command", v)?.parse()?,
        (None, None) => {
            return Err(CliError::Config(
                "command: not given on the command line or in the config".into(),
            ))
        }
    };
    let mut c = RunConfig::defaults(command);
    if let Some(v) = table.get("out") {
        c.out = PathBuf::from(string("out", v)?);
    }
    if let Some(v) = table.get("workers") {
        c.workers = count("workers", v)?;
    }

    for (section, keys) in SECTIONS {
        let Some(sec) = table.get(*section) else {
            continue;
        };
        let sec = sec.as_table().expect("checked above");
        for (k, v) in sec {
            if !keys.contains(&k.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown key '{section}.{k}' (expected one of: {})",
                    keys.join(", ")
                )));
            }
            let key = format!("{section}.{k}");
            let key = key.as_str();
            match (*section, k.as_str()) {
                ("flow", "rho_f") => c.flow.rho_f = num(key, v)?,
                ("flow", "mu") => c.flow.mu = num(key, v)?,
                ("flow", "v_c") => c.flow.v_c = num(key, v)?,
                ("brinkman", "alpha_max") => c.brinkman.alpha_max = num(key, v)?,
                ("brinkman", "alpha_min") => c.brinkman.alpha_min = num(key, v)?,
                ("brinkman", "p_alpha") => c.brinkman.p_alpha = num(key, v)?,
                ("mesh", "L_c") => c.l_c = num(key, v)?,
                ("mesh", "h") => c.h = num(key, v)?,
                ("mesh", "h_over_lc") => c.h_over_lc = num(key, v)?,
                ("solver", "newton_tol") => c.settings.newton_tol = num(key, v)?,
                ("solver", "max_iters") => c.settings.max_iters = count(key, v)?,
                ("solver", "initial_guess") => {
                    c.settings.initial_guess = match string(key, v)? {
                        "stokes" => InitialGuess::Stokes,
                        "zero" => InitialGuess::Zero,
                        s => {
                            return Err(CliError::Config(format!(
                                "{key}: expected \"stokes\" or \"zero\", got '{s}'"
                            )))
                        }
                    }
                }
                ("sweep", "param") => {
                    c.sweep.param = Some(
                        string(key, v)?
                            .parse()
                            .map_err(|e| CliError::Config(format!("{key}: {e}")))?,
                    )
                }
                ("sweep", "values") => c.sweep.values = sorted_unique(list(key, v)?, key)?,
                ("sweep", "alpha_max_grid") => {
                    c.sweep.alpha_max_grid = sorted_unique(list(key, v)?, key)?
                }
                ("model", "kind") => {
                    c.model.kind = Some(
                        string(key, v)?
                            .parse()
                            .map_err(|e| CliError::Config(format!("{key}: {e}")))?,
                    )
                }
                ("model", "table") => c.model.table = Some(PathBuf::from(string(key, v)?)),
                ("model", "file") => c.model.file = Some(PathBuf::from(string(key, v)?)),
                ("model", "coefficients") => c.model.coefficients = Some(list(key, v)?),
                ("model", "fit_values") => c.model.fit_values = Some(list(key, v)?),
                ("model", "fit_alphas") => c.model.fit_alphas = Some(list(key, v)?),
                ("model", "parameter") => c.model.parameter = Some(num(key, v)?),
                ("model", "q") => c.model.q = list(key, v)?,
                ("model", "held_out_only") => c.model.held_out_only = boolean(key, v)?,
                ("model", "max_v_solid") => c.model.max_v_solid = num(key, v)?,
                ("plot", "kind") => {
                    let s = string(key, v)?;
                    c.plot.kind = PlotKind::from_str(s, false).map_err(|_| {
                        CliError::Config(format!(
                            "{key}: expected loglog_sweep|fit_check|error_bars, got '{s}'"
                        ))
                    })?
                }
                ("plot", "table") => c.plot.table = Some(PathBuf::from(string(key, v)?)),
                ("plot", "model_file") => c.plot.model_file = Some(PathBuf::from(string(key, v)?)),
                ("plot", "q") => c.plot.q = list(key, v)?,
                ("geometry", _) => {}
                _ => unreachable!("key list and match arms agree"),
            }
        }
    }
    if let Some(Value::Table(g)) = table.get("geometry") {
        c.geometry = parse_geometry(g)?;
    }
    Ok(c)
}

fn parse_geometry(g: &Table) -> Result<GeometryConfig, CliError> {
    let preset = match g.get("preset") {
        Some(v) => string("geometry.preset", v)?,
        None if g.contains_key("rects") => "custom",
        None => BENCHMARK_PRESET,
    };
    match preset {
        p if p == BENCHMARK_PRESET => {
            if g.contains_key("rects") {
                return Err(CliError::Config(
                    "geometry.rects: only valid with preset = \"custom\"".into(),
                ));
            }
            let mut layout = BenchmarkLayout::default();
            for (k, field) in [
                ("design_x0", &mut layout.design_x0),
                ("design_y0", &mut layout.design_y0),
                ("beam_x0", &mut layout.beam_x0),
                ("beam_y0", &mut layout.beam_y0),
            ] {
                if let Some(v) = g.get(k) {
                    *field = num(&format!("geometry.{k}"), v)?;
                }
            }
            Ok(GeometryConfig::Preset(layout))
        }
        "custom" => {
            if let Some(k) = ["design_x0", "design_y0", "beam_x0", "beam_y0"]
                .iter()
                .find(|k| g.contains_key(**k))
            {
                return Err(CliError::Config(format!(
                    "geometry.{k}: only valid with the {BENCHMARK_PRESET} preset"
                )));
            }
            let rects = match g.get("rects") {
                None => Vec::new(),
                Some(Value::Array(a)) => a
                    .iter()
                    .enumerate()
                    .map(|(i, v)| rect(&format!("geometry.rects[{i}]"), v))
                    .collect::<Result<_, _>>()?,
                Some(v) => {
                    return Err(CliError::Config(format!(
                        "geometry.rects: expected an array, got {v}"
                    )))
                }
            };
            Ok(GeometryConfig::Custom(rects))
        }
        other => Err(CliError::Config(format!(
            "geometry.preset: expected \"{BENCHMARK_PRESET}\" or \"custom\", got '{other}'"
        ))),
    }
}

fn fv(x: f64) -> Value {
    Value::Float(x)
}

fn flist(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| fv(x)).collect())
}

fn path(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

/// The resolved configuration as config text: every key explicit.
pub fn to_config_text(c: &RunConfig) -> String {
    let mut top = Table::new();
    top.insert("command".into(), Value::String(c.command.name().into()));
    top.insert("out".into(), path(&c.out));
    top.insert("workers".into(), Value::Integer(c.workers as i64));

    let mut t = Table::new();
    t.insert("rho_f".into(), fv(c.flow.rho_f));
    t.insert("mu".into(), fv(c.flow.mu));
    t.insert("v_c".into(), fv(c.flow.v_c));
    top.insert("flow".into(), Value::Table(t));

    let mut t = Table::new();
    t.insert("alpha_max".into(), fv(c.brinkman.alpha_max));
    t.insert("alpha_min".into(), fv(c.brinkman.alpha_min));
    t.insert("p_alpha".into(), fv(c.brinkman.p_alpha));
    top.insert("brinkman".into(), Value::Table(t));

    let mut t = Table::new();
    t.insert("L_c".into(), fv(c.l_c));
    t.insert("h".into(), fv(c.h));
    t.insert("h_over_lc".into(), fv(c.h_over_lc));
    top.insert("mesh".into(), Value::Table(t));

    let mut t = Table::new();
    match &c.geometry {
        GeometryConfig::Preset(l) => {
            t.insert("preset".into(), Value::String(BENCHMARK_PRESET.into()));
            t.insert("design_x0".into(), fv(l.design_x0));
            t.insert("design_y0".into(), fv(l.design_y0));
            t.insert("beam_x0".into(), fv(l.beam_x0));
            t.insert("beam_y0".into(), fv(l.beam_y0));
        }
        GeometryConfig::Custom(rects) => {
            t.insert("preset".into(), Value::String("custom".into()));
            t.insert(
                "rects".into(),
                Value::Array(
                    rects
                        .iter()
                        .map(|r| flist(&[r.x0, r.y0, r.width, r.height]))
                        .collect(),
                ),
            );
        }
    }
    top.insert("geometry".into(), Value::Table(t));

    let mut t = Table::new();
    t.insert("newton_tol".into(), fv(c.settings.newton_tol));
    t.insert(
        "max_iters".into(),
        Value::Integer(c.settings.max_iters as i64),
    );
    let guess = match c.settings.initial_guess {
        InitialGuess::Stokes => "stokes",
        InitialGuess::Zero => "zero",
    };
    t.insert("initial_guess".into(), Value::String(guess.into()));
    top.insert("solver".into(), Value::Table(t));

    let mut t = Table::new();
    if let Some(p) = c.sweep.param {
        t.insert("param".into(), Value::String(p.name().into()));
    }
    if !c.sweep.values.is_empty() {
        t.insert("values".into(), flist(&c.sweep.values));
    }
    t.insert("alpha_max_grid".into(), flist(&c.sweep.alpha_max_grid));
    top.insert("sweep".into(), Value::Table(t));

    let m = &c.model;
    let mut t = Table::new();
    if let Some(k) = m.kind {
        t.insert("kind".into(), Value::String(k.name().into()));
    }
    if let Some(p) = &m.table {
        t.insert("table".into(), path(p));
    }
    if let Some(p) = &m.file {
        t.insert("file".into(), path(p));
    }
    if let Some(x) = &m.coefficients {
        t.insert("coefficients".into(), flist(x));
    }
    if let Some(x) = &m.fit_values {
        t.insert("fit_values".into(), flist(x));
    }
    if let Some(x) = &m.fit_alphas {
        t.insert("fit_alphas".into(), flist(x));
    }
    if let Some(x) = m.parameter {
        t.insert("parameter".into(), fv(x));
    }
    if !m.q.is_empty() {
        t.insert("q".into(), flist(&m.q));
    }
    t.insert("held_out_only".into(), Value::Boolean(m.held_out_only));
    t.insert("max_v_solid".into(), fv(m.max_v_solid));
    top.insert("model".into(), Value::Table(t));

    let mut t = Table::new();
    t.insert("kind".into(), Value::String(c.plot.kind.name().into()));
    if let Some(p) = &c.plot.table {
        t.insert("table".into(), path(p));
    }
    if let Some(p) = &c.plot.model_file {
        t.insert("model_file".into(), path(p));
    }
    if !c.plot.q.is_empty() {
        t.insert("q".into(), flist(&c.plot.q));
    }
    top.insert("plot".into(), Value::Table(t));

    toml::to_string(&top).expect("config tables serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = parse_config("", Some(Command::Solve)).unwrap();
        assert_eq!(
            c.flow,
            FlowParams {
                rho_f: 1.0,
                mu: 1.0,
                v_c: 1.0
            }
        );
        assert_eq!((c.l_c, c.h), (1.0, 0.01));
        assert_eq!(c.brinkman.alpha_min, 0.0);
        assert_eq!(
            c.geometry,
            GeometryConfig::Preset(BenchmarkLayout::default())
        );
    }

    #[test]
    fn numbers_in_strings() {
        let c = parse_config(
            "[brinkman]\nalpha_max = \"1e8\"\n[mesh]\nh = \"1/30\"",
            Some(Command::Solve),
        )
        .unwrap();
        assert_eq!(c.brinkman.alpha_max, 1e8);
        assert_eq!(c.h, 1.0 / 30.0);
    }

    #[test]
    fn non_divisible_h_is_rejected() {
        let c = parse_config("[mesh]\nh = 0.013", Some(Command::Solve)).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("mesh") && err.contains("0.013"), "{err}");
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let err = parse_config("[flow]\nrho = 1", Some(Command::Solve))
            .unwrap_err()
            .to_string();
        assert!(err.contains("flow.rho") && err.contains("rho_f"), "{err}");
        let err = parse_config("[flows]\nrho_f = 1", Some(Command::Solve))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[flows]"), "{err}");
        let err = parse_config("[flow]\nmu = \"fast\"", Some(Command::Solve))
            .unwrap_err()
            .to_string();
        assert!(err.contains("flow.mu") && err.contains("number"), "{err}");
    }

    #[test]
    fn grid_syntax() {
        let g = parse_grid("0,1e0..1e20").unwrap();
        assert_eq!(g.len(), 22);
        assert_eq!((g[0], g[1], g[21]), (0.0, 1.0, 1e20));
        assert_eq!(
            parse_grid("1/30, 1/50").unwrap(),
            vec![1.0 / 30.0, 1.0 / 50.0]
        );
        assert!(parse_grid("1e0..3e2").is_err());
        assert!(parse_grid("1e4..1e2").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn custom_geometry() {
        let c = parse_config(
            "[geometry]\npreset = \"custom\"\nrects = [\"0.5,0,0.2,0.3\", [1.0, 0.5, 0.1, 0.5]]",
            Some(Command::Solve),
        )
        .unwrap();
        let GeometryConfig::Custom(r) = &c.geometry else {
            panic!()
        };
        assert_eq!(r[1], Rect::new(1.0, 0.5, 0.1, 0.5));
        assert!(parse_config(
            "[geometry]\npreset = \"custom\"\nbeam_x0 = 1",
            Some(Command::Solve)
        )
        .is_err());
    }

    #[test]
    fn config_text_round_trips() {
        let text =
            "command = \"sweep\"\nout = \"x\"\n[sweep]\nparam = \"h\"\nvalues = \"1/30,1/70\"\n\
                    [model]\nq = [-6, -12]\n[geometry]\nbeam_x0 = 0.95";
        let c = parse_config(text, None).unwrap();
        assert_eq!(c.sweep.values, vec![1.0 / 70.0, 1.0 / 30.0]);
        let again = parse_config(&to_config_text(&c), None).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn command_line_command_wins() {
        let c = parse_config("command = \"sweep\"", Some(Command::Fit)).unwrap();
        assert_eq!(c.command, Command::Fit);
        assert!(parse_config("", None).is_err());
    }
}
