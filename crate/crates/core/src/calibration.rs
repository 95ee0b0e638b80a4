//! Parameter sweeps over (alpha_max x one flow or mesh parameter), the four
//! calibration laws for alpha_max, and their validation against sweep data.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{fmt_g17, MetricEvaluator, MetricRecord, LINEAR_REGIME_MAX_V};
use crate::error::{CalibrationError, SolveError};
use crate::fem::{BrinkmanParams, FlowParams};
use crate::mesh::{build_mesh, rasterize_density, scale_geometry, GeometrySpec, MeshSpec};
use crate::solver::{solve_body_fitted, FlowSolver, SolveSettings};

/// Relative tolerance when matching parameter or alpha values read back from tables.
const VALUE_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "h")]
    H,
    #[serde(rename = "rho_f")]
    RhoF,
    #[serde(rename = "mu")]
    Mu,
    #[serde(rename = "L_c")]
    Lc,
    #[serde(rename = "v_c")]
    Vc,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [Self::H, Self::RhoF, Self::Mu, Self::Lc, Self::Vc];

    pub fn name(self) -> &'static str {
        match self {
            Self::H => "h",
            Self::RhoF => "rho_f",
            Self::Mu => "mu",
            Self::Lc => "L_c",
            Self::Vc => "v_c",
        }
    }

    /// The calibration law fitted along this parameter, if any.
    pub fn model(self) -> Option<ModelKind> {
        match self {
            Self::H => Some(ModelKind::H),
            Self::Mu => Some(ModelKind::Mu),
            Self::Lc => Some(ModelKind::Lc),
            Self::Vc => Some(ModelKind::Vc),
            Self::RhoF => None,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = CalibrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                CalibrationError::InvalidInput(format!(
                    "unknown sweep parameter '{s}' (h|rho_f|mu|L_c|v_c)"
                ))
            })
    }
}

/// `10^lo, 10^(lo+1), ..., 10^hi`, each an exactly parsed decimal power.
pub fn decade_range(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi)
        .map(|e| format!("1e{e}").parse().expect("decimal power"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub alpha_max_values: Vec<f64>,
    /// Flow parameters for the parameters not being swept.
    pub flow: FlowParams,
    /// `alpha_min` and `p_alpha`; `alpha_max` is overridden per cell.
    pub brinkman: BrinkmanParams,
    pub l_c: f64,
    pub h: f64,
    /// Element size as a fraction of `L_c` in `L_c` sweeps.
    pub h_over_lc: f64,
    /// Geometry at `l_c`; rescaled in `L_c` sweeps.
    pub geometry: GeometrySpec,
    pub settings: SolveSettings,
}

impl SweepSpec {
    /// Defaults: `v_c = rho_f = mu = L_c = 1`, `h = 0.01`, `alpha_min = 0`,
    /// alpha_max at 0 and every decade from 1e0 to 1e20, benchmark geometry.
    pub fn new(param: SweepParam, values: Vec<f64>) -> Self {
        let mut alpha_max_values = vec![0.0];
        alpha_max_values.extend(decade_range(0, 20));
        Self {
            param,
            values,
            alpha_max_values,
            flow: FlowParams::default(),
            brinkman: BrinkmanParams::default(),
            l_c: 1.0,
            h: 0.01,
            h_over_lc: 0.01,
            geometry: GeometrySpec::benchmark(1.0).expect("unit benchmark"),
            settings: SolveSettings::default(),
        }
    }

    pub fn with_alphas(mut self, alphas: Vec<f64>) -> Self {
        self.alpha_max_values = alphas;
        self
    }

    /// Mesh, geometry and flow parameters of one parameter value.
    pub fn case(
        &self,
        value: f64,
    ) -> Result<(MeshSpec, GeometrySpec, FlowParams), CalibrationError> {
        let mut flow = self.flow;
        let mut l_c = self.l_c;
        let mut h = self.h;
        match self.param {
            SweepParam::H => h = value,
            SweepParam::RhoF => flow.rho_f = value,
            SweepParam::Mu => flow.mu = value,
            SweepParam::Vc => flow.v_c = value,
            SweepParam::Lc => {
                l_c = value;
                h = value * self.h_over_lc;
            }
        }
        let geometry = if l_c == self.geometry.channel_width {
            self.geometry.clone()
        } else {
            scale_geometry(&self.geometry, l_c / self.geometry.channel_width)?
        };
        Ok((MeshSpec::channel(l_c, h), geometry, flow))
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let invalid = |m: String| Err(CalibrationError::InvalidSweep(m));
        if self.values.is_empty() {
            return invalid(format!("no values for {}", self.param));
        }
        if self.alpha_max_values.is_empty() {
            return invalid("no alpha_max values".into());
        }
        if let Some(w) = self.values.windows(2).find(|w| !(w[1] > w[0])) {
            return invalid(format!(
                "{} values not strictly increasing at {} -> {}",
                self.param, w[0], w[1]
            ));
        }
        if let Some(w) = self.alpha_max_values.windows(2).find(|w| !(w[1] > w[0])) {
            return invalid(format!(
                "alpha_max values not strictly increasing at {} -> {}",
                w[0], w[1]
            ));
        }
        if let Some(a) = self
            .alpha_max_values
            .iter()
            .find(|a| !(a.is_finite() && **a >= self.brinkman.alpha_min))
        {
            return invalid(format!("alpha_max {a} must be finite and >= alpha_min"));
        }
        if !(self.h_over_lc > 0.0) {
            return invalid(format!("h_over_lc must be > 0, got {}", self.h_over_lc));
        }
        self.settings
            .validate()
            .map_err(|e| CalibrationError::InvalidSweep(e.to_string()))?;
        for &v in &self.values {
            let (mesh, geometry, flow) = self.case(v)?;
            mesh.validate()?;
            geometry.validate()?;
            flow.validate()?;
            for &a in &self.alpha_max_values {
                BrinkmanParams {
                    alpha_max: a,
                    ..self.brinkman
                }
                .validate()?;
            }
            let ctx = |e: crate::error::MeshError| {
                CalibrationError::InvalidSweep(format!("{} = {v}: {e}", self.param))
            };
            let m = build_mesh(&mesh).map_err(ctx)?;
            rasterize_density(&m, &geometry).map_err(ctx)?;
        }
        Ok(())
    }
}

/// One cell of a sweep; `record` is `None` for a failed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param_value: f64,
    pub alpha_max: f64,
    pub record: Option<MetricRecord>,
    pub converged: bool,
    pub newton_iters: usize,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(param_value: f64, alpha_max: f64, iters: usize, error: String) -> Self {
        Self {
            param_value,
            alpha_max,
            record: None,
            converged: false,
            newton_iters: iters,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub param: SweepParam,
    /// Sorted by (parameter value, alpha_max).
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str =
    "param_name,param_value,alpha_max,max_v_solid,err_v_pct,err_p_pct,converged,newton_iters";

fn same_value(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= VALUE_MATCH_TOL * a.abs().max(b.abs())
}

impl SweepTable {
    fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.param_value
                .total_cmp(&b.param_value)
                .then(a.alpha_max.total_cmp(&b.alpha_max))
        });
    }

    pub fn failure_count(&self) -> usize {
        self.rows.iter().filter(|r| r.record.is_none()).count()
    }

    pub fn param_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !v.iter().any(|&x| same_value(x, r.param_value)) {
                v.push(r.param_value);
            }
        }
        v
    }

    /// Successful records of one parameter value, sorted by alpha_max.
    pub fn records_for(&self, value: f64) -> Vec<MetricRecord> {
        self.rows
            .iter()
            .filter(|r| same_value(r.param_value, value))
            .filter_map(|r| r.record)
            .collect()
    }

    pub fn cell(&self, value: f64, alpha_max: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| same_value(r.param_value, value) && same_value(r.alpha_max, alpha_max))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{SWEEP_HEADER}")?;
        for r in &self.rows {
            let (v, ev, ep) = match r.record {
                Some(m) => (m.max_v_solid, m.err_v, m.err_p),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                self.param,
                fmt_g17(r.param_value),
                fmt_g17(r.alpha_max),
                fmt_g17(v),
                fmt_g17(ev),
                fmt_g17(ep),
                r.converged,
                r.newton_iters
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, CalibrationError> {
        let bad = |line: usize, m: String| {
            CalibrationError::InvalidInput(format!("sweep table line {line}: {m}"))
        };
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == SWEEP_HEADER => {}
            Some((_, Ok(h))) => {
                return Err(bad(
                    1,
                    format!("expected header '{SWEEP_HEADER}', got '{h}'"),
                ))
            }
            Some((_, Err(e))) => return Err(bad(1, e.to_string())),
            None => return Err(CalibrationError::InvalidInput("empty sweep table".into())),
        }
        let mut param = None;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 8 {
                return Err(bad(i + 1, format!("expected 8 fields, got {}", f.len())));
            }
            let p: SweepParam = f[0]
                .parse()
                .map_err(|e: CalibrationError| bad(i + 1, e.to_string()))?;
            if *param.get_or_insert(p) != p {
                return Err(bad(i + 1, "mixed parameter names".into()));
            }
            let num = |k: usize| -> Result<f64, CalibrationError> {
                f[k].parse::<f64>()
                    .map_err(|e| bad(i + 1, format!("field {}: {e}", k + 1)))
            };
            let converged: bool = f[6]
                .parse()
                .map_err(|e| bad(i + 1, format!("converged: {e}")))?;
            let newton_iters: usize = f[7]
                .parse()
                .map_err(|e| bad(i + 1, format!("newton_iters: {e}")))?;
            let (param_value, alpha_max) = (num(1)?, num(2)?);
            let (v, ev, ep) = (num(3)?, num(4)?, num(5)?);
            let ok = converged && v.is_finite() && ev.is_finite() && ep.is_finite();
            rows.push(SweepRow {
                param_value,
                alpha_max,
                record: ok.then_some(MetricRecord {
                    alpha_max,
                    max_v_solid: v,
                    err_v: ev,
                    err_p: ep,
                }),
                converged,
                newton_iters,
                error: (!ok).then(|| "failed cell".to_string()),
            });
        }
        let param = param
            .ok_or_else(|| CalibrationError::InvalidInput("sweep table has no rows".into()))?;
        let mut t = Self { param, rows };
        t.sort();
        Ok(t)
    }
}

/// Runs every cell of `spec` on up to `workers` threads.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepTable, CalibrationError> {
    run_sweep_with_progress(spec, workers, &|_| {})
}

/// As [`run_sweep`], calling `progress` once per finished cell.
///
/// Work is split by parameter value: each value needs its own mesh and
/// body-fitted reference, and its alpha_max cells share one factorization
/// pattern.
pub fn run_sweep_with_progress(
    spec: &SweepSpec,
    workers: usize,
    progress: &(dyn Fn(&SweepRow) + Sync),
) -> Result<SweepTable, CalibrationError> {
    spec.validate()?;
    let n = spec.values.len();
    let workers = workers.clamp(1, n);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Vec<SweepRow>>> = Mutex::new(vec![Vec::new(); n]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let rows = run_value(spec, spec.values[i], progress);
                results.lock().expect("sweep results lock")[i] = rows;
            });
        }
    });
    let rows: Vec<SweepRow> = results
        .into_inner()
        .expect("sweep results lock")
        .into_iter()
        .flatten()
        .collect();
    if rows.iter().all(|r| r.record.is_none()) {
        return Err(CalibrationError::AllFailed);
    }
    let mut table = SweepTable {
        param: spec.param,
        rows,
    };
    table.sort();
    Ok(table)
}

fn run_value(spec: &SweepSpec, value: f64, progress: &(dyn Fn(&SweepRow) + Sync)) -> Vec<SweepRow> {
    let fail_all = |msg: String| -> Vec<SweepRow> {
        spec.alpha_max_values
            .iter()
            .map(|&a| {
                let row = SweepRow::failed(value, a, 0, msg.clone());
                progress(&row);
                row
            })
            .collect()
    };
    let setup = (|| -> Result<_, String> {
        let (mesh_spec, geometry, flow) = spec.case(value).map_err(|e| e.to_string())?;
        let mesh = build_mesh(&mesh_spec).map_err(|e| e.to_string())?;
        let density = rasterize_density(&mesh, &geometry).map_err(|e| e.to_string())?;
        Ok((mesh, density, flow))
    })();
    let (mesh, density, flow) = match setup {
        Ok(s) => s,
        Err(e) => return fail_all(e),
    };
    let reference = match solve_body_fitted(&mesh, &density, &flow, &spec.settings) {
        Ok((r, _)) => r,
        Err(e) => return fail_all(format!("body-fitted reference: {e}")),
    };
    let eval = match MetricEvaluator::new(&mesh, &density, &reference.state) {
        Ok(e) => e,
        Err(e) => return fail_all(e.to_string()),
    };
    let mut solver = match FlowSolver::new(&mesh) {
        Ok(s) => s,
        Err(e) => return fail_all(e.to_string()),
    };
    let mut rows = Vec::with_capacity(spec.alpha_max_values.len());
    for &alpha_max in &spec.alpha_max_values {
        let brinkman = BrinkmanParams {
            alpha_max,
            ..spec.brinkman
        };
        let row = match solver.solve(&density, &flow, &brinkman, &spec.settings) {
            Ok((state, report)) => match eval.record(alpha_max, &state) {
                Ok(record) => SweepRow {
                    param_value: value,
                    alpha_max,
                    record: Some(record),
                    converged: true,
                    newton_iters: report.iterations,
                    error: None,
                },
                Err(e) => SweepRow::failed(value, alpha_max, report.iterations, e.to_string()),
            },
            Err(SolveError::NotConverged {
                iterations,
                history,
            }) => SweepRow::failed(
                value,
                alpha_max,
                iterations,
                format!(
                    "Newton did not converge (last residual {:e})",
                    history.last().copied().unwrap_or(f64::NAN)
                ),
            ),
            Err(e) => SweepRow::failed(value, alpha_max, 0, e.to_string()),
        };
        progress(&row);
        rows.push(row);
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// `C = c1/h^2 + c2/h + c3`
    #[serde(rename = "h_model")]
    H,
    /// `C = c1 mu + c2`
    #[serde(rename = "mu_model")]
    Mu,
    /// `C = a1/L_c^a2 + a3`
    #[serde(rename = "lc_model")]
    Lc,
    /// `C = c1 v_c + c2`
    #[serde(rename = "vc_model")]
    Vc,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::H => "h_model",
            Self::Mu => "mu_model",
            Self::Lc => "lc_model",
            Self::Vc => "vc_model",
        }
    }

    pub fn param(self) -> SweepParam {
        match self {
            Self::H => SweepParam::H,
            Self::Mu => SweepParam::Mu,
            Self::Lc => SweepParam::Lc,
            Self::Vc => SweepParam::Vc,
        }
    }

    pub fn coefficient_names(self) -> &'static [&'static str] {
        match self {
            Self::H => &["c1", "c2", "c3"],
            Self::Mu | Self::Vc => &["c1", "c2"],
            Self::Lc => &["a1", "a2", "a3"],
        }
    }
}

impl FromStr for ModelKind {
    type Err = CalibrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "h" | "h_model" => Ok(Self::H),
            "mu" | "mu_model" => Ok(Self::Mu),
            "lc" | "L_c" | "lc_model" => Ok(Self::Lc),
            "vc" | "v_c" | "vc_model" => Ok(Self::Vc),
            _ => Err(CalibrationError::InvalidInput(format!(
                "unknown model '{s}' (h|mu|lc|vc)"
            ))),
        }
    }
}

/// One sweep cell used as fit data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub param_value: f64,
    pub alpha_max: f64,
    pub max_v_solid: f64,
}

impl FitPoint {
    /// `C = alpha_max * max_v_solid`, so that `alpha_max = 10^(-q) C`.
    pub fn c(&self) -> f64 {
        self.alpha_max * self.max_v_solid
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `(C_model - C_data) / C_data` per fit point.
    pub relative_residuals: Vec<f64>,
    pub max_relative_residual: f64,
    pub sum_squared_residuals: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitModel {
    pub kind: ModelKind,
    pub coefficients: Vec<f64>,
    pub points: Vec<FitPoint>,
    pub diagnostics: FitDiagnostics,
}

impl FitModel {
    /// Model without fit data, e.g. from published coefficients.
    pub fn from_coefficients(
        kind: ModelKind,
        coefficients: Vec<f64>,
    ) -> Result<Self, CalibrationError> {
        let need = kind.coefficient_names().len();
        if coefficients.len() != need {
            return Err(CalibrationError::InvalidInput(format!(
                "{} takes {need} coefficients, got {}",
                kind.name(),
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(CalibrationError::InvalidInput(
                "non-finite coefficient".into(),
            ));
        }
        if kind == ModelKind::Lc && !(coefficients[1] > 0.0) {
            return Err(CalibrationError::InvalidInput(format!(
                "lc_model needs a2 > 0, got {}",
                coefficients[1]
            )));
        }
        Ok(Self {
            kind,
            coefficients,
            points: Vec::new(),
            diagnostics: FitDiagnostics::default(),
        })
    }

    /// `C(x)`, i.e. the predicted alpha_max at `q = 0`.
    pub fn leakage_constant(&self, x: f64) -> f64 {
        let c = &self.coefficients;
        match self.kind {
            ModelKind::H => c[0] / (x * x) + c[1] / x + c[2],
            ModelKind::Mu | ModelKind::Vc => c[0] * x + c[1],
            ModelKind::Lc => c[0] / x.powf(c[1]) + c[2],
        }
    }

    /// Smallest and largest fitted parameter value.
    pub fn fitted_range(&self) -> Option<(f64, f64)> {
        let xs = self.points.iter().map(|p| p.param_value);
        let lo = xs.clone().fold(f64::INFINITY, f64::min);
        let hi = xs.fold(f64::NEG_INFINITY, f64::max);
        (lo <= hi).then_some((lo, hi))
    }
}

/// `10^(-q)`, exact for integral `q` in `[-22, 0]`.
pub fn leakage_scale(q: f64) -> f64 {
    if q == q.trunc() && (-22.0..=22.0).contains(&q) {
        let e = -q as i32;
        if e >= 0 {
            return 10f64.powi(e);
        }
        return 1.0 / 10f64.powi(-e);
    }
    10f64.powf(-q)
}

/// `alpha_max = 10^(-q) C(x)` for target leakage `max|v_solid| = 10^q`.
pub fn predict_alpha_max(
    model: &FitModel,
    parameter: f64,
    q: f64,
) -> Result<f64, CalibrationError> {
    if !(parameter > 0.0 && parameter.is_finite()) {
        return Err(CalibrationError::InvalidInput(format!(
            "{} must be a positive parameter value, got {parameter}",
            model.kind.param()
        )));
    }
    if !q.is_finite() {
        return Err(CalibrationError::InvalidInput(format!(
            "q must be finite, got {q}"
        )));
    }
    let value = leakage_scale(q) * model.leakage_constant(parameter);
    if !(value > 0.0 && value.is_finite()) {
        return Err(CalibrationError::NonPositivePrediction {
            model: model.kind.name(),
            parameter,
            q,
            value,
        });
    }
    Ok(value)
}

/// Dimensionless inverse permeability `alpha L_c^2 / mu`.
pub fn alpha_star(alpha: f64, mu: f64, l_c: f64) -> Result<f64, CalibrationError> {
    check_positive(mu, l_c)?;
    Ok(alpha * l_c * l_c / mu)
}

/// Inverse of [`alpha_star`].
pub fn alpha_from_star(alpha_star: f64, mu: f64, l_c: f64) -> Result<f64, CalibrationError> {
    check_positive(mu, l_c)?;
    Ok(alpha_star * mu / (l_c * l_c))
}

/// Darcy number `1 / alpha*`.
pub fn darcy_number(alpha: f64, mu: f64, l_c: f64) -> Result<f64, CalibrationError> {
    Ok(1.0 / alpha_star(alpha, mu, l_c)?)
}

fn check_positive(mu: f64, l_c: f64) -> Result<(), CalibrationError> {
    if !(mu > 0.0 && l_c > 0.0) {
        return Err(CalibrationError::InvalidInput(format!(
            "mu and L_c must be > 0, got {mu}, {l_c}"
        )));
    }
    Ok(())
}

/// Fit cells at the given parameter values and alpha_max values.
///
/// Missing or failed cells are errors: a fit silently dropping points would
/// misreport how many it used.
pub fn select_fit_points(
    table: &SweepTable,
    values: &[f64],
    alphas: &[f64],
) -> Result<Vec<FitPoint>, CalibrationError> {
    let mut points = Vec::new();
    for &x in values {
        for &a in alphas {
            let row = table.cell(x, a).ok_or_else(|| {
                CalibrationError::InvalidInput(format!(
                    "no cell at {} = {x}, alpha_max = {a}",
                    table.param
                ))
            })?;
            let rec = row.record.ok_or_else(|| {
                CalibrationError::InvalidInput(format!(
                    "cell {} = {x}, alpha_max = {a} failed",
                    table.param
                ))
            })?;
            points.push(FitPoint {
                param_value: row.param_value,
                alpha_max: row.alpha_max,
                max_v_solid: rec.max_v_solid,
            });
        }
    }
    Ok(points)
}

/// Default fit cells: extremal and middle parameter values for the h and
/// L_c laws, extremal ones for the linear laws; alpha_max in {1e8, 1e20}
/// when swept, else the smallest and largest alpha_max whose cells all
/// leak at most 1e-2 (any positive alpha_max if fewer than two do).
pub fn default_fit_points(
    table: &SweepTable,
    kind: ModelKind,
) -> Result<Vec<FitPoint>, CalibrationError> {
    let xs = table.param_values();
    if xs.len() < 2 {
        return Err(CalibrationError::TooFewPoints {
            needed: 2,
            got: xs.len(),
        });
    }
    let values = match kind {
        ModelKind::H | ModelKind::Lc if xs.len() >= 3 => {
            vec![xs[0], xs[xs.len() / 2], xs[xs.len() - 1]]
        }
        _ => vec![xs[0], xs[xs.len() - 1]],
    };
    let mut alphas: Vec<f64> = table
        .rows
        .iter()
        .map(|r| r.alpha_max)
        .filter(|&a| a > 0.0)
        .collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let preferred = [1e8, 1e20];
    let chosen: Vec<f64> = if preferred
        .iter()
        .all(|p| alphas.iter().any(|&a| same_value(a, *p)))
    {
        preferred.to_vec()
    } else if alphas.len() >= 2 {
        let linear: Vec<f64> = alphas
            .iter()
            .copied()
            .filter(|&a| {
                values.iter().all(|&x| {
                    table.cell(x, a).and_then(|r| r.record).is_some_and(|r| {
                        r.max_v_solid > 0.0 && r.max_v_solid <= LINEAR_REGIME_MAX_V
                    })
                })
            })
            .collect();
        let pool = if linear.len() >= 2 { &linear } else { &alphas };
        vec![pool[0], pool[pool.len() - 1]]
    } else {
        return Err(CalibrationError::TooFewPoints {
            needed: 2,
            got: alphas.len(),
        });
    };
    select_fit_points(table, &values, &chosen)
}

fn check_points(points: &[FitPoint], needed: usize) -> Result<(), CalibrationError> {
    if points.len() < needed {
        return Err(CalibrationError::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    if let Some(p) = points.iter().find(|p| {
        !(p.param_value > 0.0 && p.alpha_max > 0.0 && p.max_v_solid > 0.0 && p.c().is_finite())
    }) {
        return Err(CalibrationError::InvalidInput(format!(
            "fit point needs positive parameter, alpha_max and leakage: {p:?}"
        )));
    }
    Ok(())
}

fn distinct_values(points: &[FitPoint]) -> usize {
    let mut xs: Vec<f64> = points.iter().map(|p| p.param_value).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| same_value(*a, *b));
    xs.len()
}

fn regime_notes(points: &[FitPoint]) -> Vec<String> {
    points
        .iter()
        .filter(|p| p.max_v_solid > LINEAR_REGIME_MAX_V)
        .map(|p| {
            format!(
                "point at param {} alpha_max {:e} has max_v_solid {:.3e} > {:e}, possibly outside the linear regime",
                p.param_value, p.alpha_max, p.max_v_solid, LINEAR_REGIME_MAX_V
            )
        })
        .collect()
}

/// Least squares with columns scaled to unit max norm before an SVD solve.
fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = y.len();
    let n = columns.len();
    let scale: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().fold(0.0f64, |s, v| s.max(v.abs())))
        .collect();
    if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return None;
    }
    let a = DMatrix::from_fn(m, n, |i, j| columns[j][i] / scale[j]);
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-13 {
        return None;
    }
    let x = svd.solve(&b, 0.0).ok()?;
    Some((0..n).map(|j| x[j] / scale[j]).collect())
}

fn finish(
    kind: ModelKind,
    coefficients: Vec<f64>,
    points: &[FitPoint],
    mut notes: Vec<String>,
) -> FitModel {
    let mut model = FitModel {
        kind,
        coefficients,
        points: points.to_vec(),
        diagnostics: FitDiagnostics::default(),
    };
    let res: Vec<f64> = points
        .iter()
        .map(|p| (model.leakage_constant(p.param_value) - p.c()) / p.c())
        .collect();
    notes.extend(regime_notes(points));
    model.diagnostics = FitDiagnostics {
        max_relative_residual: res.iter().fold(0.0, |m, r| m.max(r.abs())),
        sum_squared_residuals: points
            .iter()
            .map(|p| (model.leakage_constant(p.param_value) - p.c()).powi(2))
            .sum(),
        relative_residuals: res,
        notes,
    };
    model
}

/// `C = c1/h^2 + c2/h + c3` by linear least squares.
pub fn fit_h_model(points: &[FitPoint]) -> Result<FitModel, CalibrationError> {
    check_points(points, 6)?;
    let distinct = distinct_values(points);
    if distinct < 3 {
        return Err(CalibrationError::RankDeficient {
            distinct,
            needed: 3,
        });
    }
    let inv: Vec<f64> = points.iter().map(|p| 1.0 / p.param_value).collect();
    let cols = vec![
        inv.iter().map(|v| v * v).collect(),
        inv.clone(),
        vec![1.0; points.len()],
    ];
    let y: Vec<f64> = points.iter().map(FitPoint::c).collect();
    let coef = least_squares(&cols, &y).ok_or(CalibrationError::RankDeficient {
        distinct,
        needed: 3,
    })?;
    Ok(finish(ModelKind::H, coef, points, Vec::new()))
}

/// `C = c1 x + c2` for the mu or v_c law; the slope must be positive.
pub fn fit_linear_model(
    points: &[FitPoint],
    kind: ModelKind,
) -> Result<FitModel, CalibrationError> {
    if !matches!(kind, ModelKind::Mu | ModelKind::Vc) {
        return Err(CalibrationError::InvalidInput(format!(
            "{} is not a linear law",
            kind.name()
        )));
    }
    check_points(points, 4)?;
    let distinct = distinct_values(points);
    if distinct < 2 {
        return Err(CalibrationError::RankDeficient {
            distinct,
            needed: 2,
        });
    }
    let cols = vec![
        points.iter().map(|p| p.param_value).collect(),
        vec![1.0; points.len()],
    ];
    let y: Vec<f64> = points.iter().map(FitPoint::c).collect();
    let coef = least_squares(&cols, &y).ok_or(CalibrationError::RankDeficient {
        distinct,
        needed: 2,
    })?;
    // A slope whose effect over the fitted range is at roundoff level is zero.
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.param_value), hi.max(p.param_value))
        });
    let cmax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(coef[0] * (hi - lo) > 1e-10 * cmax) {
        return Err(CalibrationError::NonPositiveSlope {
            model: kind.name(),
            slope: coef[0],
        });
    }
    Ok(finish(kind, coef, points, Vec::new()))
}

/// Search interval for the L_c exponent, open at the lower end.
pub const LC_EXPONENT_RANGE: (f64, f64) = (0.05, 2.5);
const LC_GRID_STEPS: usize = 245;
const GOLDEN_TOL: f64 = 1e-6;

/// Best `(a1, a3)` and squared residual for a fixed exponent.
fn lc_projection(x: &[f64], y: &[f64], a2: f64) -> Option<(f64, f64, f64)> {
    let basis: Vec<f64> = x.iter().map(|x| x.powf(-a2)).collect();
    let coef = least_squares(&[basis.clone(), vec![1.0; x.len()]], y)?;
    let sse = basis
        .iter()
        .zip(y)
        .map(|(b, y)| (coef[0] * b + coef[1] - y).powi(2))
        .sum();
    Some((coef[0], coef[1], sse))
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Gauss-Newton on all three coefficients, from the projected solution.
/// Only steps that lower the squared residual are taken.
fn lc_polish(x: &[f64], y: &[f64], start: [f64; 3]) -> [f64; 3] {
    let sse = |p: &[f64; 3]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(x, y)| (p[0] * x.powf(-p[1]) + p[2] - y).powi(2))
            .sum()
    };
    let mut p = start;
    let mut best = sse(&p);
    for _ in 0..50 {
        let jac = [
            x.iter().map(|x| x.powf(-p[1])).collect::<Vec<_>>(),
            x.iter().map(|x| -p[0] * x.ln() * x.powf(-p[1])).collect(),
            vec![1.0; x.len()],
        ];
        let r: Vec<f64> = x
            .iter()
            .zip(y)
            .map(|(x, y)| y - (p[0] * x.powf(-p[1]) + p[2]))
            .collect();
        let Some(step) = least_squares(&jac, &r) else {
            break;
        };
        let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
        let s = sse(&trial);
        if !(s < best) {
            break;
        }
        let small = (0..3).all(|i| step[i].abs() <= 1e-15 * p[i].abs().max(1e-300));
        p = trial;
        best = s;
        if small {
            break;
        }
    }
    p
}

/// `C = a1/L_c^a2 + a3` by variable projection over `a2`.
///
/// A grid scan locates the global basin, golden-section search narrows it,
/// and Gauss-Newton on all three coefficients finishes the job.
pub fn fit_lc_model(points: &[FitPoint]) -> Result<FitModel, CalibrationError> {
    check_points(points, 6)?;
    let distinct = distinct_values(points);
    if distinct < 3 {
        return Err(CalibrationError::RankDeficient {
            distinct,
            needed: 3,
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.param_value).collect();
    let y: Vec<f64> = points.iter().map(FitPoint::c).collect();
    let (lo, hi) = LC_EXPONENT_RANGE;

    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let magnitude: f64 = y.iter().map(|v| v * v).sum();
    if spread <= 1e-24 * magnitude {
        // Constant data: every exponent fits equally well.
        return Err(CalibrationError::BoundaryFit { a2: hi });
    }

    let step = (hi - lo) / LC_GRID_STEPS as f64;
    let objective = |a2: f64| lc_projection(&x, &y, a2).map_or(f64::INFINITY, |r| r.2);
    let (k_best, _) = (1..=LC_GRID_STEPS)
        .map(|k| (k, objective(lo + step * k as f64)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        );
    if k_best == 0 {
        return Err(CalibrationError::RankDeficient {
            distinct,
            needed: 3,
        });
    }
    let a = lo + step * (k_best - 1) as f64;
    let b = (lo + step * (k_best + 1) as f64).min(hi);
    let a2 = golden_section(objective, a, b, GOLDEN_TOL);
    let (a1, a3, _) = lc_projection(&x, &y, a2).ok_or(CalibrationError::RankDeficient {
        distinct,
        needed: 3,
    })?;
    let p = lc_polish(&x, &y, [a1, a2, a3]);

    let edge = 2.0 * GOLDEN_TOL;
    if p[1] <= lo + edge || p[1] >= hi - edge || !p.iter().all(|v| v.is_finite()) {
        return Err(CalibrationError::BoundaryFit { a2: p[1] });
    }
    Ok(finish(ModelKind::Lc, p.to_vec(), points, Vec::new()))
}

/// Dispatches to the fit of `kind`.
pub fn fit_model(kind: ModelKind, points: &[FitPoint]) -> Result<FitModel, CalibrationError> {
    match kind {
        ModelKind::H => fit_h_model(points),
        ModelKind::Mu | ModelKind::Vc => fit_linear_model(points, kind),
        ModelKind::Lc => fit_lc_model(points),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    /// Fixed target exponents; `None` scores every cell at its own leakage.
    pub q_values: Option<Vec<f64>>,
    /// Skip cells the model was fitted on.
    pub held_out_only: bool,
    /// Cells leaking more than this are outside the linear regime.
    pub max_v_solid: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            q_values: None,
            held_out_only: false,
            max_v_solid: LINEAR_REGIME_MAX_V,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub param_value: f64,
    pub q: f64,
    pub alpha_data: f64,
    pub alpha_model: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub points: Vec<ValidationPoint>,
    /// Cells or targets left out, with the reason.
    pub excluded: Vec<String>,
    pub max_error: f64,
    pub mean_error: f64,
}

/// Compares model and sweep alpha_max at matching leakage.
pub fn validate_fit(
    model: &FitModel,
    table: &SweepTable,
    opts: &ValidationOptions,
) -> Result<ValidationReport, CalibrationError> {
    if table.param != model.kind.param() {
        return Err(CalibrationError::InvalidInput(format!(
            "{} cannot be validated on a {} sweep",
            model.kind.name(),
            table.param
        )));
    }
    let is_fit_cell = |x: f64, a: f64| {
        model
            .points
            .iter()
            .any(|p| same_value(p.param_value, x) && same_value(p.alpha_max, a))
    };
    let mut report = ValidationReport::default();
    let push = |report: &mut ValidationReport,
                x: f64,
                q: f64,
                alpha_data: f64|
     -> Result<(), CalibrationError> {
        let alpha_model = predict_alpha_max(model, x, q)?;
        report.points.push(ValidationPoint {
            param_value: x,
            q,
            alpha_data,
            alpha_model,
            rel_error: (alpha_data - alpha_model).abs() / alpha_data,
        });
        Ok(())
    };

    for x in table.param_values() {
        match &opts.q_values {
            None => {
                for row in table
                    .rows
                    .iter()
                    .filter(|r| same_value(r.param_value, x) && r.alpha_max > 0.0)
                {
                    if opts.held_out_only && is_fit_cell(x, row.alpha_max) {
                        continue;
                    }
                    let Some(rec) = row.record else {
                        report.excluded.push(format!(
                            "{} = {x}, alpha_max = {:e}: failed cell",
                            table.param, row.alpha_max
                        ));
                        continue;
                    };
                    if !(rec.max_v_solid > 0.0 && rec.max_v_solid <= opts.max_v_solid) {
                        report.excluded.push(format!(
                            "{} = {x}, alpha_max = {:e}: max_v_solid {:.3e} outside the linear regime",
                            table.param, row.alpha_max, rec.max_v_solid
                        ));
                        continue;
                    }
                    push(&mut report, x, rec.max_v_solid.log10(), row.alpha_max)?;
                }
            }
            Some(qs) => {
                if opts.held_out_only && model.points.iter().any(|p| same_value(p.param_value, x)) {
                    continue;
                }
                let recs: Vec<MetricRecord> = table
                    .records_for(x)
                    .into_iter()
                    .filter(|r| r.is_loggable() && r.max_v_solid <= opts.max_v_solid)
                    .collect();
                for &q in qs {
                    match interpolate_alpha(&recs, q) {
                        Some(alpha) => push(&mut report, x, q, alpha)?,
                        None => report.excluded.push(format!(
                            "{} = {x}, q = {q}: not bracketed by linear-regime cells",
                            table.param
                        )),
                    }
                }
            }
        }
    }
    if report.points.is_empty() {
        return Err(CalibrationError::TooFewPoints { needed: 1, got: 0 });
    }
    let errs = report.points.iter().map(|p| p.rel_error);
    report.max_error = errs.clone().fold(0.0, f64::max);
    report.mean_error = errs.sum::<f64>() / report.points.len() as f64;
    Ok(report)
}

/// alpha_max at leakage `10^q` by linear interpolation in
/// (log10 max_v_solid, log10 alpha_max) between bracketing records.
pub fn interpolate_alpha(records: &[MetricRecord], q: f64) -> Option<f64> {
    records.windows(2).find_map(|w| {
        let (q0, q1) = (w[0].max_v_solid.log10(), w[1].max_v_solid.log10());
        let (lo, hi) = if q0 <= q1 { (q0, q1) } else { (q1, q0) };
        if !(lo <= q && q <= hi) {
            return None;
        }
        let (l0, l1) = (w[0].alpha_max.log10(), w[1].alpha_max.log10());
        if q0 == q1 {
            return Some(10f64.powf(0.5 * (l0 + l1)));
        }
        let t = (q - q0) / (q1 - q0);
        Some(10f64.powf(l0 + t * (l1 - l0)))
    })
}
