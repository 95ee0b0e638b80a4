//! The seven commands. Each writes its outputs and a manifest into the
//! run's output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use brinkman_core::analysis::{
    detect_linear_region, detect_plateau, edge_flux, fmt_g17, max_solid_velocity, write_metrics_csv,
};
use brinkman_core::calibration::ModelKind;
use brinkman_core::calibration::{
    alpha_star, darcy_number, default_fit_points, fit_model, predict_alpha_max,
    run_sweep_with_progress, select_fit_points, validate_fit, FitModel, SweepRow, SweepTable,
    ValidationOptions,
};
use brinkman_core::fem::StateField;
use brinkman_core::mesh::{build_mesh, rasterize_density, Mesh};
use brinkman_core::solver::{
    solve_body_fitted, solve_flow, write_pressure_table, write_velocity_table, SolveReport,
};
use serde::Serialize;

use crate::config::{to_config_text, Command, PlotKind, RunConfig};
use crate::error::CliError;
use crate::plot::{fit_plot, loglog_sweep, DEFAULT_PLOT_Q};

pub const MANIFEST: &str = "manifest.toml";

/// What a finished run produced.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    /// Lines for standard output.
    pub summary: Vec<String>,
}

struct Run<'a> {
    config: &'a RunConfig,
    outcome: Outcome,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
        self.outcome.outputs.push(name.to_string());
        Ok(())
    }

    fn write_str(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(name, |w| w.write_all(text.as_bytes()))
    }

    fn write_toml<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = toml::to_string(value).map_err(|e| CliError::module("output", e))?;
        self.write_str(name, &text)
    }
}

/// Validates `config`, runs its command and writes the manifest.
pub fn run(config: &RunConfig) -> Result<Outcome, CliError> {
    config.validate()?;
    fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;
    let mut run = Run {
        config,
        outcome: Outcome::default(),
    };
    match config.command {
        Command::Solve => solve(&mut run)?,
        Command::Reference => reference(&mut run)?,
        Command::Sweep => sweep(&mut run)?,
        Command::Fit => fit(&mut run)?,
        Command::Predict => predict(&mut run)?,
        Command::Validate => validate(&mut run)?,
        Command::Plot => plot(&mut run)?,
    }
    let mut manifest = format!(
        "# brinkman {} run; feed back with --config to repeat it\n",
        config.command.name()
    );
    for o in &run.outcome.outputs {
        manifest.push_str(&format!("# output: {o}\n"));
    }
    for w in &run.outcome.warnings {
        manifest.push_str(&format!("# warning: {}\n", w.replace('\n', " ")));
    }
    manifest.push_str(&to_config_text(config));
    run.write_str(MANIFEST, &manifest)?;
    Ok(run.outcome)
}

fn mesh_and_density(c: &RunConfig) -> Result<(Mesh, brinkman_core::mesh::DensityField), CliError> {
    let mesh = build_mesh(&c.mesh_spec()).map_err(|e| CliError::module("mesh", e))?;
    let density =
        rasterize_density(&mesh, &c.geometry_spec()?).map_err(|e| CliError::module("mesh", e))?;
    Ok((mesh, density))
}

#[derive(Serialize)]
struct SolveSummary {
    converged: bool,
    iterations: usize,
    initial_norm: f64,
    residual_history: Vec<f64>,
    relative_history: Vec<f64>,
    elements: usize,
    solid_elements: usize,
    inlet_flux: f64,
    outlet_flux: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_v_solid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    interface_nodes: Option<usize>,
}

impl SolveSummary {
    fn new(mesh: &Mesh, solid: usize, state: &StateField, report: &SolveReport) -> Self {
        Self {
            converged: report.converged,
            iterations: report.iterations,
            initial_norm: report.initial_norm,
            residual_history: report.residual_history.clone(),
            relative_history: report.relative_history(),
            elements: mesh.element_count(),
            solid_elements: solid,
            inlet_flux: edge_flux(mesh, state, false),
            outlet_flux: edge_flux(mesh, state, true),
            max_v_solid: None,
            interface_nodes: None,
        }
    }

    fn lines(&self) -> Vec<String> {
        let mut v = vec![
            format!(
                "converged in {} Newton iteration(s), relative residual {:.3e}",
                self.iterations,
                self.relative_history.last().copied().unwrap_or(f64::NAN)
            ),
            format!(
                "flux in {:.10} out {:.10}",
                self.inlet_flux, self.outlet_flux
            ),
        ];
        if let Some(m) = self.max_v_solid {
            v.push(format!("max |v_solid| = {m:.6e}"));
        }
        v
    }
}

fn solve(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let (mesh, density) = mesh_and_density(c)?;
    let (state, report) = solve_flow(&mesh, &density, &c.flow, &c.brinkman, &c.settings)
        .map_err(|e| CliError::module("solver", e))?;
    let mut summary = SolveSummary::new(&mesh, density.solid_count(), &state, &report);
    summary.max_v_solid = max_solid_velocity(&state, &mesh, &density).ok();
    run.write("velocity.txt", |w| {
        write_velocity_table(w, &mesh, &state, None)
    })?;
    run.write("pressure.txt", |w| {
        write_pressure_table(w, &mesh, &state, None)
    })?;
    run.write_toml("report.toml", &summary)?;
    run.outcome.summary.extend(summary.lines());
    Ok(())
}

fn reference(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let (mesh, density) = mesh_and_density(c)?;
    let (fluid, report) = solve_body_fitted(&mesh, &density, &c.flow, &c.settings)
        .map_err(|e| CliError::module("solver", e))?;
    let mut summary = SolveSummary::new(&mesh, density.solid_count(), &fluid.state, &report);
    summary.interface_nodes = Some(fluid.interface.len());
    run.write("velocity.txt", |w| {
        write_velocity_table(w, &mesh, &fluid.state, Some(&fluid.velocity_active))
    })?;
    run.write("pressure.txt", |w| {
        write_pressure_table(w, &mesh, &fluid.state, Some(&fluid.pressure_active))
    })?;
    run.write_toml("report.toml", &summary)?;
    run.outcome.summary.extend(summary.lines());
    Ok(())
}

#[derive(Serialize)]
struct ValueAnalysis {
    param_value: f64,
    metrics_file: String,
    failed_cells: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    linear_region: Option<LinearSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plateau_alpha_max: Option<f64>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct LinearSummary {
    alpha_start: f64,
    alpha_end: f64,
    slope: f64,
    intercept: f64,
    max_residual: f64,
}

#[derive(Serialize)]
struct SweepAnalysis {
    param: String,
    values: Vec<ValueAnalysis>,
}

fn sweep(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let spec = c.sweep_spec()?;
    let total = spec.values.len() * spec.alpha_max_values.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let progress = |row: &SweepRow| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        let status = match &row.error {
            None => "ok".to_string(),
            Some(e) => format!("failed: {e}"),
        };
        eprintln!(
            "[{k}/{total}] {} = {}, alpha_max = {:e}: {status}",
            spec.param, row.param_value, row.alpha_max
        );
    };
    let table = run_sweep_with_progress(&spec, c.workers, &progress)
        .map_err(|e| CliError::module("calibration", e))?;

    for r in table.rows.iter().filter(|r| r.record.is_none()) {
        run.outcome.warnings.push(format!(
            "{} = {}, alpha_max = {:e}: {}",
            table.param,
            r.param_value,
            r.alpha_max,
            r.error.as_deref().unwrap_or("failed")
        ));
    }
    run.write("sweep.csv", |w| table.write_csv(w))?;

    let mut analysis = SweepAnalysis {
        param: table.param.to_string(),
        values: Vec::new(),
    };
    for (i, x) in table.param_values().into_iter().enumerate() {
        let records = table.records_for(x);
        let name = format!("metrics_{i:02}.csv");
        run.write(&name, |w| write_metrics_csv(w, &records))?;
        let mut va = ValueAnalysis {
            param_value: x,
            metrics_file: name,
            failed_cells: table
                .rows
                .iter()
                .filter(|r| r.param_value == x && r.record.is_none())
                .count(),
            linear_region: None,
            plateau_alpha_max: None,
            notes: Vec::new(),
        };
        match detect_linear_region(&records) {
            Ok(lr) => {
                va.linear_region = Some(LinearSummary {
                    alpha_start: records[lr.start].alpha_max,
                    alpha_end: records[lr.end].alpha_max,
                    slope: lr.slope,
                    intercept: lr.intercept,
                    max_residual: lr.max_residual,
                })
            }
            Err(e) => va.notes.push(format!("linear region: {e}")),
        }
        match detect_plateau(&records) {
            Ok(p) => va.plateau_alpha_max = p,
            Err(e) => va.notes.push(format!("plateau: {e}")),
        }
        let slope = va
            .linear_region
            .as_ref()
            .map_or("none".to_string(), |l| format!("{:.4}", l.slope));
        run.outcome.summary.push(format!(
            "{} = {}: linear slope {slope}, plateau from {}",
            table.param,
            x,
            va.plateau_alpha_max
                .map_or("none".to_string(), |a| format!("{a:e}"))
        ));
        analysis.values.push(va);
    }
    run.write_toml("analysis.toml", &analysis)?;
    run.outcome.summary.push(format!(
        "{} cell(s), {} failed",
        table.rows.len(),
        table.failure_count()
    ));
    Ok(())
}

fn read_table(path: &Path) -> Result<SweepTable, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    SweepTable::read_csv(BufReader::new(file)).map_err(|e| CliError::Input {
        path: path.into(),
        message: e.to_string(),
    })
}

fn read_model(path: &Path) -> Result<FitModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let model: FitModel = toml::from_str(&text).map_err(|e| CliError::Input {
        path: path.into(),
        message: format!("not a model file: {}", e.message()),
    })?;
    FitModel::from_coefficients(model.kind, model.coefficients.clone()).map_err(|e| {
        CliError::Input {
            path: path.into(),
            message: e.to_string(),
        }
    })?;
    Ok(model)
}

/// Model from direct coefficients or from the model file.
fn load_model(c: &RunConfig, file: Option<&Path>) -> Result<FitModel, CliError> {
    if let Some(coefs) = &c.model.coefficients {
        let kind = c.model.kind.ok_or_else(|| {
            CliError::Config("model.kind: required with model.coefficients".into())
        })?;
        return FitModel::from_coefficients(kind, coefs.clone())
            .map_err(|e| CliError::Config(format!("model.coefficients: {e}")));
    }
    let path =
        file.ok_or_else(|| CliError::Config("model.file: required for this command".into()))?;
    let model = read_model(path)?;
    if let Some(k) = c.model.kind {
        if k != model.kind {
            return Err(CliError::Config(format!(
                "model.kind: {} given but {} holds a {}",
                k.name(),
                path.display(),
                model.kind.name()
            )));
        }
    }
    Ok(model)
}

fn model_lines(model: &FitModel) -> Vec<String> {
    let coefs: Vec<String> = model
        .kind
        .coefficient_names()
        .iter()
        .zip(&model.coefficients)
        .map(|(n, v)| format!("{n} = {}", fmt_g17(*v)))
        .collect();
    vec![format!("{}: {}", model.kind.name(), coefs.join(", "))]
}

fn fit(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let path = c.model.table.as_deref().expect("validated");
    let table = read_table(path)?;
    let kind = match c.model.kind {
        Some(k) => k,
        None => table.param.model().ok_or_else(|| {
            CliError::Config(format!(
                "model.kind: no calibration law for a {} sweep",
                table.param
            ))
        })?,
    };
    let points = match (&c.model.fit_values, &c.model.fit_alphas) {
        (None, None) => default_fit_points(&table, kind),
        (values, alphas) => select_fit_points(
            &table,
            &values.clone().unwrap_or_else(|| table.param_values()),
            &alphas.clone().unwrap_or_else(|| vec![1e8, 1e20]),
        ),
    }
    .map_err(|e| CliError::module("calibration", e))?;
    if kind.param() != table.param {
        return Err(CliError::Config(format!(
            "model.kind: {} needs a {} sweep, table is a {} sweep",
            kind.name(),
            kind.param(),
            table.param
        )));
    }
    let model = fit_model(kind, &points).map_err(|e| CliError::module("calibration", e))?;
    run.outcome
        .warnings
        .extend(model.diagnostics.notes.iter().cloned());
    run.write_toml("model.toml", &model)?;
    run.outcome.summary.extend(model_lines(&model));
    run.outcome.summary.push(format!(
        "{} fit point(s), max relative residual {:.3e}",
        model.points.len(),
        model.diagnostics.max_relative_residual
    ));
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    q: f64,
    alpha_max: f64,
    alpha_star: f64,
    darcy: f64,
}

fn predict(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let model = load_model(c, c.model.file.as_deref())?;
    let x = c.model.parameter.expect("validated");
    if let Some((lo, hi)) = model.fitted_range() {
        if x < lo * (1.0 - 1e-9) || x > hi * (1.0 + 1e-9) {
            run.outcome.warnings.push(format!(
                "{} = {x} is outside the fitted range [{lo}, {hi}]",
                model.kind.param()
            ));
        }
    }
    let mut flow = c.flow;
    let mut l_c = c.l_c;
    match model.kind {
        ModelKind::Mu => flow.mu = x,
        ModelKind::Lc => l_c = x,
        ModelKind::Vc => flow.v_c = x,
        ModelKind::H => {}
    }
    let mut rows = Vec::new();
    for &q in &c.model.q {
        let a = predict_alpha_max(&model, x, q).map_err(|e| CliError::module("calibration", e))?;
        let star = alpha_star(a, flow.mu, l_c).map_err(|e| CliError::module("calibration", e))?;
        let da = darcy_number(a, flow.mu, l_c).map_err(|e| CliError::module("calibration", e))?;
        run.outcome.summary.push(format!(
            "{} = {x}, q = {q}: alpha_max = {a:.6e} (alpha* = {star:.6e}, Da = {da:.6e})",
            model.kind.param()
        ));
        rows.push(Prediction {
            q,
            alpha_max: a,
            alpha_star: star,
            darcy: da,
        });
    }
    run.write("prediction.csv", |w| {
        writeln!(w, "param_value,q,alpha_max,alpha_star,darcy")?;
        for p in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_g17(x),
                fmt_g17(p.q),
                fmt_g17(p.alpha_max),
                fmt_g17(p.alpha_star),
                fmt_g17(p.darcy)
            )?;
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct ValidationSummary {
    model: String,
    points: usize,
    max_error: f64,
    mean_error: f64,
    excluded: Vec<String>,
}

fn validate(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let table = read_table(c.model.table.as_deref().expect("validated"))?;
    let model = load_model(c, c.model.file.as_deref())?;
    let opts = ValidationOptions {
        q_values: (!c.model.q.is_empty()).then(|| c.model.q.clone()),
        held_out_only: c.model.held_out_only,
        max_v_solid: c.model.max_v_solid,
    };
    let report =
        validate_fit(&model, &table, &opts).map_err(|e| CliError::module("calibration", e))?;
    run.write("validation.csv", |w| {
        writeln!(w, "param_value,q,alpha_data,alpha_model,rel_error")?;
        for p in &report.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_g17(p.param_value),
                fmt_g17(p.q),
                fmt_g17(p.alpha_data),
                fmt_g17(p.alpha_model),
                fmt_g17(p.rel_error)
            )?;
        }
        Ok(())
    })?;
    let summary = ValidationSummary {
        model: model.kind.name().into(),
        points: report.points.len(),
        max_error: report.max_error,
        mean_error: report.mean_error,
        excluded: report.excluded.clone(),
    };
    run.write_toml("validation.toml", &summary)?;
    run.outcome.summary.push(format!(
        "{} point(s): max relative error {:.3}%, mean {:.3}%, {} excluded",
        summary.points,
        100.0 * summary.max_error,
        100.0 * summary.mean_error,
        summary.excluded.len()
    ));
    Ok(())
}

fn plot(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let table = read_table(c.plot.table.as_deref().expect("validated"))?;
    let q = if c.plot.q.is_empty() {
        DEFAULT_PLOT_Q.to_vec()
    } else {
        c.plot.q.clone()
    };
    let plot = match c.plot.kind {
        PlotKind::LoglogSweep => loglog_sweep(&table),
        kind => {
            let model = load_model(c, c.plot.model_file.as_deref())?;
            if model.kind.param() != table.param {
                return Err(CliError::Config(format!(
                    "plot.model_file: {} does not describe a {} sweep",
                    model.kind.name(),
                    table.param
                )));
            }
            fit_plot(&table, &model, &q, kind == PlotKind::ErrorBars)
        }
    };
    run.outcome.warnings.extend(plot.warnings.iter().cloned());
    let name = format!("{}.svg", c.plot.kind.name());
    run.write_str(&name, &plot.render())?;
    run.outcome.summary.push(format!(
        "{name}: {} series, {} warning(s)",
        plot.series.len(),
        plot.warnings.len()
    ));
    Ok(())
}
